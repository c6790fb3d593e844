class ConfigurationError(ValueError):
    """Invalid parameters or configuration, detected before any work starts."""


class StructuralError(ValueError):
    """An action or index is inconsistent with the instance it is used on."""


class CapacityError(RuntimeError):
    """An exhaustive computation would exceed its enumeration bound."""


class FeasibilityError(RuntimeError):
    """A feasibility witness could not be established for a generated instance."""


class PackingError(RuntimeError):
    """Randomized packing failed to place the requested number of points."""
