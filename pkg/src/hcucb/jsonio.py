"""Deterministic, human-readable JSON: indented objects, one-line scalar arrays."""
from __future__ import annotations

import json
import re

_FLAT_LIST = re.compile(r"\[\s*([^\[\]{}]*?)\s*\]", re.S)


def dumps(obj) -> str:
    text = json.dumps(obj, indent=2, allow_nan=False)
    return _FLAT_LIST.sub(lambda m: "[" + ", ".join(p.strip() for p in m.group(1).split(",")) + "]"
                          if m.group(1) else "[]", text) + "\n"
