"""Loading IFS definitions from JSON files of the form
``{"maps": [{"nodes": [[x, y], ...]}, ...], "probs": [...]}``."""

from __future__ import annotations

import json
import re
from pathlib import Path

from .core import IfsSystem, PiecewiseLinearMap, am2
from .errors import ValidationError

BUILTINS = {"am2": am2}


def _line(text: str, pos: int) -> int:
    return text.count("\n", 0, pos) + 1


def _key_line(text: str, key: str) -> int:
    m = re.search(rf'"{key}"\s*:', text)
    return _line(text, m.start()) if m else 1


def _element_lines(text: str, key: str) -> list[int]:
    """Line of each element of the array stored under ``key`` (text already parsed once)."""
    m = re.search(rf'"{key}"\s*:\s*\[', text)
    if not m:
        return []
    dec = json.JSONDecoder()
    ws = re.compile(r"[\s,]*")
    pos = ws.match(text, m.end()).end()
    lines = []
    while pos < len(text) and text[pos] != "]":
        lines.append(_line(text, pos))
        _, pos = dec.raw_decode(text, pos)
        pos = ws.match(text, pos).end()
    return lines


def parse_system(text: str, source: str = "<string>") -> IfsSystem:
    """Build an IfsSystem, reporting the offending line for every rejected field."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError(f"{source}:{e.lineno}:{e.colno}: invalid JSON: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ValidationError(f"{source}:1: top level must be an object with 'maps' and 'probs'")
    probs_line = _key_line(text, "probs")
    maps_line = _key_line(text, "maps")
    maps = doc.get("maps")
    if not isinstance(maps, list):
        raise ValidationError(f"{source}:{maps_line}: 'maps' must be a list")
    map_lines = _element_lines(text, "maps")
    parsed = []
    for i, m in enumerate(maps):
        line = map_lines[i] if i < len(map_lines) else maps_line
        if not isinstance(m, dict) or "nodes" not in m:
            raise ValidationError(f"{source}:{line}: map {i + 1} needs a 'nodes' list")
        try:
            parsed.append(PiecewiseLinearMap([tuple(float(v) for v in node) for node in m["nodes"]]))
        except (TypeError, ValueError) as e:
            raise ValidationError(f"{source}:{line}: map {i + 1}: {e}") from None
    probs = doc.get("probs")
    if not isinstance(probs, list):
        raise ValidationError(f"{source}:{probs_line}: 'probs' must be a list")
    try:
        return IfsSystem(parsed, [float(p) for p in probs])
    except (TypeError, ValueError) as e:
        raise ValidationError(f"{source}:{probs_line}: {e}") from None


def load_system(name: str | Path) -> IfsSystem:
    """A builtin name (``am2``) or a path to a system file."""
    if str(name) in BUILTINS:
        return BUILTINS[str(name)]()
    path = Path(name)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ValidationError(f"cannot read system file {path}: {e.strerror}") from None
    return parse_system(text, str(path))


def system_to_json(system: IfsSystem) -> str:
    return json.dumps(system.to_dict(), indent=2) + "\n"
