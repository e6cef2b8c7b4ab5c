import json
from pathlib import Path

import numpy as np


def _to_builtin(value):
    """Make numpy / path values JSON serializable."""
    if isinstance(value, dict):
        return {str(k): _to_builtin(v) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [_to_builtin(v) for v in value]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    return value


def render_result(data) -> dict:
    return {
        "success": True,
        "error": None,
        "data": _to_builtin(data),
    }


def dumps(envelope: dict) -> str:
    return json.dumps(_to_builtin(envelope), ensure_ascii=False, indent=2, sort_keys=True)


def write_json(path: Path, payload) -> None:
    """Write JSON with a trailing LF, UTF-8."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(payload) + "\n", encoding="utf-8", newline="\n")
