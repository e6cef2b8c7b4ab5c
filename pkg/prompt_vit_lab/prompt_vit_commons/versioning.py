"""Git-style content hashes for run records."""

import hashlib
from pathlib import Path

PACKAGE_ROOT = Path(__file__).resolve().parent.parent


def git_blob_hash(content: bytes) -> str:
    """SHA-1 of a git blob object ("blob <len>\\0<content>")."""
    header = f"blob {len(content)}\0".encode()
    return hashlib.sha1(header + content).hexdigest()


def code_version_hash(root: Path = PACKAGE_ROOT) -> str:
    """
    Hash every tracked source file under the project directory.

    Returns:
        str: SHA-1 over the sorted "<blob hash> <relative path>" listing
    """
    lines = []
    for path in sorted(root.rglob("*.py")):
        if "__pycache__" in path.parts:
            continue
        lines.append(f"{git_blob_hash(path.read_bytes())} {path.relative_to(root).as_posix()}")
    return hashlib.sha1("\n".join(lines).encode()).hexdigest()
