"""
File helpers: atomic writes so readers never observe partially written files.
"""
import os
import tempfile
from pathlib import Path
from typing import Union


def atomic_write_text(path: Union[str, Path], content: str) -> Path:
    """
    Write text to a temporary file in the target directory, then rename it over the target.

    Args:
        path: Destination file path
        content: Full file content (written as UTF-8 with "\\n" newlines)

    Returns:
        The destination path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=str(path.parent))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(content)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise
    return path


def read_text(path: Union[str, Path]) -> str:
    """Read a UTF-8 text file."""
    with open(path, "r", encoding="utf-8") as handle:
        return handle.read()
