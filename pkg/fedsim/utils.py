import hashlib
import json
import logging
import os
from typing import Any

import numpy as np

# The core fedsim logger
LOGGER = logging.getLogger("fedsim")


def git_blob_hash(path: "str | os.PathLike[str]") -> str:
    """The hash git would give the file's contents as a blob"""
    with open(path, "rb") as f:
        content = f.read()

    header = f"blob {len(content)}\0".encode()
    return hashlib.sha1(header + content).hexdigest()


def json_hash(value: Any) -> str:
    """A stable content hash of a JSON-serializable value"""
    encoded = json.dumps(value, sort_keys=True, separators=(",", ":")).encode()
    header = f"blob {len(encoded)}\0".encode()
    return hashlib.sha1(header + encoded).hexdigest()


def array_digest(*arrays: np.ndarray, names: tuple = ()) -> str:
    """SHA-256 over the raw bytes of arrays plus any vocabularies"""
    digest = hashlib.sha256()
    for array in arrays:
        contiguous = np.ascontiguousarray(array)
        digest.update(str(contiguous.dtype).encode())
        digest.update(str(contiguous.shape).encode())
        digest.update(contiguous.tobytes())

    for vocabulary in names:
        digest.update("\x1f".join(vocabulary).encode())
        digest.update(b"\x1e")

    return digest.hexdigest()


def ensure_dir(path: "str | os.PathLike[str]") -> str:
    os.makedirs(path, exist_ok=True)
    return str(path)
