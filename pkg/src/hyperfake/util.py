"""Hashing, deterministic archives and seeded RNG streams."""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .errors import CheckpointError

# Fixed zip entry timestamp so identical payloads yield byte-identical archives.
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def stable_json(obj) -> str:
    """JSON with sorted keys and no whitespace jitter; floats via repr round-trip."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def derive_rng(*entropy: int | str) -> np.random.Generator:
    """Deterministic generator derived from a tuple of ints/strings.

    Strings are folded through SHA-256 so stream names cannot collide with
    integer seeds.
    """
    words: list[int] = []
    for item in entropy:
        if isinstance(item, str):
            digest = hashlib.sha256(item.encode("utf-8")).digest()
            words.append(int.from_bytes(digest[:8], "little"))
        else:
            words.append(int(item) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))


def archive_bytes(arrays: dict[str, np.ndarray], header: dict) -> bytes:
    """Serialize named arrays plus a JSON header as one deterministic zip.

    Entries are stored uncompressed with fixed timestamps and sorted names, so
    the bytes depend only on the payload.
    """
    sink = io.BytesIO()
    with zipfile.ZipFile(sink, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("header.json", date_time=_ZIP_EPOCH)
        zf.writestr(info, stable_json(header).encode("utf-8"))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.save(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"arrays/{name}.npy", date_time=_ZIP_EPOCH)
            zf.writestr(info, buf.getvalue())
    return sink.getvalue()


def write_array_archive(path: str | Path, arrays: dict[str, np.ndarray], header: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(archive_bytes(arrays, header))


def read_array_archive(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Inverse of :func:`write_array_archive`. Raises CheckpointError on damage."""
    try:
        with zipfile.ZipFile(path, "r") as zf:
            header = json.loads(zf.read("header.json").decode("utf-8"))
            arrays: dict[str, np.ndarray] = {}
            for entry in zf.namelist():
                if entry.startswith("arrays/") and entry.endswith(".npy"):
                    name = entry[len("arrays/") : -len(".npy")]
                    arrays[name] = np.load(io.BytesIO(zf.read(entry)), allow_pickle=False)
    except (zipfile.BadZipFile, KeyError, ValueError, OSError) as exc:
        raise CheckpointError(f"cannot read archive {path}: {exc}") from exc
    return arrays, header
