"""
On-disk artifacts: the CYQW field/eigenbasis container, content
fingerprints, deterministic CSV tables and the snapshot writer lane.
"""
import hashlib
import json
import logging
import queue
import struct
import threading
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .errors import ContainerFormatError, CyclomassError
from .spectral import Field3D, Grid1D, Grid2D

if TYPE_CHECKING:
    from .confinement import EigenBasis

logger = logging.getLogger(__name__)

CACHE_DIR = Path.home() / ".cyclomass_cache"

MAGIC = b"CYQW"
VERSION = 1
HEADER_SIZE = 256
FINGERPRINT_SIZE = 64

TAG_GRID = 0
TAG_MODE = 1
TAG_BASIS = 2
XY_TAGS = {"physical": 0, "fourier": 1}

# magic, version, representation, xy space, n_x, n_y, n_third, n_z,
# L_x, L_y, L_z, t, fingerprint
_HEADER = struct.Struct("<4sHBBIIIIdddd64s")

CSV_FLOAT_FORMAT = "%.17g"


def ensure_cache_dir(cache_dir: Path = CACHE_DIR) -> Path:
    """Ensure the cache directory exists."""
    cache_dir = Path(cache_dir)
    if not cache_dir.exists():
        cache_dir.mkdir(parents=True)
    return cache_dir


def fingerprint(*arrays: np.ndarray, **params) -> str:
    """
    sha256 over array bytes (shape and dtype included) and sorted params.
    """
    h = hashlib.sha256()
    for arr in arrays:
        arr = np.ascontiguousarray(arr)
        h.update(str(arr.shape).encode())
        h.update(arr.dtype.str.encode())
        h.update(arr.tobytes())
    h.update(json.dumps(params, sort_keys=True, default=str).encode())
    return h.hexdigest()


def file_fingerprint(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _pack_header(rep_tag: int, xy_tag: int, dims: Tuple[int, int, int, int],
                 lengths: Tuple[float, float, float], t: float, fp: str) -> bytes:
    head = _HEADER.pack(MAGIC, VERSION, rep_tag, xy_tag, *dims, *lengths, t,
                        bytes.fromhex(fp)[:32].ljust(FINGERPRINT_SIZE, b"\0"))
    return head.ljust(HEADER_SIZE, b"\0")


def _unpack_header(raw: bytes):
    if len(raw) < HEADER_SIZE:
        raise ContainerFormatError("truncated header")
    fields = _HEADER.unpack_from(raw)
    if fields[0] != MAGIC:
        raise ContainerFormatError(f"bad magic {fields[0]!r}")
    if fields[1] != VERSION:
        raise ContainerFormatError(f"unsupported container version {fields[1]}")
    return fields


def write_field(path: Path, field: Field3D, fp: str = "") -> Path:
    """
    Write a field as little-endian complex128, row-major with the z/mode
    axis fastest.
    """
    path = Path(path)
    rep_tag = TAG_GRID if field.representation == "grid" else TAG_MODE
    n_x, n_y, n_third = field.values.shape
    fp = fp or fingerprint(field.values)
    head = _pack_header(rep_tag, XY_TAGS[field.xy_space], (n_x, n_y, n_third, field.grid1d.n),
                        (field.grid2d.length_x, field.grid2d.length_y, field.grid1d.half_length),
                        field.t, fp)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(field.values, dtype="<c16").tobytes())
    return path


def read_field(path: Path, basis: Optional["EigenBasis"] = None) -> Field3D:
    raw = Path(path).read_bytes()
    _, _, rep_tag, xy_tag, n_x, n_y, n_third, n_z, lx, ly, lz, t, _ = _unpack_header(raw)
    if rep_tag not in (TAG_GRID, TAG_MODE):
        raise ContainerFormatError(f"{path} does not hold a field (tag {rep_tag})")
    payload = np.frombuffer(raw, dtype="<c16", offset=HEADER_SIZE)
    if payload.size != n_x * n_y * n_third:
        raise ContainerFormatError(f"payload has {payload.size} values, header says {n_x * n_y * n_third}")
    xy_space = {v: k for k, v in XY_TAGS.items()}[xy_tag]
    return Field3D(
        payload.reshape(n_x, n_y, n_third).astype(complex),
        Grid2D(lx, ly, n_x, n_y),
        Grid1D(lz, n_z),
        representation="grid" if rep_tag == TAG_GRID else "mode",
        basis=basis,
        xy_space=xy_space,
        t=t,
    )


def write_basis(path: Path, E: np.ndarray, chi: np.ndarray, grid: Grid1D, fp: str) -> Path:
    """Eigenbasis cache: E (float64) followed by chi, same framing as fields."""
    P, n_z = chi.shape
    head = _pack_header(TAG_BASIS, 0, (0, 0, P, n_z), (0.0, 0.0, grid.half_length), 0.0, fp)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(E, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(chi, dtype="<f8").tobytes())
    return Path(path)


def read_basis(path: Path, fp: str) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """
    Return (E, chi) if the cache exists and its fingerprint matches, else None.
    """
    path = Path(path)
    if not path.exists():
        return None
    raw = path.read_bytes()
    try:
        fields = _unpack_header(raw)
    except ContainerFormatError as e:
        logger.warning("eigenbasis cache %s unreadable (%s), rebuilding", path, e)
        return None
    tag, P, n_z, stored = fields[2], fields[6], fields[7], fields[12]
    if tag != TAG_BASIS or stored[:32] != bytes.fromhex(fp)[:32]:
        return None
    body = np.frombuffer(raw, dtype="<f8", offset=HEADER_SIZE)
    if body.size != P + P * n_z:
        return None
    return body[:P].copy(), body[P:].reshape(P, n_z).copy()


def write_frame(frame: pd.DataFrame, path: Path) -> Path:
    """CSV with full float precision so repeated runs compare bitwise."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


class SnapshotWriter:
    """
    Single writer thread fed by a bounded queue. `put` blocks when the
    queue is full, so the producer stalls instead of dropping frames.
    """

    def __init__(self, out_dir: Path, maxsize: int = 4):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.written: Dict[str, str] = {}
        self.errors: List[str] = []
        self._queue: "queue.Queue" = queue.Queue(maxsize=maxsize)
        self._thread = threading.Thread(target=self._run, name="snapshot-writer", daemon=True)
        self._thread.start()

    def _run(self):
        while True:
            item = self._queue.get()
            try:
                if item is None:
                    return
                name, field = item
                path = write_field(self.out_dir / name, field)
                self.written[str(path)] = file_fingerprint(path)
            except Exception as e:
                logger.error("snapshot write failed: %s", e)
                self.errors.append(str(e))
            finally:
                self._queue.task_done()

    def put(self, name: str, field: Field3D) -> None:
        if not self._thread.is_alive():
            raise CyclomassError("snapshot writer is closed")
        self._queue.put((name, field))

    def close(self) -> Dict[str, str]:
        if self._thread.is_alive():
            self._queue.put(None)
            self._thread.join()
        return self.written

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
