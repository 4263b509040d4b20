"""BOLD volumes, grey-matter masks, file formats and a synthetic phantom.

Volumes are stored as ``(T, X, Y, Z)`` float64 arrays; masks as ``(X, Y, Z)``
boolean arrays. All coordinates are voxel indices, no world-space affine.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .rng import Rng


class VolumeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Volume4D:
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 4 or min(arr.shape) < 1:
            raise VolumeError(f"Volume4D needs 4 positive dims, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise VolumeError("Volume4D values must be finite")
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return tuple(int(d) for d in self.data.shape)

    @property
    def spatial_dims(self) -> tuple[int, int, int]:
        return self.dims[1:]

    @property
    def T(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, Volume4D) and self.data.shape == other.data.shape and bool(
            np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class Mask3D:
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data).astype(bool)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise VolumeError(f"Mask3D needs 3 positive dims, got {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.data.shape)

    @property
    def count(self) -> int:
        return int(self.data.sum())

    def __eq__(self, other) -> bool:
        return isinstance(other, Mask3D) and np.array_equal(self.data, other.data)


# --- NIfTI-1 ------------------------------------------------------------------

class NiftiError(VolumeError):
    """A NIfTI-1 parse failure; ``field`` names the offending header field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class NiftiFormError(NiftiError):
    pass


class NiftiDatatypeError(NiftiError):
    pass


class NiftiDimError(NiftiError):
    pass


class NiftiTruncatedError(NiftiError):
    pass


_DTYPES = {2: ("u1", 8), 4: ("i2", 16), 16: ("f4", 32), 64: ("f8", 64)}


@dataclass
class NiftiHeader:
    byteorder: str
    dims: tuple[int, ...]
    datatype: int
    bitpix: int
    vox_offset: int
    scl_slope: float
    scl_inter: float
    pixdim: tuple[float, ...]
    descrip: str = ""

    def summary(self) -> dict:
        return {
            "byteorder": "little" if self.byteorder == "<" else "big",
            "dims": list(self.dims),
            "datatype": self.datatype,
            "bitpix": self.bitpix,
            "vox_offset": self.vox_offset,
            "scl_slope": self.scl_slope,
            "scl_inter": self.scl_inter,
            "pixdim": list(self.pixdim),
            "descrip": self.descrip,
        }


def parse_nifti_header(buf: bytes) -> NiftiHeader:
    if len(buf) < 348:
        raise NiftiTruncatedError("sizeof_hdr", f"file has {len(buf)} bytes, header needs 348")
    if struct.unpack_from("<i", buf, 0)[0] == 348:
        bo = "<"
    elif struct.unpack_from(">i", buf, 0)[0] == 348:
        bo = ">"
    else:
        raise NiftiFormError("sizeof_hdr", "not 348 in either byte order")
    magic = buf[344:348]
    if magic == b"ni1\x00":
        raise NiftiFormError("magic", "two-file (.hdr/.img) NIfTI is not supported")
    if magic != b"n+1\x00":
        raise NiftiFormError("magic", f"expected b'n+1\\x00', got {magic!r}")
    dim = struct.unpack_from(bo + "8h", buf, 40)
    if dim[0] not in (3, 4):
        raise NiftiDimError("dim", f"dim[0]={dim[0]} not in {{3, 4}}")
    dims = tuple(int(d) for d in dim[1:dim[0] + 1])
    if any(d < 1 for d in dims):
        raise NiftiDimError("dim", f"non-positive extent in {dims}")
    datatype, bitpix = struct.unpack_from(bo + "hh", buf, 70)
    if datatype not in _DTYPES:
        raise NiftiDatatypeError("datatype", f"unsupported datatype code {datatype}")
    if bitpix != _DTYPES[datatype][1]:
        raise NiftiDatatypeError("bitpix", f"bitpix {bitpix} does not match datatype {datatype}")
    (vox_offset,) = struct.unpack_from(bo + "f", buf, 108)
    if not np.isfinite(vox_offset) or vox_offset < 348 or vox_offset != int(vox_offset):
        raise NiftiFormError("vox_offset", f"invalid vox_offset {vox_offset}")
    slope, inter = struct.unpack_from(bo + "ff", buf, 112)
    if not (np.isfinite(slope) and np.isfinite(inter)):
        raise NiftiFormError("scl_slope", "non-finite scaling")
    pixdim = struct.unpack_from(bo + "8f", buf, 76)
    descrip = buf[148:228].split(b"\x00", 1)[0].decode("latin-1")
    return NiftiHeader(bo, dims, datatype, bitpix, int(vox_offset), float(slope), float(inter),
                       tuple(float(p) for p in pixdim), descrip)


def read_nifti_bytes(buf: bytes) -> tuple[np.ndarray, NiftiHeader]:
    hdr = parse_nifti_header(buf)
    code, bits = _DTYPES[hdr.datatype]
    count = int(np.prod(hdr.dims, dtype=np.int64))
    nbytes = count * bits // 8
    if hdr.vox_offset + nbytes > len(buf):
        raise NiftiTruncatedError(
            "vox_offset", f"payload needs {nbytes} bytes at offset {hdr.vox_offset}, file has {len(buf)}"
        )
    raw = np.frombuffer(buf, dtype=np.dtype(hdr.byteorder + code), count=count, offset=hdr.vox_offset)
    arr = raw.astype(np.float64)
    if hdr.scl_slope != 0.0:
        arr = arr * hdr.scl_slope + hdr.scl_inter
    if not np.all(np.isfinite(arr)):
        raise NiftiFormError("scl_slope", "scaled voxel values are not finite")
    # NIfTI stores x fastest; reverse the axes into (t, x, y, z) / (x, y, z)
    arr = arr.reshape(tuple(reversed(hdr.dims))).transpose()
    if len(hdr.dims) == 4:
        arr = np.ascontiguousarray(np.moveaxis(arr, 3, 0))
    else:
        arr = np.ascontiguousarray(arr)
    return arr, hdr


def load_nifti(path: str | Path) -> tuple[Volume4D | np.ndarray, dict]:
    """Read a single-file uncompressed ``.nii``.

    4-D files come back as :class:`Volume4D`; 3-D files as a float64
    ``(X, Y, Z)`` array (wrap with :func:`mask_from_array` for a mask).
    """
    arr, hdr = read_nifti_bytes(Path(path).read_bytes())
    if arr.ndim == 4:
        return Volume4D(arr), hdr.summary()
    return arr, hdr.summary()


def mask_from_array(arr: np.ndarray) -> Mask3D:
    return Mask3D(np.asarray(arr) != 0)


def build_nifti_bytes(
    arr: np.ndarray,
    datatype: int = 16,
    byteorder: str = "<",
    scl_slope: float = 0.0,
    scl_inter: float = 0.0,
    magic: bytes = b"n+1\x00",
) -> bytes:
    """Encode a (X, Y, Z) or (T, X, Y, Z) array as a minimal NIfTI-1 file."""
    arr = np.asarray(arr)
    if arr.ndim == 4:
        spatial = np.moveaxis(arr, 0, 3)
    else:
        spatial = arr
    dims = spatial.shape
    code, bits = _DTYPES[datatype]
    hdr = bytearray(352)
    bo = byteorder
    struct.pack_into(bo + "i", hdr, 0, 348)
    dim = [len(dims), *dims] + [1] * (7 - len(dims))
    struct.pack_into(bo + "8h", hdr, 40, *dim)
    struct.pack_into(bo + "hh", hdr, 70, datatype, bits)
    struct.pack_into(bo + "8f", hdr, 76, 1.0, *([1.0] * 7))
    struct.pack_into(bo + "f", hdr, 108, 352.0)
    struct.pack_into(bo + "ff", hdr, 112, scl_slope, scl_inter)
    hdr[344:348] = magic
    payload = np.ascontiguousarray(spatial.transpose()).astype(np.dtype(bo + code)).tobytes()
    return bytes(hdr) + payload


# --- raw ABFV format ------------------------------------------------------------

RAW_MAGIC = b"ABFV"
RAW_VERSION = 1
_RAW_HEADER = struct.Struct("<4sI4Q")


def save_raw(volume: Volume4D | np.ndarray, path: str | Path) -> None:
    arr = volume.data if isinstance(volume, Volume4D) else np.asarray(volume, dtype=np.float64)
    if arr.ndim != 4 or min(arr.shape, default=0) < 1:
        raise VolumeError(f"cannot save volume with dims {arr.shape}")
    head = _RAW_HEADER.pack(RAW_MAGIC, RAW_VERSION, *arr.shape)
    Path(path).write_bytes(head + np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_raw(path: str | Path) -> Volume4D:
    buf = Path(path).read_bytes()
    if len(buf) < _RAW_HEADER.size:
        raise VolumeError(f"length mismatch: {len(buf)} bytes is shorter than the header")
    magic, version, *dims = _RAW_HEADER.unpack_from(buf, 0)
    if magic != RAW_MAGIC:
        raise VolumeError(f"magic mismatch: {magic!r}")
    if version != RAW_VERSION:
        raise VolumeError(f"unsupported raw version {version}")
    expected = _RAW_HEADER.size + 8 * int(np.prod(dims, dtype=np.int64))
    if len(buf) != expected:
        raise VolumeError(f"length mismatch: expected {expected} bytes, got {len(buf)}")
    arr = np.frombuffer(buf, dtype="<f8", offset=_RAW_HEADER.size).reshape(dims).astype(np.float64)
    return Volume4D(arr)


def save_mask(mask: Mask3D, path: str | Path) -> None:
    """Masks travel as single-frame ABFV files holding 0/1."""
    save_raw(mask.data[None].astype(np.float64), path)


def load_mask(path: str | Path) -> Mask3D:
    path = Path(path)
    if path.suffix == ".nii":
        arr, _ = load_nifti(path)
        if isinstance(arr, Volume4D):
            raise VolumeError("mask file must be 3-D")
        return mask_from_array(arr)
    vol = load_raw(path)
    if vol.T != 1:
        raise VolumeError(f"mask file has {vol.T} frames, expected 1")
    return mask_from_array(vol.data[0])


# --- boundary distance ----------------------------------------------------------

def boundary_voxels(mask: Mask3D) -> np.ndarray:
    """(n, 3) coordinates of GM voxels with a non-GM face neighbour.

    Voxels outside the grid count as non-GM.
    """
    m = np.pad(mask.data, 1, constant_values=False)
    core = m[1:-1, 1:-1, 1:-1]
    interior = (
        m[:-2, 1:-1, 1:-1] & m[2:, 1:-1, 1:-1]
        & m[1:-1, :-2, 1:-1] & m[1:-1, 2:, 1:-1]
        & m[1:-1, 1:-1, :-2] & m[1:-1, 1:-1, 2:]
    )
    return np.argwhere(core & ~interior)


class BoundaryIndex:
    """Nearest-boundary-voxel queries against a fixed mask."""

    def __init__(self, mask: Mask3D):
        pts = boundary_voxels(mask)
        if len(pts) == 0:
            raise VolumeError("mask is empty")
        self.points = pts
        self._tree = cKDTree(pts.astype(np.float64))

    def distance(self, points) -> np.ndarray:
        q = np.atleast_2d(np.asarray(points, dtype=np.float64))
        _, idx = self._tree.query(q)
        # recompute from the winning voxel so the value does not depend on
        # the tree's internal summation order
        diff = self.points[idx] - q
        return np.sqrt(np.sum(diff * diff, axis=-1))


def gm_boundary_distance(mask: Mask3D, point) -> float:
    """Euclidean distance (voxels) from ``point`` to the nearest boundary voxel."""
    return float(BoundaryIndex(mask).distance(point)[0])


# --- phantom ------------------------------------------------------------------

class PhantomSpecError(ValueError):
    pass


@dataclass(frozen=True)
class PhantomSpec:
    """Ellipsoidal-shell brain with ``n_regions`` planted communities.

    ``outer_radii`` are the semi-axes of the outer surface; the shell is
    ``thickness`` voxels deep. For ``label == 1`` the latents of each pair in
    ``planted_pairs`` are mixed with weight ``class_effect``.
    """

    dims: tuple[int, int, int] = (40, 48, 40)
    outer_radii: tuple[float, float, float] = (17.0, 21.0, 16.0)
    thickness: float = 5.0
    T: int = 120
    n_regions: int = 8
    class_effect: float = 0.8
    noise_sigma: float = 1.0
    seed: int = 0
    label: int = 0
    baseline: float = 100.0
    planted_pairs: tuple[tuple[int, int], ...] = field(default=((0, 1), (2, 3)))

    def validate(self) -> None:
        if self.class_effect < 0:
            raise PhantomSpecError("class_effect must be >= 0")
        if self.noise_sigma <= 0:
            raise PhantomSpecError("noise_sigma must be > 0")
        if self.n_regions < 2:
            raise PhantomSpecError("n_regions must be >= 2")
        if self.T < 2:
            raise PhantomSpecError("T must be >= 2")
        if self.label not in (0, 1):
            raise PhantomSpecError("label must be 0 or 1")
        for a, b in self.planted_pairs:
            if not (0 <= a < self.n_regions and 0 <= b < self.n_regions and a != b):
                raise PhantomSpecError(f"bad planted pair {(a, b)}")


def shell_mask(spec: PhantomSpec) -> Mask3D:
    X, Y, Z = spec.dims
    c = (np.array(spec.dims, dtype=np.float64) - 1.0) / 2.0
    gx, gy, gz = np.meshgrid(np.arange(X), np.arange(Y), np.arange(Z), indexing="ij")
    rel = [gx - c[0], gy - c[1], gz - c[2]]
    outer = sum((r / a) ** 2 for r, a in zip(rel, spec.outer_radii))
    inner_radii = [a - spec.thickness for a in spec.outer_radii]
    if min(inner_radii) > 0:
        inner = sum((r / a) ** 2 for r, a in zip(rel, inner_radii))
        m = (outer <= 1.0) & (inner > 1.0)
    else:
        m = outer <= 1.0
    if not m.any():
        raise PhantomSpecError("degenerate geometry: the shell contains no voxels")
    if m.all():
        raise PhantomSpecError("degenerate geometry: the shell fills the whole grid")
    return Mask3D(m)


def _sphere_directions(n: int) -> np.ndarray:
    # Fibonacci lattice: fixed, evenly spread region seeds
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + 5.0**0.5) * i
    return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)


def region_map(spec: PhantomSpec, mask: Mask3D | None = None) -> np.ndarray:
    """Integer map: region id in [0, n_regions) for GM voxels, -1 elsewhere.

    Regions are angular Voronoi cells around the shell centre, so each is a
    contiguous patch of cortex. Geometry only; independent of the seed.
    """
    mask = mask if mask is not None else shell_mask(spec)
    c = (np.array(spec.dims, dtype=np.float64) - 1.0) / 2.0
    coords = np.argwhere(mask.data).astype(np.float64)
    rel = (coords - c) / np.array(spec.outer_radii)
    norms = np.linalg.norm(rel, axis=1, keepdims=True)
    rel = rel / np.where(norms == 0, 1.0, norms)
    ids = np.argmax(rel @ _sphere_directions(spec.n_regions).T, axis=1)
    out = np.full(spec.dims, -1, dtype=np.int64)
    out[mask.data] = ids
    return out


def region_frequencies(spec: PhantomSpec) -> np.ndarray:
    """(n_regions, 2) frequencies in cycles per frame.

    Every region gets its own pair of whole-cycle frequencies, all distinct,
    so different regions' sinusoids are orthogonal over the T frames.
    """
    r = np.arange(spec.n_regions)
    cycles = np.stack([2 + r, 3 + spec.n_regions + r], axis=1)
    return cycles / spec.T


def region_latents(spec: PhantomSpec, rng: Rng) -> np.ndarray:
    """(n_regions, T) unit-variance latent time courses for one subject.

    Frequencies are fixed per region; phases and the noise term vary with
    the subject seed.
    """
    t = np.arange(spec.T, dtype=np.float64)
    freqs = region_frequencies(spec)
    lat = np.empty((spec.n_regions, spec.T))
    for r in range(spec.n_regions):
        p1 = 2.0 * np.pi * rng.random()
        p2 = 2.0 * np.pi * rng.random()
        lat[r] = np.sin(2 * np.pi * freqs[r, 0] * t + p1) + 0.5 * np.sin(2 * np.pi * freqs[r, 1] * t + p2)
    lat += 0.5 * rng.numpy().standard_normal(lat.shape)
    lat -= lat.mean(axis=1, keepdims=True)
    lat /= lat.std(axis=1, keepdims=True)
    if spec.label == 1 and spec.class_effect > 0:
        c = spec.class_effect
        for a, b in spec.planted_pairs:
            lat[b] = (lat[b] + c * lat[a]) / np.sqrt(1.0 + c * c)
    return lat


def make_phantom(spec: PhantomSpec) -> tuple[Volume4D, Mask3D, int]:
    """Synthesize one subject: (volume, GM mask, label)."""
    spec.validate()
    mask = shell_mask(spec)
    regions = region_map(spec, mask)
    rng = Rng(spec.seed)
    lat = region_latents(spec, rng)
    noise = rng.numpy().standard_normal((spec.T, *spec.dims))
    data = spec.baseline + spec.noise_sigma * noise
    gm = mask.data
    data[:, gm] += lat[regions[gm]].T
    return Volume4D(data), mask, spec.label
