"""Patch sampling, GM-restricted time series and patch-to-anchor FC.

A sampled patch is indexed by its centre ``p`` and half-width ``h = s / 2``;
it holds the voxels with ``|v - p| < h`` on every axis, clipped to the grid.
On the integer lattice this strict inequality gives a cube of side ``s - 1``
for even ``s`` and ``s`` for odd ``s``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .anchors import AnchorError, AnchorSet, SupportTable
from .rng import Rng
from .volume import Mask3D, Volume4D


class SamplingError(ValueError):
    pass


class InvalidPatchError(SamplingError):
    pass


# --- voxel sets and series ------------------------------------------------

def patch_radius(s: float) -> int:
    """Largest integer offset d with d < s / 2."""
    h = s / 2.0
    return int(math.ceil(h)) - 1


def patch_slices(p: Sequence[int], s: float, dims: Sequence[int]) -> tuple[slice, slice, slice]:
    r = patch_radius(s)
    return tuple(slice(max(0, c - r), min(d, c + r + 1)) for c, d in zip(p, dims))


def patch_voxels(p: Sequence[int], s: float, dims: Sequence[int]) -> np.ndarray:
    """(n, 3) voxel coordinates of the clipped cube around centre ``p``."""
    sl = patch_slices(p, s, dims)
    g = np.meshgrid(*(np.arange(a.start, a.stop) for a in sl), indexing="ij")
    return np.stack([x.reshape(-1) for x in g], axis=1)


def mean_time_series(volume: Volume4D, voxels: np.ndarray) -> np.ndarray:
    voxels = np.asarray(voxels, dtype=np.int64).reshape(-1, 3)
    if len(voxels) == 0:
        raise SamplingError("mean over an empty voxel set")
    d = volume.data
    return d[:, voxels[:, 0], voxels[:, 1], voxels[:, 2]].mean(axis=1)


def patch_series(volume: Volume4D, mask: Mask3D, p: Sequence[int], s: float) -> np.ndarray:
    """Mean series over the GM voxels of the patch centred at ``p``."""
    sl = patch_slices(p, s, mask.dims)
    m = mask.data[sl]
    n = int(m.sum())
    if n == 0:
        raise InvalidPatchError(f"patch at {tuple(p)} (s={s}) has no GM voxel")
    block = volume.data[(slice(None),) + sl]
    return block[:, m].mean(axis=1)


def anchor_series(volume: Volume4D, anchors: AnchorSet, mask: Mask3D) -> np.ndarray:
    """(H, T) mean series over each anchor's GM-restricted labelled voxels."""
    H = anchors.H
    lab = anchors.label_image.reshape(-1).astype(np.int64)
    keep = np.flatnonzero((lab > 0) & mask.data.reshape(-1))
    lab = lab[keep] - 1
    counts = np.bincount(lab, minlength=H)
    if np.any(counts == 0):
        raise AnchorError(f"anchor {int(np.argmin(counts))} has no GM-labelled voxel")
    order = np.argsort(lab, kind="stable")
    flat = volume.data.reshape(volume.T, -1)[:, keep[order]]
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    sums = np.add.reduceat(flat, starts, axis=1)
    return (sums / counts).T


# --- correlation ----------------------------------------------------------

def _degenerate(centered: np.ndarray, raw: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.linalg.norm(raw, axis=-1), 1.0)
    return np.linalg.norm(centered, axis=-1) <= 1e-12 * scale


def pearson_flagged(u, v) -> tuple[float, bool]:
    """Pearson r plus a flag that is True when either series is constant
    (r is then reported as 0)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise SamplingError("pearson needs two 1-D series of equal length")
    if u.size < 2:
        raise SamplingError("pearson needs T >= 2")
    uc = u - u.mean()
    vc = v - v.mean()
    if _degenerate(uc, u) or _degenerate(vc, v):
        return 0.0, True
    r = float(uc @ vc / (np.linalg.norm(uc) * np.linalg.norm(vc)))
    return min(1.0, max(-1.0, r)), False


def pearson(u, v) -> float:
    return pearson_flagged(u, v)[0]


def correlation_matrix(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise Pearson correlations between ``a`` (N, T) and ``b`` (H, T).

    Returns ``(F, degenerate)`` where ``degenerate[i, j]`` marks entries
    forced to 0 because a series was constant.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise SamplingError(f"series lengths differ: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[1] < 2:
        raise SamplingError("correlation needs T >= 2")
    ac = a - a.mean(axis=1, keepdims=True)
    bc = b - b.mean(axis=1, keepdims=True)
    da = _degenerate(ac, a)
    db = _degenerate(bc, b)
    na = np.where(da, 1.0, np.linalg.norm(ac, axis=1))
    nb = np.where(db, 1.0, np.linalg.norm(bc, axis=1))
    F = (ac / na[:, None]) @ (bc / nb[:, None]).T
    bad = da[:, None] | db[None, :]
    F[bad] = 0.0
    np.clip(F, -1.0, 1.0, out=F)
    return F, bad


# --- sampling -------------------------------------------------------------

@dataclass
class SampledPatch:
    p: tuple[int, int, int]
    s: float
    series: np.ndarray
    pos: tuple[float, float, float]

    def representation(self) -> np.ndarray:
        """Position-aware vector ``[pos, series]`` of length 3 + T."""
        return np.concatenate([np.asarray(self.pos), self.series])


def normalized_position(p: Sequence[int], dims: Sequence[int]) -> tuple[float, float, float]:
    return tuple(float(c) / float(d) for c, d in zip(p, dims))


def sample_patches(
    volume: Volume4D,
    mask: Mask3D,
    N: int,
    s: float,
    tau_sample: int = 1,
    rng: Rng | None = None,
    max_attempts: int | None = None,
    table: SupportTable | None = None,
) -> list[SampledPatch]:
    """Draw centres uniformly over the grid until ``N`` have GM support >= tau."""
    if N < 1:
        raise SamplingError("N must be >= 1")
    if tau_sample < 1:
        raise SamplingError("tau_sample must be >= 1")
    if volume.spatial_dims != mask.dims:
        raise SamplingError(f"volume dims {volume.spatial_dims} != mask dims {mask.dims}")
    rng = rng or Rng(0)
    table = table or SupportTable(mask)
    max_attempts = 1000 * N if max_attempts is None else max_attempts
    dims = mask.dims
    r = patch_radius(s)
    out: list[SampledPatch] = []
    attempts = 0
    while len(out) < N:
        if attempts >= max_attempts:
            raise SamplingError(
                f"only {len(out)}/{N} valid patches after {attempts} draws "
                f"(acceptance rate {len(out) / max(attempts, 1):.4g})"
            )
        attempts += 1
        p = (rng.randbelow(dims[0]), rng.randbelow(dims[1]), rng.randbelow(dims[2]))
        if table.box((p[0] - r, p[1] - r, p[2] - r), (p[0] + r + 1, p[1] + r + 1, p[2] + r + 1)) < tau_sample:
            continue
        out.append(SampledPatch(p, s, patch_series(volume, mask, p, s), normalized_position(p, dims)))
    return out


def fc_matrix(patches: Sequence[SampledPatch], anchor_ts: np.ndarray) -> np.ndarray:
    """F[i, j] = Pearson(patch i series, anchor j series)."""
    return fc_matrix_flagged(patches, anchor_ts)[0]


def fc_matrix_flagged(patches: Sequence[SampledPatch], anchor_ts: np.ndarray):
    series = np.stack([p.series for p in patches])
    return correlation_matrix(series, anchor_ts)


# --- representations ------------------------------------------------------

@dataclass
class IterationResult:
    r: int
    s: float
    patches: list[SampledPatch]
    F: np.ndarray
    degenerate: np.ndarray


@dataclass
class SubjectRepresentation:
    F_bar: np.ndarray
    positions: np.ndarray
    label: int | None = None
    meta: dict = field(default_factory=dict)
    iterations: list[IterationResult] = field(default_factory=list, repr=False)

    @property
    def N(self) -> int:
        return self.F_bar.shape[0]

    @property
    def H(self) -> int:
        return self.F_bar.shape[1]

    @property
    def R(self) -> int:
        return self.positions.shape[1] // 3

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SubjectRepresentation)
            and self.label == other.label
            and self.F_bar.shape == other.F_bar.shape
            and self.positions.shape == other.positions.shape
            and np.array_equal(self.F_bar, other.F_bar)
            and np.array_equal(self.positions, other.positions)
        )


def iterative_representation(
    volume: Volume4D,
    mask: Mask3D,
    anchors: AnchorSet,
    sizes: Sequence[float] = (8, 12, 16),
    N: int = 256,
    rng: Rng | None = None,
    tau_sample: int = 1,
    label: int | None = None,
    anchor_ts: np.ndarray | None = None,
    table: SupportTable | None = None,
) -> SubjectRepresentation:
    """Run one sampling pass per size and average the FC matrices.

    Rows are paired across passes by sampling index; positions of patch
    ``i`` from every pass are concatenated into a 3R vector.
    """
    if len(sizes) == 0:
        raise SamplingError("sizes must be non-empty")
    rng = rng or Rng(0)
    seed = rng.seed
    if anchor_ts is None:
        anchor_ts = anchor_series(volume, anchors, mask)
    table = table or SupportTable(mask)
    iterations = []
    for r, s in enumerate(sizes):
        patches = sample_patches(volume, mask, N, s, tau_sample, rng, table=table)
        F, bad = fc_matrix_flagged(patches, anchor_ts)
        iterations.append(IterationResult(r, s, patches, F, bad))
    F_bar = np.mean(np.stack([it.F for it in iterations]), axis=0)
    positions = np.array(
        [[c for it in iterations for c in it.patches[i].pos] for i in range(N)], dtype=np.float64
    )
    meta = {"seed": seed, "sizes": list(sizes), "N": N, "H": anchors.H}
    return SubjectRepresentation(F_bar, positions, label, meta, iterations)


def gm_coverage(patch_sets: Iterable, mask: Mask3D) -> tuple[float, np.ndarray]:
    """Percent of GM voxels hit by at least one patch, plus the hit-count map.

    ``patch_sets`` may be a flat list of patches or a list of lists.
    """
    if mask.count == 0:
        raise SamplingError("mask is empty")
    hits = np.zeros(mask.dims, dtype=np.int64)
    for item in patch_sets:
        group = item if isinstance(item, (list, tuple)) else [item]
        for p in group:
            hits[patch_slices(p.p, p.s, mask.dims)] += 1
    covered = int(((hits > 0) & mask.data).sum())
    return 100.0 * covered / mask.count, hits


def across_repeat_variance(stack: np.ndarray) -> float:
    """Mean over cells of the sample variance across the first axis."""
    stack = np.asarray(stack, dtype=np.float64)
    if stack.shape[0] < 2:
        raise SamplingError("need at least two repeats")
    return float(stack.var(axis=0, ddof=1).mean())


def cycle_sizes(sizes: Sequence[float], R: int) -> list[float]:
    return [sizes[i % len(sizes)] for i in range(R)]


def fc_sampling_variance(
    volume: Volume4D,
    mask: Mask3D,
    anchors: AnchorSet,
    R: int,
    repeats: int,
    rng: Rng | None = None,
    sizes: Sequence[float] = (8, 12, 16),
    N: int = 256,
    tau_sample: int = 1,
) -> float:
    """Across-repeat variance of the averaged FC matrix with ``R`` passes.

    Pass ``r`` uses ``sizes[r % len(sizes)]``.
    """
    if repeats < 2:
        raise SamplingError("repeats must be >= 2")
    if R < 1:
        raise SamplingError("R must be >= 1")
    rng = rng or Rng(0)
    ats = anchor_series(volume, anchors, mask)
    table = SupportTable(mask)
    sz = cycle_sizes(sizes, R)
    stack = [
        iterative_representation(volume, mask, anchors, sz, N, rng, tau_sample, anchor_ts=ats, table=table).F_bar
        for _ in range(repeats)
    ]
    return across_repeat_variance(np.stack(stack))


# --- ABFR file ------------------------------------------------------------

REP_MAGIC = b"ABFR"
REP_VERSION = 1
_REP_HEADER = struct.Struct("<4sIIII")


def save_representation(rep: SubjectRepresentation, path: str | Path) -> None:
    N, H = rep.F_bar.shape
    if rep.positions.shape[0] != N or rep.positions.shape[1] % 3:
        raise SamplingError("positions must be (N, 3R)")
    R = rep.positions.shape[1] // 3
    buf = bytearray(_REP_HEADER.pack(REP_MAGIC, REP_VERSION, N, H, R))
    buf += np.ascontiguousarray(rep.F_bar, dtype="<f8").tobytes()
    buf += np.ascontiguousarray(rep.positions, dtype="<f8").tobytes()
    if rep.label is None:
        buf += b"\x00\x00"
    else:
        buf += struct.pack("<BB", 1, int(rep.label))
    Path(path).write_bytes(bytes(buf))


def load_representation(path: str | Path) -> SubjectRepresentation:
    buf = Path(path).read_bytes()
    if len(buf) < _REP_HEADER.size:
        raise SamplingError("ABFR file shorter than its header")
    magic, version, N, H, R = _REP_HEADER.unpack_from(buf, 0)
    if magic != REP_MAGIC:
        raise SamplingError(f"magic mismatch: {magic!r}")
    if version != REP_VERSION:
        raise SamplingError(f"unsupported ABFR version {version}")
    expected = _REP_HEADER.size + 8 * (N * H + N * 3 * R) + 2
    if len(buf) != expected:
        raise SamplingError(f"length mismatch: expected {expected} bytes, got {len(buf)}")
    off = _REP_HEADER.size
    F = np.frombuffer(buf, "<f8", N * H, off).reshape(N, H).astype(np.float64)
    off += 8 * N * H
    pos = np.frombuffer(buf, "<f8", N * 3 * R, off).reshape(N, 3 * R).astype(np.float64)
    off += 8 * N * 3 * R
    has, lab = struct.unpack_from("<BB", buf, off)
    return SubjectRepresentation(F, pos, int(lab) if has else None)
