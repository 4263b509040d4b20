"""Anchor patch selection (random and grid baseline) and conformity diagnostics."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .rng import Rng
from .volume import BoundaryIndex, Mask3D


class AnchorError(ValueError):
    pass


class InfeasibleError(AnchorError):
    def __init__(self, message: str, acceptance_rate: float):
        super().__init__(f"{message} (acceptance rate {acceptance_rate:.4g})")
        self.acceptance_rate = acceptance_rate


class AnchorStarvedError(AnchorError):
    def __init__(self, index: int):
        super().__init__(f"anchor {index} has no GM voxel left after overlap resolution")
        self.index = index


@dataclass(frozen=True)
class PatchSpec:
    """Cube of side ``s`` whose lowest-index corner is ``t``."""

    t: tuple[int, int, int]
    s: int

    def slices(self, dims: Sequence[int]) -> tuple[slice, slice, slice]:
        return tuple(slice(max(0, a), min(d, a + self.s)) for a, d in zip(self.t, dims))


def patch_center(patch: PatchSpec) -> tuple[float, float, float]:
    h = patch.s / 2.0
    return (patch.t[0] + h, patch.t[1] + h, patch.t[2] + h)


class SupportTable:
    """Summed-volume table of a mask for O(1) box counts."""

    def __init__(self, mask: Mask3D):
        self.dims = mask.dims
        c = np.zeros(tuple(d + 1 for d in self.dims), dtype=np.int64)
        c[1:, 1:, 1:] = mask.data.astype(np.int64).cumsum(0).cumsum(1).cumsum(2)
        self._c = c

    def box(self, lo: Sequence[int], hi: Sequence[int]) -> int:
        """GM count over the half-open box [lo, hi), clipped to the grid."""
        x0, y0, z0 = (min(max(v, 0), d) for v, d in zip(lo, self.dims))
        x1, y1, z1 = (min(max(v, 0), d) for v, d in zip(hi, self.dims))
        if x1 <= x0 or y1 <= y0 or z1 <= z0:
            return 0
        c = self._c
        return int(
            c[x1, y1, z1] - c[x0, y1, z1] - c[x1, y0, z1] - c[x1, y1, z0]
            + c[x0, y0, z1] + c[x0, y1, z0] + c[x1, y0, z0] - c[x0, y0, z0]
        )

    def support(self, patch: PatchSpec) -> int:
        t = patch.t
        return self.box(t, (t[0] + patch.s, t[1] + patch.s, t[2] + patch.s))


def gm_support(mask: Mask3D, patch: PatchSpec) -> int:
    """Number of GM voxels inside the (clipped) cube."""
    return int(mask.data[patch.slices(mask.dims)].sum())


@dataclass
class AnchorSet:
    anchors: list[PatchSpec]
    label_image: np.ndarray
    s: int
    tau: int
    seed: int | None = None
    mode: str = "random"
    diagnostics: dict = field(default_factory=dict)

    @property
    def H(self) -> int:
        return len(self.anchors)

    def centers(self) -> np.ndarray:
        return np.array([patch_center(a) for a in self.anchors], dtype=np.float64)


def build_label_image(anchors: Sequence[PatchSpec], mask: Mask3D) -> np.ndarray:
    """Label voxels 1..H by the lowest-index anchor whose cube contains them."""
    if len(anchors) > np.iinfo(np.uint16).max:
        raise AnchorError("too many anchors for a u16 label image")
    labels = np.zeros(mask.dims, dtype=np.uint16)
    for j, a in enumerate(anchors, start=1):
        view = labels[a.slices(mask.dims)]
        view[view == 0] = j
    for j in range(1, len(anchors) + 1):
        if not np.any((labels == j) & mask.data):
            raise AnchorStarvedError(j - 1)
    return labels


def select_random_anchors(
    mask: Mask3D,
    H: int,
    s: int = 8,
    tau: int = 100,
    rng: Rng | None = None,
    max_attempts: int | None = None,
    seed: int | None = None,
) -> AnchorSet:
    """Draw top-left corners uniformly until ``H`` valid anchors are found.

    A candidate is valid when its cube holds at least ``tau`` GM voxels and
    at least one GM voxel not already claimed by an earlier anchor (so no
    anchor is starved by overlap).
    """
    if H < 1:
        raise AnchorError("H must be >= 1")
    if s < 1:
        raise AnchorError("s must be >= 1")
    if tau < 1:
        raise AnchorError("tau must be >= 1")
    X, Y, Z = mask.dims
    if s > min(X, Y, Z):
        raise InfeasibleError(f"side {s} does not fit in {mask.dims}", 0.0)
    if tau > s**3:
        raise InfeasibleError(f"tau={tau} exceeds the {s}^3={s**3} voxels of a patch", 0.0)
    if rng is None:
        rng = Rng(0 if seed is None else seed)
    if seed is None:
        seed = rng.seed
    max_attempts = 1000 * H if max_attempts is None else max_attempts
    table = SupportTable(mask)
    claimed = np.zeros(mask.dims, dtype=bool)
    anchors: list[PatchSpec] = []
    attempts = 0
    while len(anchors) < H:
        if attempts >= max_attempts:
            raise InfeasibleError(
                f"found {len(anchors)}/{H} anchors in {attempts} attempts",
                len(anchors) / max(attempts, 1),
            )
        attempts += 1
        t = (rng.integers(0, X - s), rng.integers(0, Y - s), rng.integers(0, Z - s))
        p = PatchSpec(t, s)
        if table.support(p) < tau:
            continue
        sl = p.slices(mask.dims)
        fresh = mask.data[sl] & ~claimed[sl]
        if not fresh.any():
            continue
        claimed[sl] = True
        anchors.append(p)
    labels = build_label_image(anchors, mask)
    return AnchorSet(
        anchors, labels, s, tau, seed=seed, mode="random",
        diagnostics={"attempts": attempts, "acceptance_rate": H / attempts},
    )


def grid_offsets(span: int, stride: int) -> tuple[int, int]:
    """(number of lattice steps, centring offset) along one axis."""
    steps = span // stride
    return steps, (span - steps * stride) // 2


def select_grid_anchors(
    mask: Mask3D,
    roi: Sequence[tuple[int, int]],
    stride: Sequence[int],
    s: int = 8,
    tau: int = 100,
) -> AnchorSet:
    """Regular lattice of top-left corners centred in an inclusive ROI.

    Candidates below the GM threshold (or not fitting in the grid) are
    dropped but counted in ``diagnostics``.
    """
    dims = mask.dims
    if len(roi) != 3 or len(stride) != 3:
        raise AnchorError("roi and stride need one entry per axis")
    axes = []
    for (lo, hi), d, dim in zip(roi, stride, dims):
        if d < 1:
            raise AnchorError("strides must be positive")
        if not (0 <= lo <= hi < dim):
            raise AnchorError(f"roi bounds {(lo, hi)} outside [0, {dim})")
        steps, off = grid_offsets(hi - lo + 1, d)
        axes.append([lo + off + i * d for i in range(steps)])
    if any(len(a) == 0 for a in axes):
        raise AnchorError("empty candidate lattice: roi smaller than stride on some axis")
    table = SupportTable(mask)
    anchors = []
    n_outside = n_below = 0
    for tx in axes[0]:
        for ty in axes[1]:
            for tz in axes[2]:
                p = PatchSpec((tx, ty, tz), s)
                if tx + s > dims[0] or ty + s > dims[1] or tz + s > dims[2]:
                    n_outside += 1
                elif table.support(p) < tau:
                    n_below += 1
                else:
                    anchors.append(p)
    n_cand = len(axes[0]) * len(axes[1]) * len(axes[2])
    if not anchors:
        raise InfeasibleError("no grid candidate meets the GM threshold", 0.0)
    labels = build_label_image(anchors, mask)
    return AnchorSet(
        anchors, labels, s, tau, mode="grid",
        diagnostics={"candidates": n_cand, "below_tau": n_below, "outside": n_outside},
    )


def mask_bounding_roi(mask: Mask3D) -> list[tuple[int, int]]:
    idx = np.argwhere(mask.data)
    if len(idx) == 0:
        raise AnchorError("mask is empty")
    return [(int(lo), int(hi)) for lo, hi in zip(idx.min(0), idx.max(0))]


@dataclass
class BoundaryReport:
    distances: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.distances.mean())

    def write_distances(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["anchor_id", "distance"])
            for i, d in enumerate(self.distances):
                w.writerow([i, repr(float(d))])

    def write_histogram(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_left", "bin_right", "count"])
            for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
                w.writerow([repr(float(lo)), repr(float(hi)), int(c)])


def boundary_distance_report(
    anchors: AnchorSet | Sequence[PatchSpec],
    mask: Mask3D,
    bin_width: float = 0.5,
    index: BoundaryIndex | None = None,
) -> BoundaryReport:
    """Distance from each anchor centre to the nearest GM boundary voxel."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    patches = anchors.anchors if isinstance(anchors, AnchorSet) else list(anchors)
    index = index or BoundaryIndex(mask)
    centers = np.array([patch_center(p) for p in patches], dtype=np.float64)
    d = index.distance(centers)
    nbins = max(1, int(np.floor(d.max() / bin_width)) + 1)
    edges = np.arange(nbins + 1) * bin_width
    # right-open bins [lo, hi)
    idx = np.minimum((d / bin_width).astype(np.int64), nbins - 1)
    counts = np.bincount(idx, minlength=nbins)
    return BoundaryReport(d, edges, counts)


# --- persistence ------------------------------------------------------------

LABEL_MAGIC = b"ABFL"
LABEL_VERSION = 1
_LABEL_HEADER = struct.Struct("<4sI3Q")


def save_label_image(labels: np.ndarray, path: str | Path) -> None:
    labels = np.ascontiguousarray(labels, dtype="<u2")
    Path(path).write_bytes(_LABEL_HEADER.pack(LABEL_MAGIC, LABEL_VERSION, *labels.shape) + labels.tobytes())


def load_label_image(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < _LABEL_HEADER.size:
        raise AnchorError("label file shorter than its header")
    magic, version, *dims = _LABEL_HEADER.unpack_from(buf, 0)
    if magic != LABEL_MAGIC or version != LABEL_VERSION:
        raise AnchorError(f"not an ABFL v{LABEL_VERSION} file")
    n = int(np.prod(dims, dtype=np.int64))
    if len(buf) != _LABEL_HEADER.size + 2 * n:
        raise AnchorError("label file length mismatch")
    return np.frombuffer(buf, dtype="<u2", offset=_LABEL_HEADER.size).reshape(dims).astype(np.uint16)


def save_anchor_set(aset: AnchorSet, path: str | Path) -> None:
    """Write ``<path>`` (JSON) and the ``<path stem>.abfl`` label sidecar."""
    path = Path(path)
    sidecar = path.with_suffix(".abfl")
    doc = {
        "anchors": [list(a.t) for a in aset.anchors],
        "s": aset.s,
        "tau": aset.tau,
        "seed": aset.seed,
        "mode": aset.mode,
        "dims": list(aset.label_image.shape),
        "label_image": sidecar.name,
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    save_label_image(aset.label_image, sidecar)


def load_anchor_set(path: str | Path) -> AnchorSet:
    path = Path(path)
    doc = json.loads(path.read_text())
    labels = load_label_image(path.parent / doc["label_image"])
    anchors = [PatchSpec(tuple(int(v) for v in t), int(doc["s"])) for t in doc["anchors"]]
    return AnchorSet(anchors, labels, int(doc["s"]), int(doc["tau"]), doc.get("seed"), doc.get("mode", "random"))
