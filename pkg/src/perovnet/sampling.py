"""Thickness sampling inside per-layer bounds.

Four unit-cube generators are provided: seeded uniform random, Halton
(radical inverse in the first primes, unscrambled), Sobol (Joe-Kuo
direction numbers, unscrambled) and Latin hypercube.  For the two
sequences ``seed_or_skip`` is a burn-in: the first returned point has
sequence index ``seed_or_skip + 1``, so the all-zeros point at index 0 is
always skipped.  For ``random`` and ``lhs`` it is the RNG seed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

METHODS = ("random", "halton", "sobol", "lhs")

_PRIMES = (
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71,
    73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151,
)

# Joe & Kuo (2008) new-joe-kuo-6.21201, dimensions 2..21:
# (degree s, polynomial coefficients a, initial direction numbers m_1..m_s)
_JOE_KUO = (
    (1, 0, (1,)),
    (2, 1, (1, 3)),
    (3, 1, (1, 3, 1)),
    (3, 2, (1, 1, 1)),
    (4, 1, (1, 1, 3, 3)),
    (4, 4, (1, 3, 5, 13)),
    (5, 2, (1, 1, 5, 5, 17)),
    (5, 4, (1, 1, 5, 5, 5)),
    (5, 7, (1, 1, 7, 11, 19)),
    (5, 11, (1, 1, 5, 1, 1)),
    (5, 13, (1, 1, 1, 3, 11)),
    (5, 14, (1, 3, 5, 5, 31)),
    (6, 1, (1, 3, 3, 9, 7, 49)),
    (6, 13, (1, 1, 1, 15, 21, 21)),
    (6, 16, (1, 3, 1, 13, 27, 49)),
    (6, 19, (1, 1, 1, 15, 7, 5)),
    (6, 22, (1, 3, 1, 15, 13, 25)),
    (6, 25, (1, 1, 5, 5, 19, 61)),
    (7, 1, (1, 3, 7, 11, 23, 15, 103)),
    (7, 4, (1, 3, 7, 13, 13, 15, 69)),
)

SOBOL_MAX_DIM = len(_JOE_KUO) + 1
HALTON_MAX_DIM = len(_PRIMES)
_BITS = 52


class SamplingError(ValueError):
    pass


# ---------------------------------------------------------------- generators


def radical_inverse(index: int, base: int) -> float:
    """van der Corput radical inverse of ``index`` in ``base``."""
    inv, f = 0.0, 1.0 / base
    while index > 0:
        index, digit = divmod(index, base)
        inv += digit * f
        f /= base
    return inv


def halton(dim: int, n: int, skip: int = 0) -> np.ndarray:
    if dim > HALTON_MAX_DIM:
        raise SamplingError(f"halton supports at most {HALTON_MAX_DIM} dimensions, got {dim}")
    return np.array(
        [[radical_inverse(i, _PRIMES[j]) for j in range(dim)] for i in range(skip + 1, skip + 1 + n)]
    )


def _sobol_directions(dim: int) -> np.ndarray:
    """Direction integers v[j, b] scaled to ``_BITS`` bits."""
    v = np.zeros((dim, _BITS), dtype=object)
    for b in range(_BITS):
        v[0, b] = 1 << (_BITS - 1 - b)
    for j in range(1, dim):
        s, a, m = _JOE_KUO[j - 1]
        for b in range(min(s, _BITS)):
            v[j, b] = m[b] << (_BITS - 1 - b)
        for b in range(s, _BITS):
            val = v[j, b - s] ^ (v[j, b - s] >> s)
            for q in range(1, s):
                if (a >> (s - 1 - q)) & 1:
                    val ^= v[j, b - q]
            v[j, b] = val
    return v


def sobol(dim: int, n: int, skip: int = 0) -> np.ndarray:
    """Gray-code Sobol points with indices ``skip+1 .. skip+n``."""
    if dim > SOBOL_MAX_DIM:
        raise SamplingError(f"sobol supports at most {SOBOL_MAX_DIM} dimensions, got {dim}")
    v = _sobol_directions(dim)
    x = [0] * dim
    out = np.empty((n, dim))
    # walk the Gray-code sequence from index 0; the point at index i is
    # the XOR of directions selected by the bits of gray(i)
    first = skip + 1
    g = first ^ (first >> 1)
    for j in range(dim):
        acc = 0
        for b in range(_BITS):
            if (g >> b) & 1:
                acc ^= v[j, b]
        x[j] = acc
    scale = 2.0**-_BITS
    out[0] = [xi * scale for xi in x]
    for row, i in enumerate(range(first, first + n - 1), start=1):
        c = (~i & (i + 1)).bit_length() - 1  # lowest zero bit of i
        for j in range(dim):
            x[j] ^= v[j, c]
        out[row] = [xi * scale for xi in x]
    return out


def latin_hypercube(dim: int, n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    u = rng.random((n, dim))
    out = np.empty((n, dim))
    for j in range(dim):
        out[:, j] = (rng.permutation(n) + u[:, j]) / n
    return out


def sample_unit(method: str, dim: int, n: int, seed_or_skip: int = 0) -> np.ndarray:
    """``n`` points in ``[0, 1)^dim`` from the named generator."""
    if dim < 1 or n < 1:
        raise SamplingError(f"dim and n must be >= 1, got dim={dim}, n={n}")
    if seed_or_skip < 0:
        raise SamplingError("seed_or_skip must be >= 0")
    if method == "random":
        return np.random.default_rng(seed_or_skip).random((n, dim))
    if method == "halton":
        return halton(dim, n, seed_or_skip)
    if method == "sobol":
        return sobol(dim, n, seed_or_skip)
    if method == "lhs":
        return latin_hypercube(dim, n, seed_or_skip)
    raise SamplingError(f"unknown sampling method {method!r}; choose from {', '.join(METHODS)}")


# ---------------------------------------------------------------- boxes


@dataclass(frozen=True)
class ThicknessBox:
    names: tuple
    lower: tuple
    upper: tuple

    def __post_init__(self):
        names, lo, hi = tuple(self.names), tuple(map(float, self.lower)), tuple(map(float, self.upper))
        if not (len(names) == len(lo) == len(hi)) or not names:
            raise SamplingError("box names, lower and upper must be non-empty and equal length")
        for nm, a, b in zip(names, lo, hi):
            if not (0 < a < b):
                raise SamplingError(f"{nm}: need 0 < lower < upper, got [{a}, {b}]")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return len(self.names)

    def as_dict(self) -> dict:
        return {"names": list(self.names), "lower": list(self.lower), "upper": list(self.upper)}

    @classmethod
    def from_dict(cls, d) -> "ThicknessBox":
        return cls(tuple(d["names"]), tuple(d["lower"]), tuple(d["upper"]))


#: ITO / NiO / PerovHMv2 / C60HM / SnO2 / ITO / LiF (bifacial stack)
TRANSPARENT_BOX = ThicknessBox(
    ("ITO_top", "NiO", "PerovHMv2", "C60HM", "SnO2", "ITO_bottom", "LiF"),
    (54, 5, 60, 5, 5, 54, 50),
    (350, 50, 965, 50, 50, 350, 300),
)

#: ITO / SnO2 / Perovskite / Spiro-OMeTAD / Au (metal-backed stack)
OPAQUE_BOX = ThicknessBox(
    ("ITO", "SnO2", "Perovskite", "Spiro-OMeTAD", "Au"),
    (54, 10, 60, 200, 7),
    (350, 100, 965, 370, 80),
)


@dataclass(frozen=True)
class SampleSet:
    method: str
    seed_or_skip: int
    box: ThicknessBox
    points: np.ndarray = field(repr=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return len(self.points)

    def metadata(self) -> dict:
        return {"method": self.method, "seed_or_skip": self.seed_or_skip, "n": self.n, "box": self.box.as_dict()}


def scale_to_box(points, box: ThicknessBox, method: str = "custom", seed_or_skip: int = 0) -> SampleSet:
    """Affine map of unit-cube points onto ``box``: ``lower + u * (upper - lower)``."""
    u = np.atleast_2d(np.asarray(points, dtype=float))
    if u.shape[1] != box.dim:
        raise SamplingError(f"points have dimension {u.shape[1]}, box has {box.dim}")
    if np.any(u < 0) or np.any(u > 1):
        raise SamplingError("unit points must lie in [0, 1]")
    lo, hi = np.array(box.lower), np.array(box.upper)
    x = lo + u * (hi - lo)
    # guard against rounding past the upper bound
    x = np.minimum(np.maximum(x, lo), hi)
    return SampleSet(method, seed_or_skip, box, x)


def sample_box(box: ThicknessBox, method: str, n: int, seed_or_skip: int = 0) -> SampleSet:
    return scale_to_box(sample_unit(method, box.dim, n, seed_or_skip), box, method, seed_or_skip)


def save_sample_set(ss: SampleSet, path) -> tuple[Path, Path]:
    """CSV of points (header = layer names) plus ``<stem>.meta.json`` sidecar."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ss.box.names)
        for row in ss.points:
            w.writerow([repr(float(v)) for v in row])
    meta = path.with_suffix(".meta.json")
    meta.write_text(json.dumps(ss.metadata(), indent=2, sort_keys=True) + "\n")
    return path, meta


def load_sample_set(path) -> SampleSet:
    path = Path(path)
    meta = json.loads(path.with_suffix(".meta.json").read_text())
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    box = ThicknessBox.from_dict(meta["box"])
    if tuple(rows[0]) != box.names:
        raise SamplingError(f"{path}: header does not match box layer names")
    pts = np.array([[float(c) for c in r] for r in rows[1:]])
    return SampleSet(meta["method"], int(meta["seed_or_skip"]), box, pts)
