"""Complex refractive-index tables for stack materials.

A dispersion table is a CSV file with header ``wavelength_nm,n,k`` and one
row per wavelength.  The material name is the file stem.  Values between
table nodes are linearly interpolated (n and k independently); requests
outside the table raise instead of extrapolating.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

#: Simulation band every table must cover, nm.
BAND_NM = (300.0, 800.0)

HEADER = ["wavelength_nm", "n", "k"]

# eV * nm
_HC = 1239.841984


class DispersionError(ValueError):
    """Raised for malformed, invalid or insufficient dispersion data."""


class WavelengthRangeError(DispersionError):
    """Raised when a wavelength lies outside a dispersion table."""


@dataclass(frozen=True, eq=False)
class MaterialDispersion:
    """Tabulated complex refractive index n + i*k versus wavelength.

    Instances are immutable; the arrays are flagged read-only.
    """

    name: str
    wavelengths: np.ndarray
    n: np.ndarray
    k: np.ndarray

    def __post_init__(self):
        wl = np.array(self.wavelengths, dtype=float)
        n = np.array(self.n, dtype=float)
        k = np.array(self.k, dtype=float)
        if wl.ndim != 1 or wl.size == 0:
            raise DispersionError(f"{self.name}: wavelength table must be a non-empty 1-d list")
        if n.shape != wl.shape or k.shape != wl.shape:
            raise DispersionError(f"{self.name}: n and k must have one entry per wavelength")
        if not (np.all(np.isfinite(wl)) and np.all(np.isfinite(n)) and np.all(np.isfinite(k))):
            raise DispersionError(f"{self.name}: non-finite values in table")
        if np.any(wl <= 0):
            raise DispersionError(f"{self.name}: wavelengths must be > 0")
        if np.any(np.diff(wl) <= 0):
            raise DispersionError(f"{self.name}: wavelengths must be strictly increasing")
        if np.any(n <= 0):
            raise DispersionError(f"{self.name}: n must be > 0")
        if np.any(k < 0):
            raise DispersionError(f"{self.name}: k must be >= 0")
        for arr in (wl, n, k):
            arr.flags.writeable = False
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "k", k)

    def __eq__(self, other):
        if not isinstance(other, MaterialDispersion):
            return NotImplemented
        return (
            self.name == other.name
            and np.array_equal(self.wavelengths, other.wavelengths)
            and np.array_equal(self.n, other.n)
            and np.array_equal(self.k, other.k)
        )

    __hash__ = object.__hash__

    @property
    def span(self) -> tuple[float, float]:
        return float(self.wavelengths[0]), float(self.wavelengths[-1])

    def covers(self, lo: float, hi: float) -> bool:
        return self.wavelengths[0] <= lo and hi <= self.wavelengths[-1]

    def is_lossless(self, lo: float = BAND_NM[0], hi: float = BAND_NM[1]) -> bool:
        """True if k is exactly zero on every node touching [lo, hi]."""
        wl = self.wavelengths
        i0 = max(int(np.searchsorted(wl, lo, side="right")) - 1, 0)
        i1 = min(int(np.searchsorted(wl, hi, side="left")), wl.size - 1)
        return bool(np.all(self.k[i0 : i1 + 1] == 0.0))

    def __call__(self, wavelength):
        return refractive_index_at(self, wavelength)


def refractive_index_at(disp: MaterialDispersion, wavelength):
    """Complex index n + i*k at one wavelength or an array of wavelengths.

    Exact at table nodes, piecewise linear between them.

    Raises
    ------
    WavelengthRangeError
        If any requested wavelength lies outside the table.
    """
    lam = np.asarray(wavelength, dtype=float)
    lo, hi = disp.span
    if np.any(~np.isfinite(lam)) or np.any(lam < lo) or np.any(lam > hi):
        bad = lam[(lam < lo) | (lam > hi) | ~np.isfinite(lam)] if lam.ndim else lam
        raise WavelengthRangeError(
            f"{disp.name}: wavelength {np.ravel(bad)[0]:g} nm outside table range [{lo:g}, {hi:g}] nm"
        )
    n = np.interp(lam, disp.wavelengths, disp.n)
    k = np.interp(lam, disp.wavelengths, disp.k)
    out = n + 1j * k
    if out.ndim == 0:
        return complex(out)
    return out


def _fail(path, line, msg):
    raise DispersionError(f"{path}:{line}: {msg}")


def load_dispersion(path, band=BAND_NM) -> MaterialDispersion:
    """Read and validate a dispersion CSV.

    Rows may appear in any order; duplicates are rejected.  Every error
    message carries the file path and, where applicable, the line number.
    """
    path = Path(path)
    rows = []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DispersionError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            _fail(path, 1, "empty file")
        if [h.strip() for h in header] != HEADER:
            _fail(path, 1, f"expected header {','.join(HEADER)!r}, got {','.join(header)!r}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                _fail(path, line, f"expected 3 fields, got {len(row)}")
            try:
                wl, n, k = (float(c) for c in row)
            except ValueError:
                _fail(path, line, f"unparseable number in {','.join(row)!r}")
            if not all(math.isfinite(v) for v in (wl, n, k)):
                _fail(path, line, "non-finite value")
            if wl <= 0:
                _fail(path, line, f"wavelength must be > 0, got {wl:g}")
            if n <= 0:
                _fail(path, line, f"n must be > 0, got {n:g}")
            if k < 0:
                _fail(path, line, f"k must be >= 0, got {k:g}")
            rows.append((wl, n, k, line))
    if not rows:
        _fail(path, 2, "no data rows")
    rows.sort(key=lambda r: r[0])
    for a, b in zip(rows, rows[1:]):
        if b[0] == a[0]:
            _fail(path, b[3], f"duplicate wavelength {b[0]:g} nm (also on line {a[3]})")
    wl = np.array([r[0] for r in rows])
    if band is not None:
        lo, hi = band
        missing = []
        if wl[0] > lo:
            missing.append(f"[{lo:g}, {wl[0]:g})")
        if wl[-1] < hi:
            missing.append(f"({wl[-1]:g}, {hi:g}]")
        if missing:
            raise DispersionError(
                f"{path}: table spans [{wl[0]:g}, {wl[-1]:g}] nm and does not cover "
                f"the band [{lo:g}, {hi:g}] nm; missing {' and '.join(missing)} nm"
            )
    return MaterialDispersion(
        name=path.stem,
        wavelengths=wl,
        n=np.array([r[1] for r in rows]),
        k=np.array([r[2] for r in rows]),
    )


def save_dispersion(disp: MaterialDispersion, path) -> Path:
    """Write ``disp`` in the CSV format read by :func:`load_dispersion`.

    Floats are written with ``repr`` so a reload is bit-exact.
    """
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for row in zip(disp.wavelengths, disp.n, disp.k):
            w.writerow([repr(float(v)) for v in row])
    return path


def load_library(directory, band=BAND_NM) -> dict[str, MaterialDispersion]:
    """Load every ``*.csv`` table in ``directory`` keyed by material name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DispersionError(f"{directory}: materials directory not found")
    return {p.stem: load_dispersion(p, band) for p in sorted(directory.glob("*.csv"))}


def builtin_materials_dir() -> Path:
    """Directory holding the bundled synthetic tables."""
    return Path(__file__).parent / "data" / "materials"


def constant(name: str, n: float, k: float = 0.0, span=(200.0, 1200.0)) -> MaterialDispersion:
    """Wavelength-independent material, handy for tests and ambient media."""
    return MaterialDispersion(name, np.array(span), np.array([n, n]), np.array([k, k]))


def lorentz(name, wavelengths, eps_inf, oscillators=(), drude=None) -> MaterialDispersion:
    """Build a table from a Drude-Lorentz dielectric function.

    Parameters
    ----------
    wavelengths : array_like
        Table nodes, nm.
    eps_inf : float
        High-frequency permittivity.
    oscillators : sequence of (strength, center_eV, width_eV)
        Lorentz terms ``f E0^2 / (E0^2 - E^2 - i g E)``.
    drude : (plasma_eV, damping_eV), optional
        Free-carrier term ``-Ep^2 / (E^2 + i g E)``.
    """
    wl = np.asarray(wavelengths, dtype=float)
    e = _HC / wl
    eps = np.full(wl.shape, eps_inf, dtype=complex)
    for f, e0, g in oscillators:
        eps += f * e0**2 / (e0**2 - e**2 - 1j * g * e)
    if drude is not None:
        ep, g = drude
        eps -= ep**2 / (e**2 + 1j * g * e)
    nk = np.sqrt(eps)
    # round to 6 decimals so the CSV text is the canonical value
    return MaterialDispersion(name, wl, np.round(nk.real, 6), np.round(np.abs(nk.imag), 6))
