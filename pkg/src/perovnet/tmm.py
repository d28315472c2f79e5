"""Coherent normal-incidence transfer-matrix optics for thin-film stacks.

Conventions: complex index n + i*k with k >= 0, fields ``exp(i(kz - wt))``,
so a wave travelling +z decays in absorbing media.  "forward" illumination
enters through the first listed layer; "reverse" enters through the last
one (the stack is mirrored and the ambient media swapped).

Amplitudes are propagated with the Airy recursion for the local reflection
coefficient, which only ever multiplies by ``exp(2i*delta)`` with
``|exp(2i*delta)| <= 1``.  Thick absorbers therefore underflow harmlessly
instead of overflowing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .materials import BAND_NM, MaterialDispersion, refractive_index_at

#: Default 5 nm grid over the simulation band (101 points).
DEFAULT_GRID = np.linspace(BAND_NM[0], BAND_NM[1], 101)

FORWARD = "forward"
REVERSE = "reverse"

# raw R/T/A outside [-tol, 1 + tol] means the solver broke, not rounding
_RANGE_TOL = 1e-9


class TMMError(RuntimeError):
    """Numerical failure inside the solver (non-finite or out-of-range values)."""


@dataclass(frozen=True)
class Layer:
    material: MaterialDispersion
    thickness: float
    label: str = ""

    @property
    def name(self) -> str:
        return self.label or self.material.name


@dataclass(frozen=True)
class LayerStack:
    """Ordered film stack between two semi-infinite lossless media."""

    layers: tuple
    incident_medium: MaterialDispersion
    exit_medium: MaterialDispersion
    active_index: int = 0

    def __post_init__(self):
        layers = tuple(
            lay if isinstance(lay, Layer) else Layer(*lay) for lay in self.layers
        )
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ValueError("a stack needs at least one layer")
        for lay in layers:
            d = float(lay.thickness)
            if not np.isfinite(d) or d <= 0:
                raise ValueError(f"layer {lay.name}: thickness must be finite and > 0, got {d}")
        if not 0 <= self.active_index < len(layers):
            raise ValueError(f"active_index {self.active_index} out of range for {len(layers)} layers")
        for med in (self.incident_medium, self.exit_medium):
            if not med.is_lossless(*_overlap(med)):
                raise ValueError(f"ambient medium {med.name} must be lossless (k = 0)")

    @property
    def thicknesses(self) -> np.ndarray:
        return np.array([lay.thickness for lay in self.layers], dtype=float)

    @property
    def names(self) -> list[str]:
        return [lay.name for lay in self.layers]

    def with_thicknesses(self, thicknesses: Sequence[float]) -> "LayerStack":
        if len(thicknesses) != len(self.layers):
            raise ValueError(f"expected {len(self.layers)} thicknesses, got {len(thicknesses)}")
        layers = tuple(
            Layer(lay.material, float(d), lay.label) for lay, d in zip(self.layers, thicknesses)
        )
        return LayerStack(layers, self.incident_medium, self.exit_medium, self.active_index)

    def mirrored(self) -> "LayerStack":
        """Same stack seen from the other side."""
        return LayerStack(
            self.layers[::-1],
            self.exit_medium,
            self.incident_medium,
            len(self.layers) - 1 - self.active_index,
        )


def _overlap(med):
    lo, hi = med.span
    return max(lo, BAND_NM[0]), min(hi, BAND_NM[1])


@dataclass
class OpticalResponse:
    """R, T and per-layer absorptance; scalars or arrays over wavelength.

    ``absorptance`` has shape ``(n_layers,)`` or ``(n_layers, n_wavelengths)``.
    """

    wavelength: np.ndarray
    R: np.ndarray
    T: np.ndarray
    absorptance: np.ndarray

    def residual(self):
        """R + T + sum(A) - 1."""
        return self.R + self.T + self.absorptance.sum(axis=0) - 1.0


@dataclass
class EQECurve:
    wavelengths: np.ndarray
    forward: np.ndarray
    reverse: np.ndarray | None = None

    def __post_init__(self):
        self.wavelengths = np.asarray(self.wavelengths, dtype=float)
        self.forward = np.asarray(self.forward, dtype=float)
        if self.reverse is not None:
            self.reverse = np.asarray(self.reverse, dtype=float)
        wl = self.wavelengths
        if wl.ndim != 1 or wl.size < 2 or np.any(np.diff(wl) <= 0):
            raise ValueError("EQE wavelengths must be strictly increasing with at least 2 points")
        for name, arr in (("forward", self.forward), ("reverse", self.reverse)):
            if arr is None:
                continue
            if arr.shape != wl.shape:
                raise ValueError(f"{name} EQE has {arr.size} values for {wl.size} wavelengths")
            if not np.all(np.isfinite(arr)) or arr.min() < 0 or arr.max() > 1:
                raise ValueError(f"{name} EQE values must lie in [0, 1]")

    @property
    def channels(self) -> list[np.ndarray]:
        return [self.forward] if self.reverse is None else [self.forward, self.reverse]


def stack_indices(stack: LayerStack, wavelengths) -> np.ndarray:
    """Complex indices, shape ``(n_layers + 2, n_wavelengths)``, media included."""
    wl = np.atleast_1d(np.asarray(wavelengths, dtype=float))
    mats = [stack.incident_medium] + [lay.material for lay in stack.layers] + [stack.exit_medium]
    return np.stack([np.asarray(refractive_index_at(m, wl), dtype=complex) for m in mats])


def _solve_raw(nk, d, wl):
    """Core solver on arrays.

    Parameters
    ----------
    nk : (L + 2, W) complex
    d : (L,) float, nm
    wl : (W,) float, nm

    Returns
    -------
    r, R, T, A with A of shape (L, W); no clamping applied.
    """
    L = d.size
    n0 = nk[0].real
    delta = 2 * np.pi * nk[1:-1] * d[:, None] / wl  # (L, W), Im >= 0
    phase2 = np.exp(2j * delta)
    rij = (nk[:-1] - nk[1:]) / (nk[:-1] + nk[1:])  # interface j -> j+1, (L+1, W)
    tij = 2 * nk[:-1] / (nk[:-1] + nk[1:])

    # local reflection coefficients: gb[j] just above interface j->j+1,
    # gt[j] at the top of medium j (j = 1..L+1)
    gb = np.empty((L + 1, wl.size), dtype=complex)
    gt = np.zeros((L + 2, wl.size), dtype=complex)
    for j in range(L, -1, -1):
        gb[j] = (rij[j] + gt[j + 1]) / (1 + rij[j] * gt[j + 1])
        if j >= 1:
            gt[j] = gb[j] * phase2[j - 1]
    r = gb[0]

    # forward amplitudes at the top of each medium, unit incident amplitude
    a_top = np.empty((L + 2, wl.size), dtype=complex)
    a_top[0] = 1.0
    a_bot = np.ones(wl.size, dtype=complex)
    for j in range(0, L + 1):
        a_top[j + 1] = a_bot * tij[j] / (1 + rij[j] * gt[j + 1])
        if j + 1 <= L:
            a_bot = a_top[j + 1] * np.exp(1j * delta[j])

    def flux(a, g, n):
        return (np.conj(n) * (1 + g) * np.conj(1 - g)).real * np.abs(a) ** 2 / n0

    s_top = flux(a_top[1:-1], gt[1:-1], nk[1:-1])
    s_bot = flux(a_top[1:-1] * np.exp(1j * delta), gb[1:], nk[1:-1])
    A = s_top - s_bot
    R = np.abs(r) ** 2
    T = nk[-1].real * np.abs(a_top[-1]) ** 2 / n0
    return r, R, T, A


def solve_stack(stack: LayerStack, wavelength, direction: str = FORWARD) -> OpticalResponse:
    """Reflectance, transmittance and per-layer absorptance at normal incidence.

    ``wavelength`` may be a scalar or an array; the response mirrors its shape
    (absorptance gains a leading layer axis).  For ``direction="reverse"``
    the per-layer absorptance is still indexed in the stack's listed order.

    Raises
    ------
    WavelengthRangeError
        A material table does not cover a requested wavelength.
    TMMError
        A non-finite or out-of-range intermediate was produced.
    """
    if direction not in (FORWARD, REVERSE):
        raise ValueError(f"direction must be 'forward' or 'reverse', got {direction!r}")
    scalar = np.ndim(wavelength) == 0
    wl = np.atleast_1d(np.asarray(wavelength, dtype=float))
    s = stack if direction == FORWARD else stack.mirrored()
    nk = stack_indices(s, wl)
    with np.errstate(all="ignore"):
        _, R, T, A = _solve_raw(nk, s.thicknesses, wl)
    for name, arr in (("R", R), ("T", T), ("absorptance", A)):
        if not np.all(np.isfinite(arr)):
            raise TMMError(
                f"non-finite {name} for thicknesses {s.thicknesses.tolist()} nm "
                f"({direction}); inputs are numerically pathological"
            )
        if arr.min() < -_RANGE_TOL or arr.max() > 1 + _RANGE_TOL:
            raise TMMError(f"{name} out of [0, 1] by more than {_RANGE_TOL:g} ({direction})")
    R, T, A = np.clip(R, 0, 1), np.clip(T, 0, 1), np.clip(A, 0, 1)
    if direction == REVERSE:
        A = A[::-1]
    if scalar:
        return OpticalResponse(wl[0], R[0], T[0], A[:, 0])
    return OpticalResponse(wl, R, T, A)


def compute_eqe(stack: LayerStack, grid=DEFAULT_GRID, dual_side: bool = False) -> EQECurve:
    """EQE as active-layer absorptance (unity internal quantum efficiency).

    The forward curve illuminates through the first listed layer; with
    ``dual_side`` the reverse curve illuminates through the last one.
    """
    grid = np.asarray(grid, dtype=float)
    fwd = solve_stack(stack, grid, FORWARD).absorptance[stack.active_index]
    rev = None
    if dual_side:
        rev = solve_stack(stack, grid, REVERSE).absorptance[stack.active_index]
    return EQECurve(grid, fwd, rev)


def transfer_matrix(stack: LayerStack, wavelength: float):
    """Scaled 2x2 characteristic transfer matrix of the whole stack.

    Maps (forward, backward) amplitudes in the exit medium to those in the
    incident medium.  Each propagation matrix is divided by its largest
    entry ``exp(-i*delta)`` so the product stays bounded; the removed factor
    is returned separately as ``log_scale`` (the true matrix is
    ``M * exp(log_scale)``).

    Returns
    -------
    M : (2, 2) complex ndarray
    log_scale : complex
    """
    nk = stack_indices(stack, [wavelength])[:, 0]
    d = stack.thicknesses

    def interface(na, nb):
        r = (na - nb) / (na + nb)
        t = 2 * na / (na + nb)
        return np.array([[1, r], [r, 1]], dtype=complex) / t

    M = interface(nk[0], nk[1])
    log_scale = 0j
    for j in range(1, len(nk) - 1):
        delta = 2 * np.pi * nk[j] * d[j - 1] / wavelength
        P = np.array([[1, 0], [0, np.exp(2j * delta)]], dtype=complex)
        log_scale += -1j * delta
        M = M @ P @ interface(nk[j], nk[j + 1])
    return M, log_scale


def rt_from_matrix(M, log_scale):
    """Amplitude reflection and transmission from :func:`transfer_matrix`."""
    r = M[1, 0] / M[0, 0]
    t = np.exp(-log_scale) / M[0, 0]
    return r, t
