import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import field_absorptance
from recipes import random_stack
from perovnet.materials import WavelengthRangeError, constant
from perovnet.stacks import default_library, preset
from perovnet.tmm import (
    DEFAULT_GRID,
    EQECurve,
    Layer,
    LayerStack,
    TMMError,
    compute_eqe,
    rt_from_matrix,
    solve_stack,
    stack_indices,
    transfer_matrix,
)

AIR = constant("air", 1.0)
LIB = default_library()


def transparent_mid():
    t = preset("transparent")
    return t.instantiate(LIB, t.midpoint())


def test_fresnel_air_glass():
    # a lossless glass film into glass: only the air/glass interface reflects
    glass = constant("glass", 1.5)
    r = solve_stack(LayerStack([Layer(glass, 100.0)], AIR, glass), 550.0)
    assert abs(r.R - 0.04) < 1e-12 and abs(r.T - 0.96) < 1e-12
    assert np.all(r.absorptance == 0)


def test_quarter_wave_antireflection():
    lam = 600.0
    stack = LayerStack([Layer(constant("c", 1.5), lam / (4 * 1.5))], AIR, constant("s", 2.25))
    assert solve_stack(stack, lam).R <= 1e-10
    assert solve_stack(stack, lam + 100).R > 1e-4


@pytest.mark.parametrize("d", [1.0, 137.0, 5000.0])
def test_single_lossless_layer(d):
    stack = LayerStack([Layer(constant("c", 2.3), d)], AIR, AIR)
    r = solve_stack(stack, DEFAULT_GRID)
    assert np.abs(r.absorptance).max() <= 1e-12
    assert np.abs(r.R + r.T - 1).max() <= 1e-12


def test_lossless_stack_zero_eqe():
    stack = LayerStack([Layer(constant(f"c{i}", 1.5 + i / 3), 80 + 20 * i) for i in range(5)], AIR, AIR, 2)
    eqe = compute_eqe(stack, dual_side=True)
    assert np.abs(eqe.forward).max() <= 1e-12 and np.abs(eqe.reverse).max() <= 1e-12


def test_energy_reciprocity_random():
    rng = np.random.default_rng(7)
    for _ in range(50):
        s = random_stack(rng)
        f = solve_stack(s, DEFAULT_GRID, "forward")
        b = solve_stack(s, DEFAULT_GRID, "reverse")
        assert np.abs(f.residual()).max() <= 1e-9
        assert np.abs(b.residual()).max() <= 1e-9
        assert np.abs(f.T - b.T).max() <= 1e-9


def test_eqe_bounded_by_non_reflected():
    s = transparent_mid()
    r = solve_stack(s, DEFAULT_GRID)
    eqe = compute_eqe(s, dual_side=True)
    assert np.all(eqe.forward <= 1 - r.R + 1e-12)
    assert eqe.reverse is not None and eqe.wavelengths[0] == 300 and eqe.wavelengths[-1] == 800
    assert len(eqe.forward) == 101


def test_single_side_has_no_reverse():
    t = preset("opaque")
    eqe = compute_eqe(t.instantiate(LIB, t.midpoint()), dual_side=t.dual_side)
    assert eqe.reverse is None


def test_reverse_absorptance_listed_order():
    s = transparent_mid()
    rev = solve_stack(s, 550.0, "reverse")
    mir = solve_stack(s.mirrored(), 550.0, "forward")
    assert np.array_equal(rev.absorptance, mir.absorptance[::-1])


def test_matches_field_oracle_at_550():
    s = transparent_mid()
    nk = stack_indices(s, [550.0])[:, 0]
    A, R, T = field_absorptance(nk, s.thicknesses, 550.0)
    r = solve_stack(s, 550.0)
    assert np.abs(r.absorptance - A).max() <= 1e-6
    assert abs(r.R - R) <= 1e-6 and abs(r.T - T) <= 1e-6


def test_full_curve_pair_matches_oracle():
    s = transparent_mid()
    eqe = compute_eqe(s, dual_side=True)
    m = s.mirrored()
    for i in range(0, 101, 10):
        lam = eqe.wavelengths[i]
        A_f, _, _ = field_absorptance(stack_indices(s, [lam])[:, 0], s.thicknesses, lam, 2001)
        A_r, _, _ = field_absorptance(stack_indices(m, [lam])[:, 0], m.thicknesses, lam, 2001)
        assert abs(eqe.forward[i] - A_f[s.active_index]) <= 1e-6
        assert abs(eqe.reverse[i] - A_r[m.active_index]) <= 1e-6


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 6))
def test_splitting_invariance(seed, which):
    rng = np.random.default_rng(seed)
    s = random_stack(rng, 7)
    lay = s.layers[which]
    halves = [Layer(lay.material, lay.thickness / 2)] * 2
    split = LayerStack(list(s.layers[:which]) + halves + list(s.layers[which + 1 :]), s.incident_medium, s.exit_medium)
    wl = np.linspace(300, 800, 11)
    a, b = solve_stack(s, wl), solve_stack(split, wl)
    assert np.abs(a.R - b.R).max() <= 1e-9 and np.abs(a.T - b.T).max() <= 1e-9
    merged = np.delete(b.absorptance, which + 1, axis=0)
    merged[which] += b.absorptance[which + 1]
    assert np.abs(a.absorptance - merged).max() <= 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 6))
def test_continuity_in_thickness(seed, which):
    s = random_stack(np.random.default_rng(seed), 7)
    d = s.thicknesses
    d[which] += 1e-6
    wl = np.linspace(300, 800, 11)
    a, b = solve_stack(s, wl), solve_stack(s.with_thicknesses(d), wl)
    assert np.abs(a.R - b.R).max() < 1e-6 and np.abs(a.T - b.T).max() < 1e-6
    assert np.abs(a.absorptance - b.absorptance).max() < 1e-6


def test_transfer_matrix_cross_check():
    rng = np.random.default_rng(3)
    for _ in range(20):
        s = random_stack(rng)
        lam = float(rng.uniform(300, 800))
        r, t = rt_from_matrix(*transfer_matrix(s, lam))
        out = solve_stack(s, lam)
        n0, ne = 1.0, s.exit_medium.n[0]
        assert abs(abs(r) ** 2 - out.R) <= 1e-10
        assert abs(ne * abs(t) ** 2 / n0 - out.T) <= 1e-10


def test_thick_absorber_stays_finite():
    s = LayerStack([Layer(constant("metal", 0.2, 4.0), 1e6), Layer(constant("d", 1.5), 100)], AIR, AIR)
    r = solve_stack(s, 300.0)
    assert np.isfinite(r.R) and r.T == 0.0
    assert abs(r.residual()) <= 1e-9


def test_uncovered_wavelength():
    narrow = constant("n", 1.5, span=(300.0, 800.0))
    with pytest.raises(WavelengthRangeError):
        solve_stack(LayerStack([Layer(narrow, 10)], AIR, AIR), 850.0)


def test_non_finite_is_error():
    # |n|^2 overflows, so the interface coefficients become inf/inf
    s = LayerStack([Layer(constant("c", 1e308, 1e308), 10.0)], AIR, AIR)
    with pytest.raises(TMMError, match="non-finite"):
        solve_stack(s, 500.0)


def test_stack_validation():
    c = constant("c", 1.5)
    with pytest.raises(ValueError):
        LayerStack([], AIR, AIR)
    with pytest.raises(ValueError):
        LayerStack([Layer(c, 0.0)], AIR, AIR)
    with pytest.raises(ValueError):
        LayerStack([Layer(c, 10.0)], AIR, AIR, active_index=1)
    with pytest.raises(ValueError):
        LayerStack([Layer(c, 10.0)], constant("lossy", 1.5, 0.1), AIR)


def test_eqe_curve_validation():
    with pytest.raises(ValueError):
        EQECurve([300, 800], [0.1, 1.2])
    with pytest.raises(ValueError):
        EQECurve([800, 300], [0.1, 0.2])
