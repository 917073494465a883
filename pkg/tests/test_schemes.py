"""Scheme-level invariants: linearity, pressure laws, divided differences, energies, orders."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acsplit import schemes as S
from acsplit.harness import StudySpec, random_solenoidal_velocity, run_convergence
from acsplit.mac import CELL, MacGrid

from _dense import random_fields, random_forcing
from acsplit.manufactured import Problem


def grid_for(scheme, small=True):
    dim = 3 if 2 not in S.SCHEMES[scheme].dims else 2
    return dim, MacGrid.uniform(dim, (8 if dim == 2 else 5) if small else (16 if dim == 2 else 8))


ALL = sorted(S.SCHEMES)


def forced_state(scheme, seed=0, **kw):
    dim, g = grid_for(scheme)
    rng = np.random.default_rng(seed)
    cfg = S.SchemeConfig(dim=dim, dt=0.13, nu=0.6, lam=0.4, chi=1.2, scheme=scheme, **kw)
    forcing, _ = random_forcing(g, rng)
    u, p = random_fields(g, rng)
    state = S.initial_state(g, cfg, u, p, history=lambda t: random_fields(g, rng))
    return g, cfg, Problem(forcing=forcing), state


@pytest.mark.parametrize("scheme", ALL)
def test_zero_data_stays_zero(scheme):
    dim, g = grid_for(scheme)
    cfg = S.SchemeConfig(dim=dim, dt=0.1, nu=0.5, lam=0.2, scheme=scheme)
    state = S.initial_state(g, cfg, g.velocity(), g.scalar(CELL))
    S.advance(state, cfg, None, 4)
    u, p, _ = S.solution(state, cfg)
    assert all(np.all(c.data == 0.0) for c in u)
    assert np.all(p.interior == 0.0)


@pytest.mark.parametrize("scheme", ALL)
def test_pressure_law_holds_after_every_step(scheme):
    g, cfg, prob, state = forced_state(scheme)
    worst = []
    S.advance(state, cfg, prob, 6, callback=lambda s: worst.append(S.pressure_law_residual(s, cfg)))
    assert max(worst) < 1e-11


@pytest.mark.parametrize("scheme", ["defect2_split", "defect3_split", "defect3_coupled"])
def test_pressure_law_with_nonlinear_and_cg(scheme):
    g, cfg, prob, state = forced_state(scheme, seed=4, nonlinear=True, solver="cg")
    worst = []
    S.advance(state, cfg, prob, 5, callback=lambda s: worst.append(S.pressure_law_residual(s, cfg)))
    assert max(worst) < 1e-9


@pytest.mark.parametrize("scheme", ["defect2_split", "defect3_coupled"])
def test_divided_differences_are_bitwise(scheme):
    g, cfg, prob, state = forced_state(scheme, seed=1)
    S.advance(state, cfg, prob, 5)
    n, dt = state.n, cfg.dt
    u0, p0 = state["u0"], state["p0"]
    for a, b in zip(state["du0"][n], (u0[n] - u0[n - 1]) / dt):
        assert np.array_equal(a.data, b.data)
    assert np.array_equal(state["dp0"][n].data, ((p0[n] - p0[n - 1]) / dt).data)
    m = n - 1
    for a, b in zip(state["du1"][m], (state["u1"][m] - state["u1"][m - 1]) / dt):
        assert np.array_equal(a.data, b.data)
    if S.SCHEMES[scheme].stages == 3:
        for a, b in zip(state["d2u0"][n], (state["du0"][n] - state["du0"][n - 1]) / dt):
            assert np.array_equal(a.data, b.data)


@pytest.mark.parametrize("scheme", ["ac1", "gs2d", "jacobi_nd", "dirsplit1", "defect2_split"])
def test_linearity_in_the_data(scheme):
    """Stokes steps are linear: doubling data and forcing doubles the result."""
    g, cfg, prob, state = forced_state(scheme, seed=2)
    g2, _, _, state2 = forced_state(scheme, seed=2)
    for name, series in state2.series.items():
        for key in series:
            series[key] = series[key] * 2.0
    prob2 = Problem(forcing=lambda k, X, t: 2.0 * prob.forcing(k, X, t))
    S.advance(state, cfg, prob, 3)
    S.advance(state2, cfg, prob2, 3)
    u, p, _ = S.solution(state, cfg)
    u2, p2, _ = S.solution(state2, cfg)
    for a, b in zip(u, u2):
        assert np.allclose(2.0 * a.interior, b.interior, atol=1e-11)
    assert np.allclose(2.0 * p.interior, p2.interior, atol=1e-11)


# -- energies --------------------------------------------------------------------------


@pytest.mark.parametrize("scheme", ALL)
def test_energy_is_quadratic_and_zero_at_rest(scheme):
    dim, g = grid_for(scheme)
    cfg = S.SchemeConfig(dim=dim, dt=0.1, scheme=scheme)
    rng = np.random.default_rng(3)
    u = random_solenoidal_velocity(g, rng)
    p = g.scalar(CELL)
    p.interior = rng.standard_normal(p.interior.shape)
    s1 = S.initial_state(g, cfg, u, p)
    s2 = S.initial_state(g, cfg, u * 2.0, p * 2.0)
    S.advance(s1, cfg, None, 2)
    S.advance(s2, cfg, None, 2)
    e1, e2 = S.energy(scheme, s1, cfg), S.energy(scheme, s2, cfg)
    assert e2.total == pytest.approx(4.0 * e1.total, rel=1e-12)
    assert e1.heuristic == (not S.SCHEMES[scheme].proved or S.SCHEMES[scheme].kind not in ("simple", "half"))
    zero = S.initial_state(g, cfg, g.velocity(), g.scalar(CELL))
    S.advance(zero, cfg, None, 2)
    assert S.energy(scheme, zero, cfg).total == 0.0


def test_gs3d_energy_heuristic_bounded():
    """The unmodified 3D Gauss-Seidel scheme has no proof; it is only checked empirically."""
    g = MacGrid.uniform(3, 12)
    cfg = S.SchemeConfig(dim=3, dt=0.1, nu=1.0, scheme="gs3d")
    u = random_solenoidal_velocity(g, np.random.default_rng(0))
    state = S.initial_state(g, cfg, u, g.scalar(CELL))
    e0 = S.energy("gs3d", state, cfg)
    assert e0.heuristic
    kin0 = e0.terms["kinetic"]
    S.advance(state, cfg, None, 100)
    assert S.energy("gs3d", state, cfg).terms["kinetic"] <= 1.01 * kin0


def test_jacobi2d_unstable_for_small_viscosity():
    """Jacobi splitting needs viscosity comparable to varpi; at nu = 0.01 it blows up."""
    g = MacGrid.uniform(2, 16)
    cfg = S.SchemeConfig(dim=2, dt=1.0, nu=0.01, scheme="jacobi2d")
    u = random_solenoidal_velocity(g, np.random.default_rng(0))
    state = S.initial_state(g, cfg, u, g.scalar(CELL))
    e0 = S.energy("jacobi2d", state, cfg).total
    try:
        S.advance(state, cfg, None, 200)
        grew = S.energy("jacobi2d", state, cfg).total > 1e3 * e0
    except S.SchemeDivergenceError:
        grew = True
    assert grew


# -- lemma identity --------------------------------------------------------------------


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=5, max_size=5))
def test_lemma_identity_property(v):
    lhs, rhs = S.lemma_identity(*v)
    # the right side sums squares that can cancel to zero, so roundoff scales with |v|^2
    assert abs(lhs - rhs) <= 1e-13 * (1 + sum(x * x for x in v))


def test_lemma_identity_cases():
    assert S.lemma_identity(0, 0, 0, 0, 0) == (0.0, 0.0)
    lhs, rhs = S.lemma_identity(1, 1, 1, 1, 1)
    # 2 (3 + 3 + 3) = 9 + 9
    assert lhs == rhs == 18.0


# -- configuration, failures, bookkeeping --------------------------------------------------


@pytest.mark.parametrize("kw", [
    dict(dim=4), dict(dt=0.0), dict(nu=-1.0), dict(chi=0.0), dict(lam=-0.1), dict(scheme="nope"),
    dict(scheme="gs2d", dim=3), dict(scheme="gs3d", dim=2), dict(scheme="dirsplit1", dim=3),
    dict(mixed_correction="other"), dict(dirsplit_pressure="lagged"), dict(solver="lu"),
    dict(scheme="dirsplit1", lam=np.ones((4, 4))),
])
def test_config_validation(kw):
    base = dict(dim=2, scheme="gs2d")
    base.update(kw)
    with pytest.raises(S.SchemeConfigError):
        S.SchemeConfig(**base)


def test_get_stepper_and_grid_mismatch():
    assert S.get_stepper("ac1") is S.step_ac1
    with pytest.raises(S.SchemeConfigError):
        S.get_stepper("ac9")
    cfg = S.SchemeConfig(dim=2, scheme="ac1")
    g, other = MacGrid.uniform(2, 4), MacGrid.uniform(2, 5)
    with pytest.raises(S.SchemeConfigError):
        S.initial_state(g, cfg, other.velocity(), other.scalar(CELL))
    with pytest.raises(S.SchemeConfigError):
        S.initial_state(MacGrid.uniform(3, 4), cfg, MacGrid.uniform(3, 4).velocity(),
                        MacGrid.uniform(3, 4).scalar(CELL))


def test_nan_raises_divergence_error():
    g = MacGrid.uniform(2, 6)
    cfg = S.SchemeConfig(dim=2, scheme="gs2d")
    u = g.velocity()
    u[0].interior = np.full(u[0].interior.shape, np.nan)
    state = S.initial_state(g, cfg, u, g.scalar(CELL))
    with pytest.raises(S.SchemeDivergenceError):
        S.advance(state, cfg, None, 1)


def test_defect_output_lag_and_composite():
    g, cfg, prob, state = forced_state("defect3_split")
    assert S.output_lag(cfg) == 2
    S.advance(state, cfg, prob, 1)
    with pytest.raises(ValueError):
        S.solution(state, cfg)
    S.advance(state, cfg, prob, 3)
    u, p, t = S.solution(state, cfg)
    m = state.n - 2
    assert t == pytest.approx(m * cfg.dt)
    want = state["u0"][m] + cfg.dt * state["u1"][m] + cfg.dt**2 * state["u2"][m]
    for a, b in zip(u, want):
        assert np.array_equal(a.data, b.data)


def test_half_step_pressure_extrapolation():
    g, cfg, prob, state = forced_state("dirsplit1")
    S.advance(state, cfg, prob, 3)
    _, p, t = S.solution(state, cfg)
    ps = state["p"]
    assert t == pytest.approx(3 * cfg.dt)
    assert np.allclose(p.interior, 1.5 * ps[2.5].interior - 0.5 * ps[1.5].interior, atol=0)


# -- temporal orders ----------------------------------------------------------------------

LADDER = {
    "ac1": 1, "gs2d": 1, "jacobi2d": 1, "jacobi_nd": 1, "dirsplit1": 1, "defect1_split": 1,
    "bdf2_bootstrap": 2, "dirsplit_defect2": 2, "defect2_split": 2, "defect2_coupled": 2,
    "defect3_split": 3, "defect3_coupled": 3,
}


@pytest.mark.parametrize("scheme", sorted(LADDER))
def test_order_ladder(scheme):
    order = LADDER[scheme]
    dts = (0.1, 0.05, 0.025) if order == 1 else (0.05, 0.025, 0.0125)
    spec = StudySpec(scheme=scheme, case="mms2d", nx=16, dts=dts, t_final=1.0)
    report = run_convergence(spec)
    for col in ("order_u", "order_p"):
        assert report.column(col)[-1] == pytest.approx(order, abs=0.3), col
