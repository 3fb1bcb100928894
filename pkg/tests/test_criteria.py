import numpy as np
import pytest

from inlslab.criteria import (
    Custom,
    DegenerateFit,
    FileFormat,
    NehariRescaled,
    NoBlowupVerdict,
    RescaleFailure,
    ScaledGroundState,
    SpecMismatch,
    build_datum,
    classify,
    coercivity_monitor,
    fit_odi_tail,
    gaussian_mixture,
    kinetic_lower,
    mixture_rescaled,
    nehari_amplitude,
    odi_fit,
    odi_kappa,
    odi_kappa_inferred,
)
from inlslab.evolution import (
    BlowupDetected,
    EvolveControls,
    ReachedHorizon,
    Trajectory,
    evolve,
)
from inlslab.functionals import Diagnostics, kinetic, mass, potential, virial
from inlslab.grid import RadialField, make_grid, save_snapshot
from inlslab.ground_state import solve_ground_state
from inlslab.problem import ProblemSpec, derive_exponents

S1_CHOQ = ProblemSpec.from_decimal(s=1, N=3, lam="0", tau="0.5",
                                   nl_kind="choquard", alpha="2", p="2.1")
S1_LOC = ProblemSpec.from_decimal(s=1, N=3, lam="0", tau="0.5",
                                  nl_kind="local", q="1.5")
S2_LOC = ProblemSpec.from_decimal(s=2, N=5, lam="0", tau="0.5",
                                  nl_kind="local", q="1.7")
S2_CHOQ = ProblemSpec.from_decimal(s=2, N=5, lam="0", tau="0.5",
                                   nl_kind="choquard", alpha="3", p="2.25")


@pytest.fixture(scope="module")
def g128():
    return make_grid(128, 8.0, 3)


@pytest.fixture(scope="module")
def gs128(g128):
    return solve_ground_state(S1_CHOQ, g128)


def test_odi_kappa_values():
    assert odi_kappa(S1_CHOQ) == 2
    assert odi_kappa(S1_LOC) == 2
    assert odi_kappa(S2_LOC) == 4
    assert odi_kappa(S2_CHOQ) == 4
    assert odi_kappa_inferred(S2_LOC)
    assert not odi_kappa_inferred(S2_CHOQ)
    assert not odi_kappa_inferred(S1_LOC)


def test_odi_exact_on_saturated_families():
    # f(t) = 1/(T-t) saturates f' = f^2; extended precision keeps the
    # differencing floor below the 1e-10 target
    T = np.longdouble("1.0")
    t = np.linspace(np.longdouble(0.0), np.longdouble(0.5), 400001)
    c, t_star, mono = fit_odi_tail(t, 1.0 / (T - t), 2)
    assert abs(c - 1.0) < 1e-10
    assert abs(t_star - 1.0) < 1e-10
    assert mono == 1.0
    # f(t) = (3(T-t))^{-1/3} saturates f' = f^4
    c4, t_star4, mono4 = fit_odi_tail(t, (3.0 * (T - t)) ** (np.longdouble(-1) / 3), 4)
    assert abs(c4 - 1.0) < 1e-10
    assert abs(t_star4 - 1.0) < 1e-10
    assert mono4 >= 0.9


def test_odi_scaled_family():
    # f' = c f^2 with c != 1 recovers both the rate and the blow-up time
    T, c_true = 2.0, 0.35
    t = np.linspace(np.longdouble(0.0), np.longdouble(1.0), 200001)
    f = 1.0 / (c_true * (np.longdouble(T) - t))
    c, t_star, _ = fit_odi_tail(t, f, 2)
    assert abs(c - c_true) < 1e-10
    assert abs(t_star - T) < 1e-9


def test_odi_degenerate_inputs():
    t = np.linspace(0.0, 1.0, 50)
    with pytest.raises(DegenerateFit):
        fit_odi_tail(t[:3], np.ones(3), 2)
    with pytest.raises(DegenerateFit):
        fit_odi_tail(t, np.linspace(1.0, -0.5, 50), 2)
    with pytest.raises(DegenerateFit):
        fit_odi_tail(t, np.exp(-t), 2)  # decreasing: c_lower < 0


def test_odi_fit_requires_blowup(gs128, g128):
    u0 = RadialField(g128, (0.5 * np.asarray(gs128.field.values, float))
                     .astype(complex))
    traj = evolve(S1_CHOQ, u0, EvolveControls(t_end=0.05, dt0=1e-3))
    assert isinstance(traj.verdict, ReachedHorizon)
    with pytest.raises(NoBlowupVerdict):
        odi_fit(traj, S1_CHOQ)


def test_odi_fit_on_blowup_run(gs128, g128):
    u0 = RadialField(g128, (1.5 * np.asarray(gs128.field.values, float))
                     .astype(complex))
    ctl = EvolveControls(t_end=10.0, dt0=1e-3, grad_blowup_factor=100.0,
                         conservation_tol=0.05)
    traj = evolve(S1_CHOQ, u0, ctl)
    assert isinstance(traj.verdict, BlowupDetected)
    rep = odi_fit(traj, S1_CHOQ)
    assert rep.kappa == 2
    assert not rep.kappa_inferred
    assert rep.c_lower > 0.0
    assert rep.t_star_bound > traj.t[-1]
    assert rep.monotone_fraction >= 0.9
    assert rep.window[0] >= traj.t[0] and rep.window[1] == traj.t[-1]


def test_classify_scaled_data(gs128, g128):
    phi = np.asarray(gs128.field.values, float)
    up = classify(S1_CHOQ, RadialField(g128, 1.5 * phi), gs128)
    assert up.MG > 1.0
    assert up.ME < 1.0
    assert up.condition_t13
    assert up.in_A_minus
    assert up.virial_sign < 0
    assert up.predicted == "BlowUp"
    down = classify(S1_CHOQ, RadialField(g128, 0.5 * phi), gs128)
    assert down.MG < 1.0
    assert down.virial_sign > 0
    assert not down.condition_t13
    assert down.predicted == "NoPrediction"


def test_classify_threshold_note(gs128, g128):
    phi = np.asarray(gs128.field.values, float)
    rep = classify(S1_CHOQ, RadialField(g128, 1.5 * phi), gs128)
    assert any("conditional" in n for n in rep.notes)


def test_classify_spec_mismatch(gs128, g128):
    u = RadialField(g128, np.asarray(gs128.field.values, float))
    with pytest.raises(SpecMismatch):
        classify(S1_LOC, u, gs128)
    other = make_grid(64, 8.0, 3)
    with pytest.raises(SpecMismatch):
        classify(S1_CHOQ, RadialField(other, np.ones(64)), gs128)


def _synthetic_traj(spec, t, kin, vir, mass_v=1.0, energy=0.5):
    ctl = EvolveControls(t_end=float(t[-1]) if t[-1] > 0 else 1.0, dt0=1e-3)
    traj = Trajectory(spec=spec, controls=ctl, R_used=1.0)
    for ti, ki, vi in zip(t, kin, vir):
        traj.series.append(Diagnostics(
            t=float(ti), mass=mass_v, kinetic=float(ki), potential=1.0,
            energy=energy, virial=float(vi), action=energy + mass_v,
            sup_norm=1.0, morawetz=0.0, dt=1e-3))
    return traj


def test_coercivity_bisection_oracle(gs128):
    # I = -0.6 kinetic exactly: the certified epsilon must be 0.6
    t = np.linspace(0.0, 1.0, 64)
    kin = np.full(64, 2.0)
    traj = _synthetic_traj(S1_CHOQ, t, kin, -0.6 * kin)
    rep = coercivity_monitor(S1_CHOQ, traj, gs128)
    assert not rep.boundary_case
    assert rep.epsilon_star == pytest.approx(0.6, abs=1e-9)
    assert rep.samples == 64


def test_coercivity_boundary_case(gs128):
    t = np.linspace(0.0, 1.0, 32)
    kin = np.full(32, 2.0)
    traj = _synthetic_traj(S1_CHOQ, t, kin, np.zeros(32))
    rep = coercivity_monitor(S1_CHOQ, traj, gs128)
    assert rep.boundary_case
    assert rep.epsilon_star == 0.0
    assert any("boundary" in n for n in rep.notes)


def test_coercivity_no_certificate_on_sign_change(gs128):
    t = np.linspace(0.0, 1.0, 32)
    kin = np.full(32, 2.0)
    vir = -0.5 * kin
    vir[17] = 0.3
    rep = coercivity_monitor(S1_CHOQ, _synthetic_traj(S1_CHOQ, t, kin, vir), gs128)
    assert rep.epsilon_star == 0.0
    assert any("not negative" in n for n in rep.notes)


def test_coercivity_insufficient_samples(gs128):
    t = np.linspace(0.0, 1.0, 5)
    kin = np.full(5, 2.0)
    from inlslab.criteria import InsufficientSamples
    with pytest.raises(InsufficientSamples):
        coercivity_monitor(S1_CHOQ, _synthetic_traj(S1_CHOQ, t, kin, -kin), gs128)


def test_coercivity_on_real_blowup_run(gs128, g128):
    u0 = RadialField(g128, (1.5 * np.asarray(gs128.field.values, float))
                     .astype(complex))
    ctl = EvolveControls(t_end=10.0, dt0=1e-3, grad_blowup_factor=100.0,
                         conservation_tol=0.05)
    traj = evolve(S1_CHOQ, u0, ctl)
    rep = coercivity_monitor(S1_CHOQ, traj, gs128)
    assert rep.datum_condition in ("both", "ss", "t13")
    assert rep.epsilon_star > 0.0
    assert rep.a_minus_stable or rep.a_minus_stable is None
    assert rep.mg_stable or rep.mg_stable is None


def test_kinetic_lower_inverts_the_bound():
    ex = derive_exponents(S1_CHOQ)
    A, B = float(ex.A), float(ex.B)
    p = float(S1_CHOQ.power)
    C, m = 0.04, 3.7
    kin = kinetic_lower(S1_CHOQ, C, m)
    assert kin > 0.0
    lhs = B * C * m ** (A / 2.0) * kin ** (B / 2.0 - 1.0)
    assert lhs == pytest.approx(2.0 * p, rel=1e-12)


def test_gaussian_mixture_and_rescaling(g128):
    amps, widths = [0.7, 0.3], [0.5, 1.5]
    u = gaussian_mixture(g128, amps, widths)
    expect = 0.7 * np.exp(-0.5 * g128.r ** 2) + 0.3 * np.exp(-1.5 * g128.r ** 2)
    assert np.allclose(u.values, expect, rtol=0, atol=1e-15)
    a2, b2 = mixture_rescaled(amps, widths, 2.0, 3)
    assert a2 == pytest.approx([0.7 * 2.0 ** 1.5, 0.3 * 2.0 ** 1.5])
    assert b2 == pytest.approx([2.0, 6.0])
    # the rescaled parameters evaluate the exact scaled profile, so the
    # quadrature mass is invariant well beyond the stated tolerance
    m1 = mass(u)
    m2 = mass(gaussian_mixture(g128, a2, b2))
    assert m2 == pytest.approx(m1, rel=1e-10)


def test_nehari_amplitude_of_ground_state(gs128):
    # I[phi] = 0 up to the discrete stationarity defect
    a = nehari_amplitude(S1_CHOQ, gs128.field)
    assert a == pytest.approx(1.0, rel=5e-3)


def test_nehari_amplitude_zero_field(g128):
    with pytest.raises(RescaleFailure):
        nehari_amplitude(S1_CHOQ, RadialField(g128, np.zeros(g128.M)))


def test_build_datum_scaled(gs128, g128):
    u = build_datum(ScaledGroundState(0.5), gs128, g128)
    assert np.allclose(u.values,
                       0.5 * np.asarray(gs128.field.values, float))
    with pytest.raises(SpecMismatch):
        build_datum(ScaledGroundState(0.5), gs128, make_grid(64, 8.0, 3))


def test_build_datum_nehari(gs128, g128):
    u = build_datum(NehariRescaled(seed=7), gs128, g128)
    vir = virial(S1_CHOQ, u)
    assert abs(vir) <= 1e-10 * kinetic(S1_CHOQ, u)
    again = build_datum(NehariRescaled(seed=7), gs128, g128)
    assert np.array_equal(u.values, again.values)
    other = build_datum(NehariRescaled(seed=8), gs128, g128)
    assert not np.array_equal(u.values, other.values)


def test_build_datum_custom_roundtrip(gs128, g128, tmp_path):
    path = tmp_path / "state.snap"
    save_snapshot(path, gs128.field)
    u = build_datum(Custom(str(path)), gs128, g128)
    ref = np.asarray(gs128.field.values, float)
    assert np.max(np.abs(u.values - ref)) < 1e-6 * np.max(np.abs(ref))


def test_build_datum_custom_grid_mismatch(gs128, tmp_path):
    path = tmp_path / "state.snap"
    save_snapshot(path, gs128.field)
    with pytest.raises(FileFormat):
        build_datum(Custom(str(path)), gs128, make_grid(64, 8.0, 3))


def test_build_datum_custom_garbage(gs128, g128, tmp_path):
    path = tmp_path / "garbage.snap"
    path.write_bytes(b"not a snapshot at all")
    with pytest.raises(FileFormat):
        build_datum(Custom(str(path)), gs128, g128)
