"""End-to-end acceptance gate.

One test per deliverable property, each ending in a single PASS/FAIL line with
the measured numbers (visible with -s, or in the failure report otherwise).
Trajectories and certificates are shared module-wide; the whole gate is
compute-heavy (tens of minutes on one core) and deterministic.

Three gates are expected to fail in part at the pinned resolution and are
left failing on purpose rather than loosened: the stationary-identity defect
clause of the certificate gate (the defects are O(dr^2) quadrature residuals,
~1e-4..1e-5 at M=1024); the two fourth-order rows of the conservation gate
(axis-corner drift floors near 2e-2 local and 1e-5 convolution that step
refinement does not remove at feasible cost); and the fourth-order local row
of the dichotomy gate (its multiplier r^{-1}|u|^{1.4} outruns the kinetic
norm, freezing the adaptive step while conservation degrades, so the spike
cannot be followed to the required growth factor).

Monitors that quantify over blow-up-run samples evaluate the certified prefix
of each trajectory (samples whose energy drift is within the run's
conservation budget); past the 10x kinetic signature the integrator knowingly
sacrifices conservation to follow the spike, and those samples certify
nothing.
"""

import math
import time

import numpy as np
import pytest
from scipy.special import erf

from inlslab import criteria
from inlslab.criteria import ScaledGroundState, build_datum, fit_odi_tail
from inlslab.evolution import (
    BlowupDetected,
    EvolveControls,
    ReachedHorizon,
    Trajectory,
    evolve,
    morawetz_rate_check,
)
from inlslab.functionals import kinetic, mass, potential
from inlslab.grid import (
    apply_K_values,
    get_kernel,
    make_grid,
    quadrature,
)
from inlslab.ground_state import (
    ascend_weinstein,
    solve_ground_state,
    weinstein_quotient,
)
from inlslab.problem import ProblemSpec, derive_exponents

PINNED = {
    "s1-choq-l0": ProblemSpec.from_decimal(s=1, N=3, lam="0", tau="0.5",
                                           nl_kind="choquard", alpha="2", p="2.1"),
    "s1-choq-l1": ProblemSpec.from_decimal(s=1, N=3, lam="1", tau="0.5",
                                           nl_kind="choquard", alpha="2", p="2.1"),
    "s2-choq": ProblemSpec.from_decimal(s=2, N=5, lam="0", tau="0.5",
                                        nl_kind="choquard", alpha="3", p="2.25"),
    "s2-loc": ProblemSpec.from_decimal(s=2, N=5, lam="0", tau="0.5",
                                       nl_kind="local", q="1.7"),
}
S1_LOC = ProblemSpec.from_decimal(s=1, N=3, lam="0", tau="0.5",
                                  nl_kind="local", q="1.5")

CERT_M, CERT_RMAX = 1024, 15.0


def _line(gate, ok, detail):
    print(f"[acceptance {gate}] {'PASS' if ok else 'FAIL'}: {detail}")


# ---------------------------------------------------------------------------
# shared expensive computations

@pytest.fixture(scope="module")
def certified():
    """Pinned-grid ground states with solve wall times."""
    out = {}
    for name, spec in PINNED.items():
        g = make_grid(CERT_M, CERT_RMAX, spec.N)
        t0 = time.perf_counter()
        gs = solve_ground_state(spec, g)
        out[name] = (gs, time.perf_counter() - t0)
    return out


def _detection_setup(name, spec, certified):
    # second-order spikes saturate at the grid scale near 0.18*mu_max/kin0,
    # so s=1 detection needs the finer box; the fourth-order saturation
    # ceiling is ~dr^-4 and the certificate grid has ample headroom (and is
    # the box where the slow-tailed s=2 Choquard profile actually certifies)
    if spec.s == 1:
        g = make_grid(1536, 8.0, spec.N)
        gs = solve_ground_state(spec, g)
    else:
        gs = certified[name][0]
        g = gs.field.grid
    return g, gs


@pytest.fixture(scope="module")
def blowup_runs(certified):
    """Superthreshold (1.5x) runs on the four pinned problems, classified
    before evolving."""
    out = {}
    for name, spec in PINNED.items():
        g, gs = _detection_setup(name, spec, certified)
        u0 = build_datum(ScaledGroundState(1.5), gs, g)
        cls = criteria.classify(spec, u0, gs)
        ctl = EvolveControls(t_end=1.0, dt0=1e-3, conservation_tol=0.05,
                             max_steps=80000)
        out[name] = (spec, gs, u0, cls, evolve(spec, u0, ctl))
    return out


@pytest.fixture(scope="module")
def horizon_runs(certified):
    """Subthreshold (0.5x) runs over t in [0,1] at the pinned grid, covering
    both s values and both nonlinearities. The second-order local row needs a
    finer step than the others to clear the 1e-6 energy budget (its axis
    corner r^{-2 tau} |u|^{2(q-1)} is the sharpest of the four)."""
    specs = dict(PINNED)
    specs["s1-loc"] = S1_LOC
    out = {}
    for name, spec in specs.items():
        if name in certified:
            gs = certified[name][0]
        else:
            gs = solve_ground_state(spec, make_grid(CERT_M, CERT_RMAX, spec.N))
        u0 = build_datum(ScaledGroundState(0.5), gs, gs.field.grid)
        ctl = EvolveControls(t_end=1.0, dt0=1e-5 if name == "s1-loc" else 1e-4,
                             conservation_tol=0.05, max_steps=250000)
        out[name] = (spec, gs, evolve(spec, u0, ctl))
    return out


@pytest.fixture(scope="module")
def collapse_runs(certified):
    """Runs whose growth trigger is disabled so the step clamp itself ends
    them; the observed dt-collapse time anchors the blow-up-time estimate."""
    out = {}
    for name, dt_min in (("s1-choq-l0", 1e-6), ("s2-loc", 1e-5)):
        spec = PINNED[name]
        g, gs = _detection_setup(name, spec, certified)
        u0 = build_datum(ScaledGroundState(1.5), gs, g)
        ctl = EvolveControls(t_end=1.0, dt0=1e-3, dt_min=dt_min,
                             grad_blowup_factor=1e12, conservation_tol=0.5,
                             max_steps=150000)
        out[name] = (spec, evolve(spec, u0, ctl))
    return out


# ---------------------------------------------------------------------------
# gates

def test_ground_state_certificates(certified):
    """Residual <= 1e-8 and stationary-identity defects <= 1e-6 on the four
    pinned problems at M=1024, r_max=15, each solve under two minutes."""
    rows = []
    ok = True
    for name, (gs, wall) in certified.items():
        row_ok = (gs.residual <= 1e-8
                  and gs.pohozaev_defect_1 <= 1e-6
                  and gs.pohozaev_defect_2 <= 1e-6
                  and wall < 120.0)
        ok = ok and row_ok
        rows.append(f"{name}: res={gs.residual:.1e} "
                    f"defects=({gs.pohozaev_defect_1:.1e},"
                    f"{gs.pohozaev_defect_2:.1e}) wall={wall:.0f}s")
    _line("1/9 ground-state certificates", ok, "; ".join(rows))
    assert ok, "; ".join(rows)


def test_sharp_constant_bounds(certified):
    """Closed-form sharp constant dominates the quotient on 2000 random fields
    (slack 1e-6) and gradient ascent reaches it to 1e-3, per pinned problem."""
    rows = []
    ok = True
    for i, (name, (gs, _)) in enumerate(certified.items()):
        spec = gs.spec
        g = gs.field.grid
        C = gs.sharp_constant
        rng = np.random.default_rng(100 + i)
        worst = 0.0
        for _ in range(2000):
            n = int(rng.integers(1, 4))
            u = criteria.gaussian_mixture(g, rng.uniform(0.1, 2.0, n),
                                          rng.uniform(0.2, 4.0, n))
            worst = max(worst, weinstein_quotient(spec, u) / C)
        W, _v = ascend_weinstein(spec, g, np.exp(-g.r ** 2), steps=4000)
        gap = abs(W - C) / C
        row_ok = worst <= 1.0 + 1e-6 and gap <= 1e-3
        ok = ok and row_ok
        rows.append(f"{name}: worst_quotient={worst:.6f}C ascent_gap={gap:.1e}")
    _line("2/9 sharp-constant bound", ok, "; ".join(rows))
    assert ok, "; ".join(rows)


def test_conservation(horizon_runs):
    """Subthreshold runs over t in [0,1]: mass drift <= 1e-8 and energy drift
    <= 1e-6, both s values, both nonlinearities."""
    rows = []
    ok = True
    for name in ("s1-loc", "s1-choq-l0", "s2-loc", "s2-choq"):
        spec, gs, traj = horizon_runs[name]
        m = traj.column("mass")
        e = traj.column("energy")
        dm = float(np.max(np.abs(m - m[0])) / m[0])
        de = float(np.max(np.abs(e - e[0]))
                   / max(abs(e[0]), traj.series[0].kinetic))
        row_ok = isinstance(traj.verdict, ReachedHorizon) \
            and dm <= 1e-8 and de <= 1e-6
        ok = ok and row_ok
        rows.append(f"{name}: dm={dm:.1e} de={de:.1e}")
    _line("3/9 conservation", ok, "; ".join(rows))
    assert ok, "; ".join(rows)


def test_blowup_dichotomy(blowup_runs, horizon_runs):
    """1.5x data (MG>1, I<0, ME<1 checked before the run) must end in detected
    blow-up with 1e4x kinetic growth; 0.5x data must reach the horizon with
    kinetic ratio <= 3. Four pinned problems."""
    rows = []
    ok = True
    for name in PINNED:
        spec, gs, u0, cls, traj = blowup_runs[name]
        kin = traj.column("kinetic")
        ratio = float(kin.max() / kin[0])
        up_ok = (cls.MG > 1.0 and cls.virial_sign < 0 and cls.ME < 1.0
                 and isinstance(traj.verdict, BlowupDetected)
                 and ratio >= 1e4)
        _h_spec, _h_gs, h_traj = horizon_runs[name]
        h_kin = h_traj.column("kinetic")
        h_ratio = float(h_kin.max() / h_kin[0])
        down_ok = isinstance(h_traj.verdict, ReachedHorizon) and h_ratio <= 3.0
        ok = ok and up_ok and down_ok
        rows.append(f"{name}: up({type(traj.verdict).__name__},"
                    f"x{ratio:.2e}) down({type(h_traj.verdict).__name__},"
                    f"x{h_ratio:.2f})")
    _line("4/9 blow-up dichotomy", ok, "; ".join(rows))
    assert ok, "; ".join(rows)


def test_along_flow_monitors(blowup_runs):
    """On every blow-up run: potential-well membership never violated,
    coercivity margin found by bisection is positive, and the virial-forced
    kinetic lower bound holds at every sample with 1e-3 slack."""
    rows = []
    ok = True
    for name, (spec, gs, u0, cls, traj) in blowup_runs.items():
        rep = criteria.coercivity_monitor(spec, traj, gs)
        kin = traj.column("kinetic")
        bound = criteria.kinetic_lower(spec, gs.sharp_constant, mass(u0))
        viol = int(np.sum(kin < bound * (1.0 - 1e-3)))
        row_ok = (rep.datum_condition == "both"
                  and rep.a_minus_stable is True
                  and rep.mg_stable is True
                  and rep.epsilon_star > 0.0
                  and viol == 0)
        ok = ok and row_ok
        rows.append(f"{name}: eps*={rep.epsilon_star:.3f} "
                    f"A-stable={rep.a_minus_stable} lower-bound-viol={viol}")
    _line("5/9 along-flow monitors", ok, "; ".join(rows))
    assert ok, "; ".join(rows)


def test_morawetz_rate(blowup_runs, horizon_runs):
    """With R = 20x the RMS radius, the localized-virial rate inequality holds
    at >= 99% of samples on every run, and the monitor decreases on the final
    third of each blow-up run."""
    rows = []
    ok = True
    runs = [(n, s, t) for n, (s, _g, _u, _c, t) in blowup_runs.items()]
    runs += [(n + "(sub)", s, t) for n, (s, _g, t) in horizon_runs.items()]
    for name, spec, traj in runs:
        rep = morawetz_rate_check(traj, spec, traj.R_used)
        row_ok = rep.violated_fraction <= 0.01
        if isinstance(traj.verdict, BlowupDetected):
            row_ok = row_ok and rep.decreasing_slope < 0.0
        ok = ok and row_ok
        rows.append(f"{name}: viol={rep.violated_fraction:.2%}")
    _line("6/9 localized-virial rate", ok, "; ".join(rows))
    assert ok, "; ".join(rows)


def test_odi_estimator(blowup_runs, collapse_runs):
    """Exact (<1e-10) on saturated synthetic families of both orders; on real
    runs the fitted rate is positive and the blow-up-time bound sits within
    20% of the observed dt-collapse time."""
    rows = []
    ok = True
    # synthetic: f' = f^2 with f = 1/(T-t), and f' = f^4 with f = (3(T-t))^(-1/3)
    t = np.linspace(0.0, 0.5, 400001, dtype=np.longdouble)
    T = np.longdouble(1.0)
    for kappa, f in ((2, 1.0 / (T - t)), (4, (3.0 * (T - t)) ** (-1.0 / 3.0))):
        c, t_star, _mono = fit_odi_tail(t, f, kappa)
        err = max(abs(c - 1.0), abs(t_star - 1.0))
        ok = ok and err < 1e-10
        rows.append(f"synthetic k={kappa}: err={err:.1e}")
    for name, (spec, _gs, _u0, _cls, traj) in blowup_runs.items():
        rep = criteria.odi_fit(traj, spec)
        ok = ok and rep.c_lower > 0.0
        rows.append(f"{name}: c={rep.c_lower:.2e}")
    for name, (spec, traj) in collapse_runs.items():
        row_ok = isinstance(traj.verdict, BlowupDetected) \
            and traj.verdict.trigger == "dt-collapse"
        rep = criteria.odi_fit(traj, spec)
        gap = abs(rep.t_star_bound - traj.verdict.t) / traj.verdict.t
        row_ok = row_ok and rep.c_lower > 0.0 and gap <= 0.20
        ok = ok and row_ok
        rows.append(f"{name}(collapse): t={traj.verdict.t:.3f} "
                    f"t*={rep.t_star_bound:.3f} gap={gap:.1%}")
    _line("7/9 blow-up-time estimator", ok, "; ".join(rows))
    assert ok, "; ".join(rows)


def test_scaling_laws():
    """Analytic resampling u -> rho^{N/2} u(rho x): mass invariant to 1e-8,
    kinetic ~ rho^{2s} to 1e-4, potential ~ rho^{sB} to 1e-3, rho in {1/2, 2}."""
    rows = []
    ok = True
    for i, (name, spec) in enumerate(PINNED.items()):
        g = make_grid(2048, 10.0, spec.N)
        ex = derive_exponents(spec)
        sB = float(spec.s) * float(ex.B)
        rng = np.random.default_rng(7 + i)
        amps = list(rng.uniform(0.3, 1.0, 2))
        widths = list(rng.uniform(0.8, 2.0, 2))
        u = criteria.gaussian_mixture(g, amps, widths)
        m0, k0, p0 = mass(u), kinetic(spec, u), potential(spec, u)
        worst = 0.0
        row_ok = True
        for rho in (0.5, 2.0):
            a2, w2 = criteria.mixture_rescaled(amps, widths, rho, spec.N)
            ur = criteria.gaussian_mixture(g, a2, w2)
            dm = abs(mass(ur) - m0) / m0
            dk = abs(kinetic(spec, ur) - rho ** (2 * spec.s) * k0) \
                / (rho ** (2 * spec.s) * k0)
            dp = abs(potential(spec, ur) - rho ** sB * p0) / (rho ** sB * p0)
            row_ok = row_ok and dm <= 1e-8 and dk <= 1e-4 and dp <= 1e-3
            worst = max(worst, dm, dk, dp)
        ok = ok and row_ok
        rows.append(f"{name}: worst={worst:.1e}")
    _line("8/9 scaling laws", ok, "; ".join(rows))
    assert ok, "; ".join(rows)


def test_discretization_quality():
    """Every operator family shows observed order >= 1.9 on an analytic field
    across M in {256, 512, 1024}; the Coulomb convolution matches its closed
    form to 1e-4."""
    rows = []
    ok = True
    cases = [
        ("s1-l0", PINNED["s1-choq-l0"], 3,
         lambda r: (6.0 - 4.0 * r ** 2)),
        ("s1-l1", PINNED["s1-choq-l1"], 3,
         lambda r: (6.0 - 4.0 * r ** 2) + 1.0 / r ** 2),
        ("s2", PINNED["s2-loc"], 5,
         lambda r: 16.0 * r ** 4 - 112.0 * r ** 2 + 140.0),
    ]
    for name, spec, N, shape in cases:
        errs = []
        for M in (256, 512, 1024):
            g = make_grid(M, 10.0, N)
            u = np.exp(-g.r ** 2)
            err = apply_K_values(spec, g, u) - shape(g.r) * u
            errs.append(math.sqrt(quadrature(g, err ** 2)))
        orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
        row_ok = min(orders) >= 1.9
        ok = ok and row_ok
        rows.append(f"{name}: orders=({orders[0]:.2f},{orders[1]:.2f})")
    g = make_grid(512, 12.0, 3)
    conv = get_kernel(g, 2.0).apply(np.exp(-g.r ** 2))
    exact = np.sqrt(math.pi) * erf(g.r) / (4.0 * g.r)
    m = g.r < 8.0
    rel = float(np.max(np.abs(conv[m] - exact[m]) / exact[m]))
    ok = ok and rel < 1e-4
    rows.append(f"coulomb: rel={rel:.1e}")
    _line("9/9 discretization quality", ok, "; ".join(rows))
    assert ok, "; ".join(rows)
