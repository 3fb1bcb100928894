"""Blow-up sufficient conditions, along-flow monitors, and the ODI estimator.

Decision procedures on initial data (potential-well membership, scale-invariant
gradient/energy ratios against the ground state), coercivity and stability monitors
along trajectories, the ordinary-differential-inequality fit that upper-bounds the
blow-up time from the accumulated kinetic integral, and datum constructors for the
dichotomy experiments.

Every verdict that compares the action against the ground-state threshold is
conditional on the threshold being attained by the computed ground state; reports
carry an explicit note to that effect.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional, Union

import numpy as np

from .grid import Grid, RadialField, load_snapshot
from .functionals import kinetic, mass, potential, virial
from .ground_state import GroundState
from .problem import ProblemSpec, derive_exponents

THRESHOLD_NOTE = "conditional on m = S[phi]"


class SpecMismatch(ValueError):
    """Datum, trajectory, or ground state belong to different problems/grids."""


class InsufficientSamples(ValueError):
    """Monitor needs more trajectory samples or snapshots."""


class NoBlowupVerdict(ValueError):
    """ODI fit requires a trajectory that ended in detected blow-up."""


class DegenerateFit(ValueError):
    """ODI fit produced a nonpositive rate constant."""


class RescaleFailure(ValueError):
    """Amplitude rescaling impossible (vanishing potential term)."""


class FileFormat(ValueError):
    """Snapshot file malformed or inconsistent with the target grid."""


def odi_kappa(spec: ProblemSpec) -> int:
    """ODI exponent: f' >= c f^kappa with kappa = 2 (s=1) or 4 (s=2)."""
    return 2 if spec.s == 1 else 4


def odi_kappa_inferred(spec: ProblemSpec) -> bool:
    """The s=2 local-nonlinearity exponent is carried over by parallel structure
    rather than stated; reports flag it."""
    return spec.s == 2 and not spec.is_choquard


# ---------------------------------------------------------------------------
# initial-data classification

@dataclass
class Classification:
    virial_sign: float
    action_vs_m: float        # S[u0] - m_hat
    in_A_minus: bool
    MG: float
    ME: float
    condition_ss: bool
    condition_t13: bool
    predicted: str            # "BlowUp" | "NoPrediction"
    notes: list = dc_field(default_factory=list)


def _check_same_problem(spec: ProblemSpec, u0: RadialField, gs: GroundState):
    if gs.spec != spec:
        raise SpecMismatch("ground state was certified for a different problem")
    if u0.grid.key() != gs.field.grid.key():
        raise SpecMismatch(
            f"datum grid {u0.grid.key()} != ground-state grid {gs.field.grid.key()}")


def classify(spec: ProblemSpec, u0: RadialField, gs: GroundState) -> Classification:
    """Evaluates both blow-up sufficient conditions on a datum.

    MG = (mass ratio)^{alpha_c/2} (kinetic ratio)^{1/2},
    ME = (mass ratio)^{alpha_c} (energy ratio); the potential-well condition is
    action below the ground-state threshold with negative virial.
    """
    _check_same_problem(spec, u0, gs)
    ex = derive_exponents(spec)
    alpha_c = float(ex.alpha_c)
    m = mass(u0)
    kin = kinetic(spec, u0)
    pot = potential(spec, u0)
    power = float(spec.power)
    B = float(ex.B)
    en = kin - pot / power
    vir = kin - (B / (2.0 * power)) * pot
    act = en + m
    m_hat = gs.action

    MG = (m / gs.mass) ** (alpha_c / 2.0) * (kin / gs.kinetic) ** 0.5
    ME = (m / gs.mass) ** alpha_c * (en / gs.energy)
    in_a_minus = (act < m_hat) and (vir < 0.0)
    cond_ss = in_a_minus
    cond_t13 = (MG > 1.0) and (ME < 1.0)
    notes = []
    if cond_ss:
        notes.append(THRESHOLD_NOTE)
    if gs.status != "verified":
        notes.append(f"ground state status: {gs.status}")
    return Classification(
        virial_sign=float(np.sign(vir)), action_vs_m=act - m_hat,
        in_A_minus=in_a_minus, MG=MG, ME=ME,
        condition_ss=cond_ss, condition_t13=cond_t13,
        predicted="BlowUp" if (cond_ss or cond_t13) else "NoPrediction",
        notes=notes)


# ---------------------------------------------------------------------------
# along-flow coercivity / stability monitor

@dataclass
class CoercivityReport:
    epsilon_star: float
    boundary_case: bool
    datum_condition: str          # "ss" | "t13" | "both" | "none"
    ss_inequality_ok: Optional[bool]
    ss_max_violation: Optional[float]
    a_minus_stable: Optional[bool]
    mg_stable: Optional[bool]
    samples: int
    notes: list = dc_field(default_factory=list)


def coercivity_monitor(spec: ProblemSpec, traj, gs: GroundState) -> CoercivityReport:
    """Largest epsilon in (0, 1] with I[u(t)] + epsilon kinetic(t) <= 0 on all
    samples (bisection, 40 steps), plus potential-well and ratio stability checks.

    For threshold data (virial identically ~0) reports the boundary case with no
    certificate.
    """
    if gs.spec != spec:
        raise SpecMismatch("ground state was certified for a different problem")
    n = len(traj.series)
    if n < 10:
        raise InsufficientSamples(f"need >= 10 samples, have {n}")
    I_t = traj.column("virial")
    kin_t = traj.column("kinetic")
    S_t = traj.column("action")
    m_t = traj.column("mass")
    E_t = traj.column("energy")
    ex = derive_exponents(spec)
    alpha_c, B = float(ex.alpha_c), float(ex.B)
    m_hat = gs.action
    notes = []

    MG_t = (m_t / gs.mass) ** (alpha_c / 2.0) * (kin_t / gs.kinetic) ** 0.5
    ME_0 = (m_t[0] / gs.mass) ** alpha_c * (E_t[0] / gs.energy)
    ss0 = (S_t[0] < m_hat) and (I_t[0] < 0.0)
    t13_0 = (MG_t[0] > 1.0) and (ME_0 < 1.0)
    datum_condition = {(True, True): "both", (True, False): "ss",
                       (False, True): "t13", (False, False): "none"}[(ss0, t13_0)]
    if datum_condition == "none":
        notes.append("datum satisfies neither sufficient condition; "
                     "monitor output is advisory")
    if ss0:
        notes.append(THRESHOLD_NOTE)

    if np.max(np.abs(I_t)) <= 1e-6 * np.max(kin_t):
        notes.append("boundary case, no certificate")
        return CoercivityReport(
            epsilon_star=0.0, boundary_case=True, datum_condition=datum_condition,
            ss_inequality_ok=None, ss_max_violation=None,
            a_minus_stable=None, mg_stable=None, samples=n, notes=notes)

    def holds(eps: float) -> bool:
        return bool(np.all(I_t + eps * kin_t <= 0.0))

    if not np.all(I_t < 0.0):
        eps_star = 0.0
        notes.append("virial not negative on all samples; no coercivity certificate")
    elif holds(1.0):
        eps_star = 1.0
    else:
        lo, hi = 0.0, 1.0
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if holds(mid):
                lo = mid
            else:
                hi = mid
        eps_star = lo

    ss_ok = None
    ss_viol = None
    if ss0:
        slack = 1e-6 * abs(m_hat)
        viol = I_t + (B / 4.0) * (m_hat - S_t) - slack
        ss_viol = float(np.max(viol))
        ss_ok = bool(ss_viol <= 0.0)
    a_minus_stable = bool(np.all((S_t < m_hat) & (I_t < 0.0))) if ss0 else None
    mg_stable = bool(np.all(MG_t > 1.0)) if t13_0 else None
    return CoercivityReport(
        epsilon_star=eps_star, boundary_case=False, datum_condition=datum_condition,
        ss_inequality_ok=ss_ok, ss_max_violation=ss_viol,
        a_minus_stable=a_minus_stable, mg_stable=mg_stable, samples=n, notes=notes)


def kinetic_lower(spec: ProblemSpec, sharp_C: float, mass_value: float) -> float:
    """Lower bound on the kinetic norm forced by a negative virial.

    From I < 0 and the sharp interpolation bound:
    kinetic > (2p / (B C mass^{A/2}))^{1/(B/2 - 1)}.
    """
    ex = derive_exponents(spec)
    A, B = float(ex.A), float(ex.B)
    power = float(spec.power)
    base = 2.0 * power / (B * sharp_C * mass_value ** (A / 2.0))
    return base ** (1.0 / (B / 2.0 - 1.0))


# ---------------------------------------------------------------------------
# ODI blow-up-time estimator

@dataclass
class OdiReport:
    window: tuple
    c_lower: float
    t_star_bound: float
    monotone_fraction: float
    kappa: int
    kappa_inferred: bool


def fit_odi_tail(t: np.ndarray, f: np.ndarray, kappa: int):
    """Fits f' >= c f^kappa on the given samples.

    Returns (c_lower, t_star_bound, monotone_fraction) with
    t_star_bound = t_end + f(t_end)^{1-kappa} / ((kappa-1) c_lower), the exact
    blow-up time of the saturated inequality.
    """
    # extended-precision samples are honored so synthetic saturated families
    # can be checked below the float64 differencing floor
    t = np.asarray(t)
    f = np.asarray(f)
    if t.dtype != np.longdouble:
        t = t.astype(float)
    if f.dtype != np.longdouble:
        f = f.astype(float)
    if t.size < 5:
        raise DegenerateFit(f"need >= 5 samples in the fit window, have {t.size}")
    if np.any(f <= 0.0):
        raise DegenerateFit("kinetic integral not positive on the fit window")
    fp = np.gradient(f, t, edge_order=2)
    ratio = fp / f ** kappa
    c_lower = float(np.min(ratio))
    if c_lower <= 0.0:
        raise DegenerateFit(f"fitted rate constant {c_lower:.3e} <= 0")
    t_star = float(t[-1] + f[-1] ** (1 - kappa) / ((kappa - 1) * c_lower))
    monotone_fraction = float(np.mean(ratio >= c_lower))
    return c_lower, t_star, monotone_fraction


def odi_fit(traj, spec: ProblemSpec) -> OdiReport:
    """ODI certificate on the final third of a blow-up run."""
    verdict = getattr(traj, "verdict", None)
    if verdict is None or type(verdict).__name__ != "BlowupDetected":
        raise NoBlowupVerdict(f"trajectory verdict is {verdict!r}")
    t = traj.t
    f = np.asarray(traj.f_series, dtype=float)
    cut = (2 * len(t)) // 3
    tw, fw = t[cut:], f[cut:]
    kappa = odi_kappa(spec)
    c_lower, t_star, mono = fit_odi_tail(tw, fw, kappa)
    return OdiReport(window=(float(tw[0]), float(tw[-1])), c_lower=c_lower,
                     t_star_bound=t_star, monotone_fraction=mono,
                     kappa=kappa, kappa_inferred=odi_kappa_inferred(spec))


# ---------------------------------------------------------------------------
# datum constructors

@dataclass(frozen=True)
class ScaledGroundState:
    c: float


@dataclass(frozen=True)
class NehariRescaled:
    seed: int


@dataclass(frozen=True)
class Custom:
    path: str


DatumKind = Union[ScaledGroundState, NehariRescaled, Custom]


def gaussian_mixture(grid: Grid, amplitudes, widths) -> RadialField:
    """sum_k a_k exp(-b_k r^2); the analytic workhorse for scaling tests."""
    r2 = grid.r ** 2
    v = np.zeros(grid.M)
    for a, b in zip(amplitudes, widths):
        v = v + a * np.exp(-b * r2)
    return RadialField(grid, v)


def mixture_rescaled(amplitudes, widths, rho: float, N: int):
    """Parameters of the mass-invariant scaling u_rho = rho^{N/2} u(rho x)
    applied to a Gaussian mixture (exact: a -> rho^{N/2} a, b -> rho^2 b)."""
    return ([a * rho ** (N / 2.0) for a in amplitudes],
            [b * rho ** 2 for b in widths])


def nehari_amplitude(spec: ProblemSpec, u: RadialField) -> float:
    """Amplitude a > 0 with I[a u] = 0: a^{2p-2} = 2p kinetic / (B potential)."""
    ex = derive_exponents(spec)
    B = float(ex.B)
    power = float(spec.power)
    kin = kinetic(spec, u)
    pot = potential(spec, u)
    if not pot > 0.0:
        raise RescaleFailure(f"potential term is {pot:.3e}; cannot rescale onto "
                             "the constraint set")
    return (2.0 * power * kin / (B * pot)) ** (1.0 / (2.0 * power - 2.0))


def build_datum(kind: DatumKind, gs: GroundState, grid: Grid) -> RadialField:
    """Initial data for dichotomy experiments.

    ScaledGroundState(c): c phi. NehariRescaled(seed): random smooth positive
    field amplitude-rescaled onto the zero-virial constraint (threshold sampling).
    Custom(path): binary snapshot from disk.
    """
    if isinstance(kind, ScaledGroundState):
        if grid.key() != gs.field.grid.key():
            raise SpecMismatch("requested grid differs from the ground state's")
        return RadialField(grid, kind.c * np.asarray(gs.field.values,
                                                     dtype=np.float64))
    if isinstance(kind, NehariRescaled):
        rng = np.random.default_rng(kind.seed)
        n_bumps = 3
        amps = rng.uniform(0.2, 1.0, n_bumps)
        widths = rng.uniform(0.3, 2.0, n_bumps)
        u = gaussian_mixture(grid, amps, widths)
        a = nehari_amplitude(gs.spec, u)
        return RadialField(grid, a * u.values)
    if isinstance(kind, Custom):
        try:
            M, r_max, N, values = load_snapshot(kind.path)
        except FileFormat:
            raise
        except Exception as exc:
            raise FileFormat(f"cannot read snapshot {kind.path}: {exc}") from exc
        if (M, N) != (grid.M, grid.N) or abs(r_max - grid.r_max) > 1e-12 * grid.r_max:
            raise FileFormat(
                f"snapshot grid (M={M}, r_max={r_max}, N={N}) does not match "
                f"target grid (M={grid.M}, r_max={grid.r_max}, N={grid.N})")
        return RadialField(grid, values)
    raise TypeError(f"unknown datum kind: {kind!r}")
