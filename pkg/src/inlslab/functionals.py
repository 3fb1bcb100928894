"""Conserved quantities, variational functionals, and virial-type monitors.

All functionals are discretized with the cell-centered volume quadrature of the
grid module, so the algebraic identities between them (integration by parts,
scaling relations, fixed-point identities of the ground-state solver) hold to
rounding rather than to discretization accuracy wherever the discrete operators
make that possible.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import nan
from typing import Optional

import numpy as np
from numpy.polynomial import Polynomial

from .grid import (
    Grid,
    KernelMatrix,
    RadialField,
    apply_K_values,
    get_kernel,
    gradient_norm_sq,
    lap_values,
)
from .problem import ProblemSpec, derive_exponents


class InvalidRadius(ValueError):
    """Monitor localization radius must be positive."""


def mass(u: RadialField) -> float:
    a2 = np.abs(u.values) ** 2
    return float(np.sum(u.grid.w * a2))


def kinetic(spec: ProblemSpec, u: RadialField) -> float:
    """<K u, u> in the weighted inner product, via quadratic (Dirichlet) forms.

    For s = 1 this is the face-quadrature gradient norm plus the inverse-square
    term; for s = 2 it is ||Delta_h u||^2, equal to <Delta_h^2 u, u> exactly by
    self-adjointness of the flux-form stencil.
    """
    if spec.s == 1:
        out = gradient_norm_sq(u)
        lam = spec.lam_effective
        if lam != 0.0:
            out += lam * float(np.sum(u.grid.w * np.abs(u.values) ** 2 / u.grid.r ** 2))
        return out
    lap = lap_values(u.grid, u.values)
    return float(np.sum(u.grid.w * np.abs(lap) ** 2))


def kinetic_quadratic(spec: ProblemSpec, u: RadialField) -> float:
    """<K_h u, u>_w by direct stencil application (cross-check for kinetic)."""
    Ku = apply_K_values(spec, u.grid, u.values)
    return float(np.real(np.sum(u.grid.w * np.conj(u.values) * Ku)))


def potential(spec: ProblemSpec, u: RadialField,
              kernel: Optional[KernelMatrix] = None) -> float:
    """Nonlinear potential functional.

    Nonlocal kind: P = int |x|^{-tau} |u|^p (J_alpha * |.|^{-tau}|u|^p);
    local kind:    Q = int |x|^{-2 tau} |u|^{2q}.
    """
    grid, v = u.grid, u.values
    av = np.abs(v)
    if spec.is_choquard:
        g = grid.r ** (-spec.tau) * av ** spec.nl.p
        if kernel is None:
            kernel = get_kernel(grid, spec.nl.alpha)
        return float(np.sum(grid.w * g * kernel.apply(g)))
    return float(np.sum(grid.w * grid.r ** (-2.0 * spec.tau) * av ** (2.0 * spec.nl.q)))


def energy(spec: ProblemSpec, u: RadialField,
           kernel: Optional[KernelMatrix] = None) -> float:
    """Conserved Hamiltonian: kinetic - potential / (homogeneity exponent)."""
    return kinetic(spec, u) - potential(spec, u, kernel) / float(spec.power)


def virial(spec: ProblemSpec, u: RadialField,
           kernel: Optional[KernelMatrix] = None) -> float:
    """I[u] = kinetic - (B / 2p) potential; vanishes at ground states."""
    ex = derive_exponents(spec)
    frac = float(ex.B) / (2.0 * float(spec.power))
    return kinetic(spec, u) - frac * potential(spec, u, kernel)


def action(spec: ProblemSpec, u: RadialField,
           kernel: Optional[KernelMatrix] = None) -> float:
    """S[u] = E[u] + M[u] (frequency-1 action)."""
    return energy(spec, u, kernel) + mass(u)


def nonlinear_term(spec: ProblemSpec, grid: Grid, v: np.ndarray,
                   kernel: Optional[KernelMatrix] = None) -> np.ndarray:
    """F(x, v): the focusing nonlinearity applied to raw node values."""
    return nonlinear_multiplier(spec, grid, v, kernel) * v


def nonlinear_multiplier(spec: ProblemSpec, grid: Grid, v: np.ndarray,
                         kernel: Optional[KernelMatrix] = None) -> np.ndarray:
    """Real multiplier V(x, |v|) with F = V v (used by the split-step flow)."""
    av = np.abs(v)
    if spec.is_choquard:
        p = float(spec.nl.p)
        rt = grid.r ** (-spec.tau)
        g = rt * av ** p
        if kernel is None:
            kernel = get_kernel(grid, spec.nl.alpha)
        return rt * kernel.apply(g) * av ** (p - 2.0)
    q = float(spec.nl.q)
    return grid.r ** (-2.0 * spec.tau) * av ** (2.0 * (q - 1.0))


def rms_radius(u: RadialField) -> float:
    """sqrt( int r^2 |u|^2 / int |u|^2 )."""
    a2 = np.abs(u.values) ** 2
    m = float(np.sum(u.grid.w * a2))
    if m == 0.0:
        return 0.0
    return float(np.sqrt(np.sum(u.grid.w * u.grid.r ** 2 * a2) / m))


# ---------------------------------------------------------------------------
# localized virial (Morawetz-type) monitor

_S_POLY = Polynomial([0.0, 0.0, 0.0, 10.0, -15.0, 6.0])  # smootherstep on [0, 1]
_AFFINE = Polynomial([-1.0 / 9.0, 1.0 / 9.0])            # rho -> (rho - 1)/9
_CHI_MID = 1.0 - _S_POLY(_AFFINE)                        # cutoff on [1, 10]
_XIP_MID = Polynomial([0.0, 2.0]) * _CHI_MID             # 2 rho chi(rho)
_XI_MID = _XIP_MID.integ()
_XI_MID = _XI_MID - _XI_MID(1.0) + 1.0                   # match xi = rho^2 at rho = 1
_XIPP_MID = _XIP_MID.deriv()
_XI_FLAT = float(_XI_MID(10.0))


def _chi(rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    out = np.ones_like(rho)
    mid = (rho > 1.0) & (rho < 10.0)
    out[mid] = _CHI_MID(rho[mid])
    out[rho >= 10.0] = 0.0
    return out


def _piecewise(rho, inner, mid_poly, outer):
    rho = np.asarray(rho, dtype=float)
    out = np.where(rho <= 1.0, inner(rho), outer)
    mid = (rho > 1.0) & (rho < 10.0)
    out = np.asarray(out, dtype=float)
    out[mid] = mid_poly(rho[mid])
    return out


@dataclass(frozen=True)
class MorawetzWeight:
    """Rescaled C^2 virial weight xi_R(rho) = R^2 xi(rho / R).

    The profile has xi'(rho) = 2 rho chi(rho) with a quintic-smoothstep cutoff chi
    supported up to rho = 10, so xi'(rho)/rho <= 2 and xi'' - xi'/rho <= 0 hold
    exactly and |xi''| is bounded by 2.
    """

    R: float

    def xi(self, rho) -> np.ndarray:
        x = np.asarray(rho, dtype=float) / self.R
        base = _piecewise(x, lambda t: t * t, _XI_MID, _XI_FLAT)
        return self.R ** 2 * base

    def xi_prime(self, rho) -> np.ndarray:
        x = np.asarray(rho, dtype=float) / self.R
        base = _piecewise(x, lambda t: 2.0 * t, _XIP_MID, 0.0)
        return self.R * base

    def xi_second(self, rho) -> np.ndarray:
        x = np.asarray(rho, dtype=float) / self.R
        return _piecewise(x, lambda t: np.full_like(t, 2.0), _XIPP_MID, 0.0)


def make_weight(R: float) -> MorawetzWeight:
    if not R > 0:
        raise InvalidRadius(f"need R > 0, got {R}")
    return MorawetzWeight(R=float(R))


def radial_derivative_centered(grid: Grid, v: np.ndarray) -> np.ndarray:
    """Centered radial derivative with even reflection at the axis and the
    Dirichlet ghost -v[M-1] beyond the outer face."""
    ext = np.empty(grid.M + 2, dtype=v.dtype)
    ext[0] = v[0]
    ext[1:-1] = v
    ext[-1] = -v[-1]
    return (ext[2:] - ext[:-2]) / (2.0 * grid.dr)


def morawetz_action(u: RadialField, weight: MorawetzWeight) -> float:
    """M_R[u] = 2 Im int conj(u) xi_R'(r) (d_r u)."""
    grid, v = u.grid, u.values
    dv = radial_derivative_centered(grid, v)
    val = np.sum(grid.w * np.conj(v) * weight.xi_prime(grid.r) * dv)
    return 2.0 * float(np.imag(val))


# ---------------------------------------------------------------------------
# bundled per-step diagnostics

@dataclass
class Diagnostics:
    t: float
    mass: float
    kinetic: float
    potential: float
    energy: float
    virial: float
    action: float
    sup_norm: float
    morawetz: float
    dt: float

    CSV_HEADER = "t,mass,kinetic,potential,energy,virial,action,sup_norm,morawetz,dt"

    def csv_row(self) -> str:
        return ",".join(repr(float(x)) for x in (
            self.t, self.mass, self.kinetic, self.potential, self.energy,
            self.virial, self.action, self.sup_norm, self.morawetz, self.dt))


def compute_diagnostics(spec: ProblemSpec, u: RadialField, t: float = 0.0,
                        dt: float = nan, kernel: Optional[KernelMatrix] = None,
                        weight: Optional[MorawetzWeight] = None,
                        debug_identities: bool = False) -> Diagnostics:
    """All scalar monitors of a state in one pass (one kernel product at most)."""
    m = mass(u)
    kin = kinetic(spec, u)
    pot = potential(spec, u, kernel)
    power = float(spec.power)
    ex = derive_exponents(spec)
    en = kin - pot / power
    vir = kin - (float(ex.B) / (2.0 * power)) * pot
    act = en + m
    if debug_identities:
        kq = kinetic_quadratic(spec, u)
        scale = max(abs(kin), abs(kq), 1e-300)
        assert abs(kin - kq) <= 1e-12 * scale, (kin, kq)
    mor = morawetz_action(u, weight) if weight is not None else nan
    return Diagnostics(t=t, mass=m, kinetic=kin, potential=pot, energy=en,
                       virial=vir, action=act,
                       sup_norm=float(np.max(np.abs(u.values))),
                       morawetz=mor, dt=dt)
