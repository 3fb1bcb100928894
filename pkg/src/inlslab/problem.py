"""Problem definition: parameter tuples, admissibility checks, derived exponents.

The two Cauchy problems share the linear operator K = (-Delta)^s + (2-s)*lambda/|x|^2
on R^N with s in {1, 2}; the nonlinearity is either a Choquard (Hartree) term built
from a Riesz-potential convolution or a local power term, both carrying the singular
weight |x|^{-tau}. Every scalar hypothesis is checked here before any numerics run.
When parameters are supplied as decimal strings, all range comparisons are performed
in exact rational arithmetic so boundary cases are never mis-rejected by roundoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Union


class SpecError(ValueError):
    """Base class for parameter validation failures."""


class HardyViolation(SpecError):
    """lambda is at or below the Hardy threshold -(N-2)^2/4."""


class DimensionTooSmall(SpecError):
    """N <= 2s leaves no admissible power range."""


class RangeViolation(SpecError):
    """A power/exponent lies outside its admissible interval."""


class CndViolation(SpecError):
    """The Riesz-weight compatibility condition fails."""


Number = Union[int, float, str, Fraction]


def _to_fraction(x: Number) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x)
    return Fraction(x)


@dataclass(frozen=True)
class Choquard:
    """Nonlocal nonlinearity |x|^{-tau} |u|^{p-2} (J_alpha * |.|^{-tau}|u|^p) u."""

    alpha: float
    p: float

    kind = "choquard"


@dataclass(frozen=True)
class Local:
    """Local nonlinearity |x|^{-2 tau} |u|^{2(q-1)} u."""

    q: float

    kind = "local"


Nonlinearity = Union[Choquard, Local]


@dataclass(frozen=True)
class ProblemSpec:
    """Full parameter tuple of one Cauchy problem.

    lam is interpreted only for s=1; for s=2 the operator is Delta^2 and lam is
    ignored (a manifest note records this if a nonzero value was supplied).
    """

    s: int
    N: int
    lam: float
    tau: float
    nl: Nonlinearity
    exact: Optional[dict] = field(default=None, compare=False, repr=False)

    @classmethod
    def from_decimal(cls, s: Number, N: Number, lam: Number, tau: Number,
                     nl_kind: str, **nl_params: Number) -> "ProblemSpec":
        """Build a spec from decimal-string (or numeric) inputs.

        Exact rational copies of every real parameter are retained so that
        validate_spec can compare against range endpoints without roundoff.
        """
        ex = {"lam": _to_fraction(lam), "tau": _to_fraction(tau)}
        s_i, N_i = int(str(s)), int(str(N))
        if nl_kind == "choquard":
            ex["alpha"] = _to_fraction(nl_params["alpha"])
            ex["p"] = _to_fraction(nl_params["p"])
            nl: Nonlinearity = Choquard(alpha=float(ex["alpha"]), p=float(ex["p"]))
        elif nl_kind == "local":
            ex["q"] = _to_fraction(nl_params["q"])
            nl = Local(q=float(ex["q"]))
        else:
            raise RangeViolation(f"unknown nonlinearity kind {nl_kind!r}")
        return cls(s=s_i, N=N_i, lam=float(ex["lam"]), tau=float(ex["tau"]),
                   nl=nl, exact=ex)

    @property
    def is_choquard(self) -> bool:
        return isinstance(self.nl, Choquard)

    @property
    def power(self) -> float:
        """The nonlinearity power: p (Choquard) or q (local)."""
        return self.nl.p if self.is_choquard else self.nl.q

    @property
    def lam_effective(self) -> float:
        """Coupling actually used by the operator (0 for s=2)."""
        return self.lam if self.s == 1 else 0.0

    @property
    def hardy_bound(self) -> float:
        return -((self.N - 2) ** 2) / 4.0

    @property
    def evolution_allowed(self) -> bool:
        """Evolution requires lam >= 0; functional evaluation does not."""
        return self.lam_effective >= 0.0

    def tier(self) -> str:
        return "full" if self.evolution_allowed else "evolution-restricted"

    def _rat(self, name: str) -> Fraction:
        if self.exact is not None and name in self.exact:
            return self.exact[name]
        return Fraction(getattr(self, name) if name in ("lam", "tau")
                        else getattr(self.nl, name))


@dataclass(frozen=True)
class ChoquardExponents:
    B: float
    A: float
    p_c: float
    p_sup: float
    s_c: float
    alpha_c: float
    power: float

    @property
    def pair_power(self) -> float:
        return self.power


@dataclass(frozen=True)
class LocalExponents:
    Bp: float
    Ap: float
    q_c: float
    q_sup: float
    s_c: float
    alpha_c: float
    power: float

    # generic aliases so downstream code treats both cases uniformly
    @property
    def B(self) -> float:
        return self.Bp

    @property
    def A(self) -> float:
        return self.Ap


DerivedExponents = Union[ChoquardExponents, LocalExponents]


def derive_exponents(spec: ProblemSpec) -> DerivedExponents:
    """Evaluate the derived exponents exactly as defined.

    B = (Np - N - alpha + 2 tau)/s, A = 2p - B (Choquard);
    B' = (Nq - N + 2 tau)/s, A' = 2q - B' (local);
    s_c = N/2 - (2s - 2 tau + alpha)/(2(p-1)) resp. N/2 - (s - tau)/(q-1);
    alpha_c = s/s_c - 1.

    Works on unvalidated specs too (boundary cases like s_c = 0 are representable;
    alpha_c is +inf there).
    """
    s, N = Fraction(spec.s), Fraction(spec.N)
    tau = spec._rat("tau")
    if spec.is_choquard:
        alpha, p = spec._rat("alpha"), spec._rat("p")
        B = (N * p - N - alpha + 2 * tau) / s
        A = 2 * p - B
        p_c = 1 + (2 * s - 2 * tau + alpha) / N
        p_sup = 1 + (2 * s - 2 * tau + alpha) / (N - 2 * s) if N > 2 * s else Fraction(10**9)
        s_c = N / 2 - (2 * s - 2 * tau + alpha) / (2 * (p - 1))
        alpha_c = s / s_c - 1 if s_c != 0 else math.inf
        return ChoquardExponents(B=float(B), A=float(A), p_c=float(p_c),
                                 p_sup=float(p_sup), s_c=float(s_c),
                                 alpha_c=float(alpha_c), power=float(p))
    q = spec._rat("q")
    Bp = (N * q - N + 2 * tau) / s
    Ap = 2 * q - Bp
    q_c = 1 + 2 * (s - tau) / N
    q_sup = 1 + 2 * (s - tau) / (N - 2 * s) if N > 2 * s else Fraction(10**9)
    s_c = N / 2 - (s - tau) / (q - 1)
    alpha_c = s / s_c - 1 if s_c != 0 else math.inf
    return LocalExponents(Bp=float(Bp), Ap=float(Ap), q_c=float(q_c),
                          q_sup=float(q_sup), s_c=float(s_c),
                          alpha_c=float(alpha_c), power=float(q))


def validate_spec(spec: ProblemSpec) -> ProblemSpec:
    """Check every admissibility hypothesis; return the spec unchanged if valid.

    Raises HardyViolation, DimensionTooSmall, RangeViolation (naming the violated
    inequality) or CndViolation. A valid spec with lam < 0 is evolution-restricted
    (see ProblemSpec.tier); that does not fail validation.
    """
    if spec.s not in (1, 2):
        raise RangeViolation(f"s must be 1 or 2, got {spec.s}")
    if spec.N <= 2 * spec.s:
        raise DimensionTooSmall(f"need N > 2s, got N={spec.N}, s={spec.s}")

    s, N = Fraction(spec.s), Fraction(spec.N)
    tau = spec._rat("tau")
    lam = spec._rat("lam")

    if spec.s == 1:
        hardy = -Fraction((spec.N - 2) ** 2, 4)
        if lam <= hardy:
            raise HardyViolation(
                f"lambda = {float(lam)} <= -(N-2)^2/4 = {float(hardy)}")

    if spec.is_choquard:
        alpha, p = spec._rat("alpha"), spec._rat("p")
        cnd = {"tau": tau, "alpha": alpha, "N-alpha": N - alpha,
               "N-tau": N - tau, "2-2tau+alpha": 2 - 2 * tau + alpha}
        bad = [k for k, v in cnd.items() if v <= 0]
        if bad:
            raise CndViolation(
                "compatibility condition fails: "
                + ", ".join(f"{k} = {float(cnd[k])} <= 0" for k in bad))
        p_c = 1 + (2 * s - 2 * tau + alpha) / N
        p_sup = 1 + (2 * s - 2 * tau + alpha) / (N - 2 * s)
        p_bar = 1 + (2 * s + alpha - tau) / N
        lo = max(Fraction(2), p_c)
        if not (p > lo):
            raise RangeViolation(
                f"p must exceed max(2, p_c) = {float(lo)}, got p = {float(p)}")
        if not (p < p_sup):
            raise RangeViolation(
                f"p must be below p^c = {float(p_sup)}, got p = {float(p)}")
        if not (p <= p_bar):
            raise RangeViolation(
                f"p must satisfy p <= 1+(2s+alpha-tau)/N = {float(p_bar)}, "
                f"got p = {float(p)}")
    else:
        q = spec._rat("q")
        if not (0 < tau < 2):
            raise RangeViolation(f"tau must lie in (0, 2), got tau = {float(tau)}")
        if spec.s == 1 and not (tau < 1):
            raise RangeViolation(f"s=1 local case needs tau < 1, got tau = {float(tau)}")
        q_c = 1 + 2 * (s - tau) / N
        q_sup = 1 + 2 * (s - tau) / (N - 2 * s)
        q_bar = 1 + (2 * s + 2 * tau * (s - 1)) / N
        if not (q > q_c):
            raise RangeViolation(
                f"q must exceed q_c = {float(q_c)}, got q = {float(q)}")
        if not (q < q_sup):
            raise RangeViolation(
                f"q must be below q^c = {float(q_sup)}, got q = {float(q)}")
        if not (q <= q_bar):
            raise RangeViolation(
                f"q must satisfy q <= 1+(2s+2tau(s-1))/N = {float(q_bar)}, "
                f"got q = {float(q)}")
        if spec.s == 2:
            q_lo = 1 + (1 - 2 * tau) / N
            if not (q > q_lo):
                raise RangeViolation(
                    f"s=2 local case needs q > 1+(1-2tau)/N = {float(q_lo)}, "
                    f"got q = {float(q)}")
    return spec


def validation_notes(spec: ProblemSpec) -> list[str]:
    """Manifest notes: warnings and bound discrepancies that do not fail validation."""
    notes = []
    if spec.s == 2 and spec.lam != 0.0:
        notes.append("lambda ignored for s=2 (operator is Delta^2); using lambda=0")
    if spec.lam_effective < 0:
        notes.append("evolution-restricted tier: lambda < 0 "
                     "(functionals allowed, evolution refused)")
    ex = derive_exponents(spec)
    tau = spec.tau
    if spec.is_choquard:
        if ex.B > 2 + tau / spec.s:
            notes.append(f"B = {ex.B} exceeds 2 + tau/s = {2 + tau / spec.s}")
    else:
        section_bound = 2 + 2 * tau if spec.s == 1 else 2 + tau
        if ex.B > section_bound + 1e-15:
            notes.append(
                f"B' = {ex.B} exceeds the per-(s={spec.s}, local) tail-estimate bound "
                f"{section_bound}; the wider admissibility bound was used for "
                "validation (the two bounds differ at the source)")
    return notes
