"""Existence-time lower bounds, blow-up smallness conditions, contraction budget.

Every function here is a closed-form evaluation in IEEE double precision
with the sharp constant C_n taken from :mod:`critnls.constants`. Condition
checks return :class:`ConditionFlag` records with ``slack = rhs - lhs`` so a
positive slack means the condition holds.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from .constants import check_dimension, ground_state_constants
from .errors import DomainError


def _sqrt1p_minus_1(x: float) -> float:
    # sqrt(1 + x) - 1 without cancellation for small x
    return x / (math.sqrt(1.0 + x) + 1.0)


def _check_beta(beta):
    if not 0 < beta <= 1:
        raise DomainError("beta must lie in (0, 1]", beta=beta)


def _c_n(n):
    return ground_state_constants(n).c_n


def t_star_additive(n: int, beta: float, hs_norm_1: float, c_n: float | None = None) -> float:
    """Existence-time bound for additive noise; also a lower bound on E(tau).

    T* = 36 / (C_n^n ||phi||^2_{L^{0,1}_2}) (sqrt(1 + (1 - beta)/(18 n)) - 1)^2.
    Returns +inf for a zero noise norm.
    """
    n = check_dimension(n)
    _check_beta(beta)
    if hs_norm_1 < 0:
        raise DomainError("hs_norm_1 must be >= 0")
    if beta == 1:
        return 0.0
    if hs_norm_1 == 0:
        return math.inf
    c = _c_n(n) if c_n is None else c_n
    root = _sqrt1p_minus_1((1.0 - beta) / (18 * n))
    return 36.0 / (c**n * hs_norm_1**2) * root**2


def e_tau_mass_lower(n: int, beta: float, m_phi: float, c_n: float | None = None) -> float:
    """Lower bound on E(tau M(u0)) for multiplicative noise."""
    n = check_dimension(n)
    _check_beta(beta)
    if beta == 1:
        return 0.0
    if m_phi == 0:
        return math.inf
    c = _c_n(n) if c_n is None else c_n
    root = _sqrt1p_minus_1(2.0 * (1.0 - beta) / (9 * n))
    return 9.0 / (c**n * m_phi) * root**2


def t_star_multiplicative(n: int, beta: float, m_phi: float, e_mass: float, c_n: float | None = None) -> float:
    """T* = 9 / (C_n^n M_phi E M(u0)) (sqrt(1 + 2(1 - beta)/(9 n)) - 1)^2.

    For deterministic u0 pass e_mass = M(u0) to get T*_det.
    """
    if m_phi < 0 or e_mass < 0:
        raise DomainError("m_phi and e_mass must be >= 0")
    bound = e_tau_mass_lower(n, beta, m_phi, c_n)
    if bound == 0.0:
        return 0.0
    if e_mass == 0:
        return math.inf
    return bound / e_mass


def markov_bound_additive(n: int, beta: float, delta: float, hs_norm_1: float, T: float) -> float:
    """Upper bound on P(sup_{s <= T} H(u(s)) >= delta H(Q)) for additive noise.

    beta/delta + ||phi||^2 T / (2 delta H(Q))
      + 3 sqrt(T) ||phi|| (||grad Q|| + C_n^(2n/(n-2)) ||grad Q||^((n+2)/(n-2))) / (delta H(Q)),
    with ||phi|| = ||phi||_{L^{0,1}_2}.
    """
    n = check_dimension(n)
    gs = ground_state_constants(n)
    gq = gs.grad_q
    cap = gq + gs.c_n ** (2 * n / (n - 2)) * gq ** ((n + 2) / (n - 2))
    return (beta / delta + hs_norm_1**2 * T / (2 * delta * gs.h_q)
            + 3 * math.sqrt(T) * hs_norm_1 * cap / (delta * gs.h_q))


def markov_bound_multiplicative(n: int, beta: float, delta: float, m_phi: float, e_mass: float, T: float) -> float:
    """Upper bound on P(sup_{s <= T} H(u(s)) >= delta H(Q)) for multiplicative noise.

    beta/delta + M_phi E(M) T / (2 delta H(Q)) + 3 sqrt(M_phi E(M) T) ||grad Q|| / (delta H(Q)).
    """
    n = check_dimension(n)
    gs = ground_state_constants(n)
    y2 = m_phi * e_mass * T
    return beta / delta + y2 / (2 * delta * gs.h_q) + 3 * math.sqrt(y2) * gs.grad_q / (delta * gs.h_q)


# ------------------------------------------------------------ blow-up conditions

@dataclass(frozen=True)
class ThresholdInputs:
    n: int
    beta0: float
    delta: float
    t: float
    epsilon: float
    hs_norm_0: float = 0.0
    hs_norm_1: float = 0.0
    c_phi_sigma: float = 0.0
    c_of_phi: float = 0.0
    c_phi_1: float = 0.0
    c_phi_2: float = 0.0
    m_phi: float = 0.0
    e_mass: float = 0.0
    e_mass_sq: float = 0.0
    e_variance: float = 0.0
    e_virial_sq: float = 0.0
    h0: float = 0.0
    grad_cap: float = 1.0
    N: float = 1.0
    e_t_tau_sq: float | None = None

    def __post_init__(self):
        check_dimension(self.n)
        if not self.delta > 1:
            raise DomainError("delta must exceed 1", delta=self.delta)
        if not self.t >= 0:
            raise DomainError("t must be >= 0")
        for name in ("hs_norm_0", "hs_norm_1", "c_phi_sigma", "c_of_phi", "c_phi_1", "m_phi",
                     "e_mass", "e_mass_sq", "e_variance", "e_virial_sq", "epsilon"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ConditionFlag:
    id: str
    satisfied: bool
    lhs: float
    rhs: float
    slack: float
    strict: bool = False

    def as_dict(self) -> dict:
        return asdict(self)


def _flag(cid, lhs, rhs, strict=False):
    ok = lhs < rhs if strict else lhs <= rhs
    return ConditionFlag(cid, bool(ok), float(lhs), float(rhs), float(rhs - lhs), strict)


def negativity_value(inp: ThresholdInputs, eps_factor: float, e_t_tau_sq: float) -> float:
    """E V(u0) + c eps + 4 sqrt(E G^2) sqrt(E (t^tau)^2) - 8/(n-2) C_n^-n (delta^2 - beta0) E (t^tau)^2."""
    n = inp.n
    c = _c_n(n)
    return (inp.e_variance + eps_factor * inp.epsilon
            + 4 * math.sqrt(inp.e_virial_sq) * math.sqrt(e_t_tau_sq)
            - 8 / (n - 2) * c**-n * (inp.delta**2 - inp.beta0) * e_t_tau_sq)


def _negativity_flags(inp, eps_factor, cid):
    flags = [_flag(f"{cid}[t^2]", negativity_value(inp, eps_factor, inp.t**2), 0.0, strict=True)]
    if inp.e_t_tau_sq is not None:
        flags.append(_flag(f"{cid}[ensemble]", negativity_value(inp, eps_factor, inp.e_t_tau_sq), 0.0, strict=True))
    return flags


def blowup_conditions_additive(inp: ThresholdInputs) -> list[ConditionFlag]:
    """Smallness conditions on the additive noise and the final negativity test.

    The negativity condition is reported with the pessimistic substitution
    E((t ^ tau)^2) = t^2 and, when supplied, with the ensemble estimate.
    """
    n, t, eps = inp.n, inp.t, inp.epsilon
    c = _c_n(n)
    sigma = 2 / (n - 2)
    crit = (n + 2) / (n - 2)
    lhs1 = (inp.c_phi_sigma + inp.c_phi_sigma * t
            + 16 * n / 3 * inp.hs_norm_0 * math.sqrt(inp.e_mass) * t**1.5
            + (2 * inp.c_phi_2 + 32 * inp.c_phi_1 + 4 * math.sqrt(38) * n * inp.hs_norm_0**2) * t**2
            + 4 / 3 * n * sigma * inp.c_phi_1 * t**3)
    lhs2 = 64 * n / (15 * (n - 2)) * inp.grad_cap * math.sqrt(inp.c_phi_1) * t**2.5
    lhs3 = 64 * n / (15 * (n - 2)) * c**crit * inp.grad_cap**crit * math.sqrt(inp.c_of_phi) * t**2.5
    lhs4 = 4 * n * (n + 2) / (3 * (n - 2) ** 2) * c ** (4 / (n - 2)) * inp.grad_cap ** (4 / (n - 2)) * inp.c_of_phi * t**3
    flags = [_flag("A1", lhs1, eps), _flag("A2", lhs2, eps), _flag("A3", lhs3, eps), _flag("A4", lhs4, eps)]
    return flags + _negativity_flags(inp, 4.0, "A5")


def blowup_conditions_multiplicative(inp: ThresholdInputs) -> list[ConditionFlag]:
    """Smallness conditions on M_phi and the final negativity test."""
    n, t, eps = inp.n, inp.t, inp.epsilon
    lhs1 = inp.e_mass * inp.m_phi * (32 / (3 * (n - 2)) * t**3 + 4 * t)
    lhs2 = 64 * n / (15 * (n - 2)) * math.sqrt(inp.e_mass) * math.sqrt(inp.m_phi) * inp.N * t**2.5
    flags = [_flag("M1", lhs1, eps), _flag("M2", lhs2, eps)]
    return flags + _negativity_flags(inp, 2.0, "M3")


@dataclass(frozen=True)
class ThresholdReport:
    inputs: dict
    noise_kind: str
    t_star: float
    e_tau_lower: float
    conditions: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "inputs": self.inputs,
            "noise_kind": self.noise_kind,
            "t_star": self.t_star,
            "e_tau_lower": self.e_tau_lower,
            "conditions": [c.as_dict() for c in self.conditions],
            **self.extra,
        }


def threshold_report(inp: ThresholdInputs, noise_kind: str, beta: float | None = None) -> ThresholdReport:
    """T* and every condition flag for one noise kind.

    ``beta`` is the energy fraction used for T*; it defaults to
    max(h0 / H(Q), tiny) when positive and to ``inp.beta0`` otherwise.
    """
    gs = ground_state_constants(inp.n)
    if beta is None:
        beta = inp.h0 / gs.h_q if 0 < inp.h0 < gs.h_q else inp.beta0
    beta = min(max(beta, 1e-300), 1.0)
    extra = {"beta_used": beta}
    if noise_kind == "additive":
        ts = t_star_additive(inp.n, beta, inp.hs_norm_1)
        report = ThresholdReport(inp.as_dict(), noise_kind, ts, ts, blowup_conditions_additive(inp), extra)
    elif noise_kind in ("multiplicative", "multiplicative_stratonovich"):
        ts = t_star_multiplicative(inp.n, beta, inp.m_phi, inp.e_mass)
        extra["e_tau_mass_lower"] = e_tau_mass_lower(inp.n, beta, inp.m_phi)
        report = ThresholdReport(inp.as_dict(), noise_kind, ts, ts,
                                 blowup_conditions_multiplicative(inp), extra)
    else:
        raise DomainError(f"unknown noise kind {noise_kind!r}")
    return report


# ------------------------------------------------------------ contraction budget

@dataclass(frozen=True)
class ContractionBudget:
    a: float
    b: float
    alpha: float
    beta: float
    delta: float
    a_tilde: float
    alpha_tilde: float
    delta_tilde: float

    def as_tuple(self):
        return (self.a, self.b, self.alpha, self.beta, self.delta)

    def as_dict(self) -> dict:
        return asdict(self)


def contraction_budget(A: float, c_str: float = 1.0, c_sob: float = 1.0, n: int = 3) -> ContractionBudget:
    """Fixed-point parameters of the local existence argument.

    b = 3 C_Str A, beta = b/3, and a is the largest value with
    C_Str k a^(4/(n-2)) <= 1/3 and C_Sob C_Str k a^((6-n)/(n-2)) b <= 1/3,
    k = (n+2)/(n-2); alpha = delta = a/3. The contraction step needs the
    tighter a_tilde <= a obtained with (1 + C_Sob) in place of C_Sob (and in
    the first inequality) and 8b/(n-2) in place of b.
    """
    if n == 6:
        raise DomainError("the budget needs 6 - n > 0; n = 6 is the excluded boundary", n=n)
    n = check_dimension(n)
    if not (A > 0 and c_str > 0 and c_sob > 0):
        raise DomainError("A, c_str and c_sob must be positive")
    k = (n + 2) / (n - 2)
    b = 3 * c_str * A
    e1, e2 = (n - 2) / 4, (n - 2) / (6 - n)
    a = min((1 / (3 * c_str * k)) ** e1, (1 / (3 * c_sob * c_str * k * b)) ** e2)
    s = 1 + c_sob
    a_t = min(a, (1 / (3 * s * c_str * k)) ** e1, (1 / (3 * s * c_str * k * 8 * b / (n - 2))) ** e2)
    return ContractionBudget(a=a, b=b, alpha=a / 3, beta=b / 3, delta=a / 3,
                             a_tilde=a_t, alpha_tilde=a_t / 3, delta_tilde=a_t / 3)
