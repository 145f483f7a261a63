"""Closed-form privacy arithmetic.

Everything here is a pure total function over validated inputs: information
shrink factors of the two mechanisms, worst-case caps on the identity
information leaked by a release (generic local-privacy cap and tighter
mechanism-specific caps), their linear composition over repeated releases,
identification-error guarantees of the Fano type, and the inverse solvers
that turn a target error probability back into mechanism parameters.

All information values are bits. An unbounded privacy budget may be passed
as math.inf, in which case the caps degrade gracefully to min(log2 n,
log2 |X|).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import probcore
from .mechanisms import _keep_leak

LOG2E = math.log2(math.e)


def mi_loss_rr(epsilon: float, size: int) -> float:
    """Information shrink factor of randomized response: (e^eps - 1)/(|X| + e^eps - 1)."""
    if size < 2:
        raise ValueError("alphabet size must be >= 2")
    return _keep_leak(epsilon, size)[2]


def mi_loss_glh(epsilon: float, g: int) -> float:
    """Information shrink factor of hashed randomized response over g buckets."""
    if g < 2:
        raise ValueError("bucket count must be >= 2")
    return _keep_leak(epsilon, g)[2]


def pie_bound_ldp(epsilon: float, n: int, size: int) -> float:
    """Identity-information cap implied by the privacy budget alone.

    min(eps*log2 e, eps^2*log2 e, log2 n, log2 |X|) bits; holds for every
    mechanism meeting the budget and every population of n users.
    """
    if epsilon < 0 or n < 1 or size < 1:
        raise ValueError("need epsilon >= 0, n >= 1, size >= 1")
    return min(epsilon * LOG2E, epsilon * epsilon * LOG2E, math.log2(n), math.log2(size))


def pie_bound_rr(epsilon: float, n: int, size: int) -> float:
    """Identity-information cap specific to randomized response."""
    if n < 1:
        raise ValueError("need n >= 1")
    return mi_loss_rr(epsilon, size) * min(math.log2(n), math.log2(size))


def pie_bound_glh(epsilon: float, g: int, n: int, size: int) -> float:
    """Identity-information cap specific to hashed randomized response."""
    if n < 1 or size < 1:
        raise ValueError("need n >= 1, size >= 1")
    return mi_loss_glh(epsilon, g) * min(math.log2(n), math.log2(size))


def pie_bound_composed(alpha_single: float, t: int) -> float:
    """Cap for t releases about the same users: linear in t, any correlation."""
    if t < 1:
        raise ValueError("composition count must be >= 1")
    if alpha_single < 0:
        raise ValueError("alpha must be >= 0")
    return t * alpha_single


@dataclass(frozen=True)
class FanoBound:
    """Lower bound on the smallest achievable identification error.

    `raw` is the formula value and may be negative (then the bound says
    nothing and `vacuous` is set); `value` is clamped to [0, 1) for reports.
    """

    raw: float
    value: float
    vacuous: bool


def fano_lower_bound(info_bits: float, n: Optional[int] = None,
                     prior_bayes_error: Optional[float] = None) -> FanoBound:
    """Bound the identification error from the identity information in bits.

    Exactly one prior form must be given: `n` for a uniform prior over n
    users (bound 1 - (info+1)/log2 n), or `prior_bayes_error` for a general
    prior with no-information error beta in (0, 1) (bound
    1 + (info+1)/log2(1-beta), denominator negative).
    """
    info_bits = float(info_bits)
    if info_bits < 0:
        raise ValueError("information must be >= 0 bits")
    if (n is None) == (prior_bayes_error is None):
        raise ValueError("give exactly one of n (uniform prior) or prior_bayes_error")
    if n is not None:
        if n < 2:
            raise ValueError("uniform prior needs n >= 2")
        raw = 1.0 - (info_bits + 1.0) / math.log2(n)
    else:
        beta = prior_bayes_error
        if not (0.0 < beta < 1.0):
            raise ValueError("prior Bayes error must lie in (0, 1)")
        raw = 1.0 + (info_bits + 1.0) / math.log2(1.0 - beta)
    return FanoBound(raw=raw, value=min(max(raw, 0.0), 1.0), vacuous=raw <= 0.0)


@dataclass(frozen=True)
class AlphaBudget:
    """Largest information cap compatible with a target error floor."""

    value: float
    achievable: bool


def alpha_for_target_bayes_error(beta_min: float, n: Optional[int] = None,
                                 prior_bayes_error: Optional[float] = None) -> AlphaBudget:
    """Invert the Fano bound: the alpha that still guarantees error >= beta_min."""
    if not (0.0 < beta_min < 1.0):
        raise ValueError("beta_min must lie in (0, 1)")
    if (n is None) == (prior_bayes_error is None):
        raise ValueError("give exactly one of n (uniform prior) or prior_bayes_error")
    if n is not None:
        if n < 2:
            raise ValueError("uniform prior needs n >= 2")
        value = (1.0 - beta_min) * math.log2(n) - 1.0
    else:
        beta = prior_bayes_error
        if not (0.0 < beta < 1.0):
            raise ValueError("prior Bayes error must lie in (0, 1)")
        value = -(1.0 - beta_min) * math.log2(1.0 - beta) - 1.0
    return AlphaBudget(value=value, achievable=value >= 0.0)


def epsilon_for_theta(theta: float, domain_size: int) -> float:
    """Privacy level that realizes a requested shrink factor.

    Inverse of the shrink-factor formulas: eps = ln(1 + theta*d/(1-theta))
    where d is |X| for randomized response or g for the hashed mechanism.
    """
    if not (0.0 <= theta < 1.0):
        raise ValueError("theta must lie in [0, 1)")
    if domain_size < 2:
        raise ValueError("domain size must be >= 2")
    return math.log1p(theta * domain_size / (1.0 - theta))


def glh_utility_optimal_g(epsilon: float) -> float:
    """Reference bucket count e^eps + 1 (utility-optimal for frequency estimation).

    Provided for comparison sweeps only; nothing in this package depends on it.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    return math.exp(epsilon) + 1.0


# populations larger than this many joint cells are refused, not silently cut
_ENUMERATION_CELL_CAP = 10 ** 8


@dataclass(frozen=True)
class DataProcessingCap:
    """I(U;X) together with the ceiling min(log2 n, log2 |X|, H(X))."""

    identity_information: float
    cap: float


def pie_data_processing_cap(population: probcore.PopulationModel) -> DataProcessingCap:
    """Cap the identity information of ANY release computed from X alone.

    Covers pseudonymized releases: whatever post-processing is applied to X
    (including random permutation of ids), the identity information cannot
    exceed I(U;X), which itself is capped by min(log2 n, log2 |X|, H(X)).
    """
    n = population.n
    size = population.data_alphabet().size
    if n * size > _ENUMERATION_CELL_CAP:
        raise ValueError("population too large to enumerate the (U, X) joint")
    joint = population.joint_ux()
    i_ux = probcore.mutual_information(joint)
    h_x = probcore.entropy(joint.col_marginal())
    return DataProcessingCap(identity_information=i_ux,
                             cap=min(math.log2(n), math.log2(size), h_x))


@dataclass(frozen=True)
class PieBoundReport:
    """Everything the bounds CLI reports for one parameter point."""

    n: int
    size: int
    epsilon: float
    t: int
    theta_rr: float
    alpha_ldp: float
    alpha_rr: float
    g: Optional[int] = None
    theta_glh: Optional[float] = None
    alpha_glh: Optional[float] = None
    beta_min: Optional[float] = None
    alpha_max_for_beta_min: Optional[float] = None
    alpha_max_achievable: Optional[bool] = None
    fano: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "schema_version": 1,
            "n": self.n,
            "size": self.size,
            "epsilon": self.epsilon,
            "t": self.t,
            "theta_rr": self.theta_rr,
            "alpha_ldp": self.alpha_ldp,
            "alpha_rr": self.alpha_rr,
            "g": self.g,
            "theta_glh": self.theta_glh,
            "alpha_glh": self.alpha_glh,
            "beta_u_uniform": 1.0 - 1.0 / self.n,
            "beta_min": self.beta_min,
            "alpha_max_for_beta_min": self.alpha_max_for_beta_min,
            "alpha_max_achievable": self.alpha_max_achievable,
            "fano": self.fano,
        }
        return out

    def table_row(self) -> str:
        cells = [f"n={self.n}", f"size={self.size}", f"eps={self.epsilon:.6g}", f"t={self.t}",
                 f"theta_rr={self.theta_rr:.6g}", f"alpha_ldp={self.alpha_ldp:.6g}",
                 f"alpha_rr={self.alpha_rr:.6g}"]
        if self.g is not None:
            cells += [f"g={self.g}", f"alpha_glh={self.alpha_glh:.6g}"]
        return " ".join(cells)


def bound_report(n: int, size: int, epsilon: Optional[float] = None,
                 theta: Optional[float] = None, g: Optional[int] = None,
                 t: int = 1, beta_min: Optional[float] = None) -> PieBoundReport:
    """Assemble the full report for one (mechanism parameters, population) point.

    Exactly one of epsilon/theta must be given; theta is translated through
    the randomized-response shrink formula over |X| (over g when only the
    hashed mechanism is of interest the caller can translate explicitly).
    """
    if (epsilon is None) == (theta is None):
        raise ValueError("give exactly one of epsilon or theta")
    if epsilon is None:
        epsilon = epsilon_for_theta(theta, size)
    theta_rr = mi_loss_rr(epsilon, size)
    alpha_ldp = pie_bound_composed(pie_bound_ldp(epsilon, n, size), t)
    alpha_rr = pie_bound_composed(pie_bound_rr(epsilon, n, size), t)
    theta_glh = alpha_glh = None
    if g is not None:
        theta_glh = mi_loss_glh(epsilon, g)
        alpha_glh = pie_bound_composed(pie_bound_glh(epsilon, g, n, size), t)

    fano = {}
    if n >= 2:
        for name, alpha in (("ldp", alpha_ldp), ("rr", alpha_rr), ("glh", alpha_glh)):
            if alpha is None:
                continue
            b = fano_lower_bound(alpha, n=n)
            fano[name] = {"raw": b.raw, "value": b.value, "vacuous": b.vacuous}

    alpha_max = achievable = None
    if beta_min is not None:
        budget = alpha_for_target_bayes_error(beta_min, n=n)
        alpha_max, achievable = budget.value, budget.achievable

    return PieBoundReport(n=n, size=size, epsilon=epsilon, t=t, theta_rr=theta_rr,
                          alpha_ldp=alpha_ldp, alpha_rr=alpha_rr, g=g,
                          theta_glh=theta_glh, alpha_glh=alpha_glh,
                          beta_min=beta_min, alpha_max_for_beta_min=alpha_max,
                          alpha_max_achievable=achievable, fano=fano)
