"""Linearization variance estimation and normal-theory intervals.

Each estimator exposes per-unit linearized contributions (scores); the
variance estimator aggregates them to first-stage units and applies the
with-replacement between-unit formula, summing over the independent
samples of a hybrid design.  First-stage units are households for an
unclustered sample and PSUs for a two-stage sample; for PSU-subsampling
designs PSUs are first combined into variance units balanced on the
follow-up subsampling, which keeps the estimator unbiased for the
two-phase variance.

No first-stage finite population correction is applied; a warning is
emitted at sampling time when inclusion probabilities are large enough
to make that assumption questionable.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .errors import EstimationError, ValidationError
from .estimators import EstimatorResult, ScoreBlock
from .sampling import DrawnSample

Z_95 = 1.96  # normal quantile for the default 95 percent interval


@dataclass(frozen=True)
class VarianceUnitPlan:
    """Groups of PSU ids treated as single first-stage units.

    Every group holds the same number of subsampled PSUs, so contrasts
    between groups are balanced with respect to the follow-up phase.
    """

    groups: tuple[tuple[int, ...], ...]
    subsample_balance: int

    def group_of(self) -> dict[int, int]:
        return {psu: g for g, members in enumerate(self.groups) for psu in members}


@dataclass(frozen=True)
class VarEstimate:
    """Per-variable variance and confidence interval."""

    variance: np.ndarray
    df_proxy: int
    ci_low: np.ndarray
    ci_high: np.ndarray


def z_quantile(level: float) -> float:
    """Two-sided normal quantile; 0.95 -> the conventional 1.96."""
    if not 0.0 < level < 1.0:
        raise ValidationError("confidence level must be in (0, 1)")
    if abs(level - 0.95) < 1e-12:
        return Z_95
    return NormalDist().inv_cdf(0.5 + level / 2.0)


def build_variance_units(sample: DrawnSample, rng: np.random.Generator) -> VarianceUnitPlan:
    """Randomly group sampled PSUs so each group mixes subsampled and
    non-subsampled PSUs in the design proportion.

    A p = a/b subsampling fraction yields groups of b PSUs with a
    subsampled each; the sampled PSU count must be divisible by b.
    """
    if sample.psu_subsample is None:
        raise EstimationError("sample has no PSU subsample to balance on")
    psus = [int(p) for p in sample.sampled_psus()]
    sub = sorted(sample.psu_subsample)
    non = sorted(set(psus) - set(sub))
    from math import gcd

    g = gcd(len(sub), len(psus))
    a, b = len(sub) // g, len(psus) // g
    if len(psus) % b != 0:
        raise ValidationError(
            f"{len(psus)} PSUs with a {a}/{b} subsample cannot form balanced "
            f"variance units; the PSU count must be a multiple of {b}"
        )
    n_groups = len(psus) // b
    if n_groups < 2:
        raise ValidationError(
            f"only {n_groups} variance unit(s); need at least 2 "
            f"(PSU count must be a multiple of {2 * b})"
        )
    sub_perm = [sub[i] for i in rng.permutation(len(sub))]
    non_perm = [non[i] for i in rng.permutation(len(non))]
    groups = []
    for i in range(n_groups):
        members = sub_perm[i * a:(i + 1) * a] + non_perm[i * (b - a):(i + 1) * (b - a)]
        groups.append(tuple(sorted(members)))
    return VarianceUnitPlan(groups=tuple(groups), subsample_balance=a)


def _first_stage_codes(sample: DrawnSample, plan: VarianceUnitPlan | None) -> tuple[np.ndarray | None, int]:
    """Dense first-stage unit code per sampled household (None when every
    household is its own first-stage unit)."""
    if sample.design == "unclustered":
        return None, sample.n_units
    psus = sample.sampled_psus()
    codes = np.searchsorted(psus, sample.psu_ids)
    if plan is None:
        return codes, len(psus)
    lookup = plan.group_of()
    psu_to_group = np.array([lookup[int(p)] for p in psus])
    return psu_to_group[codes], len(plan.groups)


def _wr_variance(e: np.ndarray, codes: np.ndarray | None, n_groups: int) -> np.ndarray:
    """With-replacement between-unit variance of a total: for group sums
    U_g, v = G/(G-1) * sum_g (U_g - mean U)^2, per variable."""
    if n_groups < 2:
        raise EstimationError("fewer than 2 variance units")
    if codes is None:
        totals = e
    else:
        totals = np.stack([np.bincount(codes, weights=e[:, j], minlength=n_groups)
                           for j in range(e.shape[1])], axis=1)
    dev = totals - totals.mean(axis=0, keepdims=True)
    return n_groups / (n_groups - 1.0) * (dev**2).sum(axis=0)


def taylor_variance(result: EstimatorResult,
                    plans: dict[str, VarianceUnitPlan] | None = None,
                    z: float = Z_95) -> VarEstimate:
    """Linearization variance of an estimator result.

    ``plans`` optionally maps sample tags to variance-unit plans (used
    by PSU-subsampling designs).  Independent samples contribute
    additively.
    """
    variance = np.zeros_like(result.total)
    df = 0
    for block in result.score_blocks:
        plan = (plans or {}).get(block.sample.tag)
        codes, n_groups = _first_stage_codes(block.sample, plan)
        variance = variance + _wr_variance(block.e, codes, n_groups)
        df += n_groups - 1
    low, high = confidence_interval(result.total, variance, z=z)
    return VarEstimate(variance=variance, df_proxy=df, ci_low=low, ci_high=high)


def confidence_interval(point, variance, truth=None, z: float = Z_95):
    """Normal interval point +- z*sqrt(variance); closed at the ends.

    With ``truth`` given, also returns the per-variable coverage flags.
    """
    point = np.asarray(point, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if (variance < 0).any():
        raise ValidationError("variance must be nonnegative")
    half = z * np.sqrt(variance)
    low, high = point - half, point + half
    if truth is None:
        return low, high
    truth = np.asarray(truth, dtype=float)
    return low, high, (low <= truth) & (truth <= high)


def score_block_variance(block: ScoreBlock, plan: VarianceUnitPlan | None = None) -> np.ndarray:
    """Variance contribution of a single sample's scores (diagnostic)."""
    codes, n_groups = _first_stage_codes(block.sample, plan)
    return _wr_variance(block.e, codes, n_groups)
