"""Sample selection and follow-up subsampling.

Three building blocks: simple random sampling without replacement,
probability-proportional-to-size PSU selection (randomized-order
systematic), and a self-weighting two-stage draw where the within-PSU
rate is the reciprocal of the PSU selection probability, so every
household has the same overall inclusion probability.

Follow-up subsampling for face-to-face interviewing comes in two forms:
a fixed fraction of web nonrespondents within each PSU (systematic from
a randomly ordered list, so each nonrespondent is flagged with exactly
that probability), or an equal-probability subset of whole PSUs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import EstimationError, ValidationError
from .population import Population

PI_FPC_WARNING = 0.2  # first-stage fractions above this make the
                      # with-replacement variance noticeably conservative


@dataclass(frozen=True)
class FollowUp:
    """How web nonrespondents are selected for ftf follow-up."""

    kind: str  # "none" | "all" | "unit" | "psu"
    omega: float | None = None      # unit kind: within-PSU fraction
    n_sub_psus: int | None = None   # psu kind: PSUs followed up


@dataclass(frozen=True)
class DrawnSample:
    """A realized sample with design weights and response state.

    ``unit_idx`` indexes rows of the source population; all other arrays
    are parallel to it.  ``psu_pi`` maps each sampled PSU id to its
    first-stage inclusion probability (two-stage designs only).
    """

    tag: str
    design: str  # "unclustered" | "two_stage"
    unit_idx: np.ndarray
    d: np.ndarray
    psu_ids: np.ndarray
    followup: FollowUp
    psu_pi: dict[int, float] | None = None
    psu_subsample: frozenset | None = None
    in_ftf_subsample: np.ndarray | None = None
    delta_w: np.ndarray | None = None
    delta_f: np.ndarray | None = None

    def __post_init__(self):
        if (self.d <= 0).any():
            raise ValidationError("design weights must be positive")
        if self.design == "two_stage":
            if self.psu_pi is None:
                raise ValidationError("two-stage sample needs PSU inclusion probabilities")
            missing = set(np.unique(self.psu_ids)) - set(self.psu_pi)
            if missing:
                raise ValidationError(f"units from PSUs outside the PSU sample: {sorted(missing)[:5]}")
            for pi in self.psu_pi.values():
                if not 0.0 < pi <= 1.0:
                    raise ValidationError(f"PSU inclusion probability {pi} outside (0, 1]")
        if self.followup.kind == "unit" and not 0.0 < self.followup.omega <= 1.0:
            raise ValidationError("unit subsampling fraction must be in (0, 1]")

    @property
    def n_units(self) -> int:
        return len(self.unit_idx)

    def sampled_psus(self) -> np.ndarray:
        return np.asarray(sorted(self.psu_pi)) if self.psu_pi else np.unique(self.psu_ids)

    def ftf_rate(self) -> float | None:
        """Design probability that a web nonrespondent is followed up."""
        if self.followup.kind == "none":
            return None
        if self.followup.kind == "all":
            return 1.0
        if self.followup.kind == "unit":
            return self.followup.omega
        return self.followup.n_sub_psus / len(self.psu_pi)

    def flags(self) -> np.ndarray:
        if self.in_ftf_subsample is None:
            return np.zeros(self.n_units, dtype=bool)
        return self.in_ftf_subsample


def srswor(pop: Population, n: int, rng: np.random.Generator, tag: str = "S") -> DrawnSample:
    """Simple random sample without replacement; d = N/n for all units."""
    big_n = pop.n_households
    if not 0 < n <= big_n:
        raise ValidationError(f"sample size {n} outside 1..{big_n}")
    idx = rng.choice(big_n, n, replace=False, shuffle=False)
    idx.sort()
    return DrawnSample(
        tag=tag,
        design="unclustered",
        unit_idx=idx,
        d=np.full(n, big_n / n),
        psu_ids=pop.psu_ids[idx],
        followup=FollowUp("none"),
    )


def pps_select_psus(sizes: np.ndarray, n_psus: int,
                    rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Randomized-order systematic PPS selection of ``n_psus`` clusters.

    Returns (selected frame indices, their inclusion probabilities
    n_psus * size / total).  Certainty clusters are rejected.
    """
    sizes = np.asarray(sizes, dtype=float)
    if (sizes <= 0).any():
        raise ValidationError("all PSU sizes must be positive")
    if not 0 < n_psus <= len(sizes):
        raise ValidationError(f"cannot select {n_psus} of {len(sizes)} PSUs")
    total = sizes.sum()
    pi = n_psus * sizes / total
    if (pi >= 1.0 + 1e-12).any() or (n_psus * sizes.max() / total) > 1.0 + 1e-12:
        worst = int(np.argmax(sizes))
        raise ValidationError(
            f"PSU {worst} would be a certainty selection (pi={pi[worst]:.3f}); "
            f"reduce n_psus or split the PSU before sampling"
        )
    order = rng.permutation(len(sizes))
    cum = np.cumsum(sizes[order])
    step = total / n_psus
    start = step * (1.0 - rng.random())  # in (0, step]
    points = start + step * np.arange(n_psus)
    # side="left" with points in (0, total]: position i covers (C_{i-1}, C_i];
    # the clip guards the last interval against float rounding of the cumsum
    pos = np.minimum(np.searchsorted(cum, points, side="left"), len(cum) - 1)
    selected = order[pos]
    if len(np.unique(selected)) != n_psus:
        raise EstimationError("systematic PPS produced duplicate PSUs")  # pragma: no cover
    if pi[selected].max() > PI_FPC_WARNING:
        warnings.warn(
            f"max PSU inclusion probability {pi[selected].max():.2f} exceeds "
            f"{PI_FPC_WARNING}; with-replacement variances will be conservative",
            stacklevel=2,
        )
    return selected, pi[selected]


def two_stage_select(pop: Population, n_psus: int, m_per_psu: int,
                     rng: np.random.Generator, tag: str = "S") -> DrawnSample:
    """PPS PSUs then equal takes of ``m_per_psu`` households per PSU.

    The within-PSU rate is m_per_psu/size, i.e. proportional to the
    reciprocal of the PSU probability, so the overall inclusion
    probability is f = n_psus*m_per_psu/N for every household and the
    design is self-weighting with d = 1/f.
    """
    psus, sizes, _codes = pop.psu_frame()
    if m_per_psu < 1:
        raise ValidationError("m_per_psu must be positive")
    too_small = np.flatnonzero(sizes < m_per_psu)
    if len(too_small):
        bad = int(too_small[0])
        raise ValidationError(
            f"PSU {psus[bad]} has {sizes[bad]} households, fewer than the "
            f"within-PSU take {m_per_psu} (conditional rate would exceed 1)"
        )
    sel, pi_sel = pps_select_psus(sizes, n_psus, rng)
    f = n_psus * m_per_psu / pop.n_households

    sel_sizes = sizes[sel]
    members = np.concatenate([pop.psu_members(int(c)) for c in sel])
    block = np.repeat(np.arange(len(sel)), sel_sizes)
    keys = rng.random(len(members))
    order = np.lexsort((keys, block))
    starts = np.cumsum(sel_sizes) - sel_sizes
    rank = np.arange(len(members)) - np.repeat(starts, sel_sizes)
    chosen = members[order[rank < m_per_psu]]
    chosen.sort()

    return DrawnSample(
        tag=tag,
        design="two_stage",
        unit_idx=chosen,
        d=np.full(len(chosen), 1.0 / f),
        psu_ids=pop.psu_ids[chosen],
        followup=FollowUp("none"),
        psu_pi={int(psus[c]): float(p) for c, p in zip(sel, pi_sel)},
    )


def _systematic_take(m: int, omega: float, rng: np.random.Generator) -> np.ndarray:
    """Positions (0-based) of a fractional-interval systematic sample of a
    randomly ordered list of length m; every position has inclusion
    probability exactly omega."""
    if omega >= 1.0:
        return np.arange(m)
    interval = 1.0 / omega
    start = interval * (1.0 - rng.random())  # in (0, interval]
    count = int(np.floor((m - start) / interval)) + 1 if start <= m else 0
    if count <= 0:
        return np.empty(0, dtype=int)
    return np.ceil(start + interval * np.arange(count)).astype(int) - 1


def subsample_nonrespondents_units(sample: DrawnSample, omega: float,
                                   rng: np.random.Generator) -> DrawnSample:
    """Flag a fraction ``omega`` of web nonrespondents in each PSU.

    Systematic selection from a randomly ordered list per PSU: the take
    is floor or ceil of omega * count and each nonrespondent is flagged
    with probability exactly omega.  Web respondents are never flagged.
    """
    if sample.delta_w is None:
        raise EstimationError("web response indicators must be set before subsampling")
    if not 0.0 < omega <= 1.0:
        raise ValidationError("omega must be in (0, 1]")
    flags = np.zeros(sample.n_units, dtype=bool)
    nonresp = np.flatnonzero(sample.delta_w == 0)
    for psu in np.unique(sample.psu_ids[nonresp]):
        pool = nonresp[sample.psu_ids[nonresp] == psu]
        perm = rng.permutation(len(pool))
        take = _systematic_take(len(pool), omega, rng)
        flags[pool[perm[take]]] = True
    return replace(sample, in_ftf_subsample=flags,
                   followup=FollowUp("unit", omega=omega))


def subsample_psus(sample: DrawnSample, count: int,
                   rng: np.random.Generator) -> DrawnSample:
    """Follow up all web nonrespondents in an equal-probability subset of
    ``count`` sampled PSUs.  The PSU choice ignores first-phase outcomes."""
    if sample.delta_w is None:
        raise EstimationError("web response indicators must be set before subsampling")
    psus = sample.sampled_psus()
    if count > len(psus):
        raise ValidationError(f"cannot subsample {count} of {len(psus)} PSUs")
    chosen = frozenset(int(p) for p in rng.permutation(psus)[:count])
    in_chosen = np.isin(sample.psu_ids, sorted(chosen))
    flags = in_chosen & (sample.delta_w == 0)
    return replace(sample, in_ftf_subsample=flags, psu_subsample=chosen,
                   followup=FollowUp("psu", n_sub_psus=count))


def followup_all_units(sample: DrawnSample) -> DrawnSample:
    """Flag every web nonrespondent for follow-up (no subsampling)."""
    if sample.delta_w is None:
        raise EstimationError("web response indicators must be set before follow-up")
    return replace(sample, in_ftf_subsample=sample.delta_w == 0,
                   followup=FollowUp("all"))


def export_sample_csv(sample: DrawnSample, pop: Population, path) -> None:
    """Audit dump: unit id, psu, weight, flags and response indicators."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "psu", "d", "in_ftf_subsample", "delta_w", "delta_f"])
        flags = sample.flags()
        dw = sample.delta_w if sample.delta_w is not None else np.zeros(sample.n_units, int)
        df = sample.delta_f if sample.delta_f is not None else np.zeros(sample.n_units, int)
        for i in range(sample.n_units):
            w.writerow([int(pop.ids[sample.unit_idx[i]]), int(sample.psu_ids[i]),
                        repr(float(sample.d[i])), int(flags[i]), int(dw[i]), int(df[i])])
