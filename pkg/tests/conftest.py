import numpy as np
import pytest

from mmsim.population import Population, SyntheticPopSpec, VariableSpec
from mmsim.sampling import DrawnSample, FollowUp


def make_population(y, psu_ids, modes=None, labels=None, variable_names=None):
    """Hand-built population from per-household rows."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if y.shape[0] == 1 and len(psu_ids) > 1:
        y = y.T
    n = y.shape[0]
    names = variable_names or tuple(f"v{j + 1}" for j in range(y.shape[1]))
    return Population(
        ids=np.arange(n, dtype=np.int64),
        psu_ids=np.asarray(psu_ids, dtype=np.int64),
        y=y,
        modes=None if modes is None else np.asarray(modes, dtype=np.int8),
        labels=None if labels is None else np.asarray(labels, dtype=np.int8),
        variable_names=tuple(names),
    )


SMALL_SPEC = SyntheticPopSpec(
    n_psus=150,
    households_min=80,
    households_max=120,
    share_web=0.48,
    share_mail=0.26,
    variables=(
        VariableSpec("v1", 0.88, 0.82, 0.77),
        VariableSpec("v3", 0.45, 0.35, 0.28),
        VariableSpec("inc", 0.75, 0.62, 0.52, kind="continuous", sd=0.55),
    ),
    icc_outcome=0.02,
    icc_response=0.02,
    seed=1234,
)


@pytest.fixture(scope="session")
def small_synthetic():
    from mmsim.population import generate_synthetic

    return generate_synthetic(SMALL_SPEC)


def toy_sample(d, delta_w, delta_f=None, elig=None, psu_ids=None,
               design="two_stage", followup=None, psu_subsample=None, tag="S"):
    """Directly assemble a DrawnSample in a fixed response state."""
    d = np.asarray(d, dtype=float)
    n = len(d)
    delta_w = np.asarray(delta_w, dtype=np.uint8)
    delta_f = (np.zeros(n, dtype=np.uint8) if delta_f is None
               else np.asarray(delta_f, dtype=np.uint8))
    psu_ids = (np.zeros(n, dtype=np.int64) if psu_ids is None
               else np.asarray(psu_ids, dtype=np.int64))
    if followup is None:
        followup = FollowUp("all")
    if elig is None:
        if followup.kind == "all":
            elig = delta_w == 0
        elif followup.kind == "psu":
            inside = np.isin(psu_ids, sorted(psu_subsample))
            elig = inside & (delta_w == 0)
        else:
            raise ValueError("explicit eligibility needed for this follow-up kind")
    psu_pi = None
    if design == "two_stage":
        psu_pi = {int(p): 0.5 for p in np.unique(psu_ids)}
    return DrawnSample(
        tag=tag, design=design, unit_idx=np.arange(n), d=d, psu_ids=psu_ids,
        followup=followup, psu_pi=psu_pi,
        psu_subsample=None if psu_subsample is None else frozenset(psu_subsample),
        in_ftf_subsample=np.asarray(elig, dtype=bool), delta_w=delta_w, delta_f=delta_f,
    )


def random_case(rng):
    """A random small sample + outcome matrix covering all follow-up kinds.

    Constructed so that no estimator is degenerate: there is at least one
    web respondent and at least one ftf respondent among the eligible.
    """
    n = int(rng.integers(6, 40))
    n_psus = int(rng.integers(2, 6))
    d = rng.uniform(0.5, 10.0, n)
    psu_ids = np.sort(rng.integers(0, n_psus, n))
    kind = ("all", "unit", "psu")[int(rng.integers(0, 3))]
    delta_w = (rng.random(n) < 0.45).astype(np.uint8)
    delta_w[int(rng.integers(0, n))] = 1
    nonresp = np.flatnonzero(delta_w == 0)
    if len(nonresp) == 0:
        delta_w[: max(2, n // 3)] = 0
        nonresp = np.flatnonzero(delta_w == 0)
    psu_subsample = None
    followup = FollowUp("all")
    if kind == "all":
        elig = delta_w == 0
        omega = 1.0
    elif kind == "unit":
        omega = float(rng.uniform(0.3, 1.0))
        followup = FollowUp("unit", omega=omega)
        elig = np.zeros(n, dtype=bool)
        elig[rng.permutation(nonresp)[: max(1, int(len(nonresp) * omega))]] = True
    else:
        psus = np.unique(psu_ids)
        count = max(1, len(psus) // 2)
        psu_subsample = frozenset(int(p) for p in rng.permutation(psus)[:count])
        followup = FollowUp("psu", n_sub_psus=count)
        inside = np.isin(psu_ids, sorted(psu_subsample))
        elig = inside & (delta_w == 0)
        if not elig.any():  # make the subsample nonempty in eligible mass
            forced = int(nonresp[0])
            psu_subsample = frozenset(set(psu_subsample) | {int(psu_ids[forced])})
            inside = np.isin(psu_ids, sorted(psu_subsample))
            followup = FollowUp("psu", n_sub_psus=len(psu_subsample))
            elig = inside & (delta_w == 0)
    delta_f = np.zeros(n, dtype=np.uint8)
    pool = np.flatnonzero(elig)
    take = max(1, int(round(len(pool) * float(rng.uniform(0.3, 1.0)))))
    delta_f[rng.permutation(pool)[:take]] = 1
    y = rng.normal(2.0, 1.5, size=(n, 2))
    sample = toy_sample(d, delta_w, delta_f, elig=elig, psu_ids=psu_ids,
                        design="two_stage", followup=followup,
                        psu_subsample=psu_subsample)
    return sample, y

