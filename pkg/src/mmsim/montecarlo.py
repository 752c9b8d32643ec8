"""Scenario orchestration: seeded replication, metrics, and writers.

Every iteration derives its random streams from (master seed, scenario
key, iteration index, stage), so results are identical for any degree
of parallelism and adding estimators to a scenario never perturbs the
sampling draws.  Degenerate estimator realizations are recorded and
excluded from metric denominators, never imputed.

Metric conventions: relative bias and CV are per-iteration measures
averaged across iterations; RRMSE and confidence-interval coverage are
cross-iteration aggregates.  Aggregate rows average the per-variable
metrics across variables (ABS_RB averages the absolute per-variable
relative biases).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import estimators as est
from . import response, sampling, variance
from .errors import ConfigError, DegenerateResultsError, EstimationError
from .population import Population, RULES, build_pseudopopulation, draw_stochastic_labels
from .variance import VarianceUnitPlan, build_variance_units, confidence_interval

# RNG stages within one iteration.
STAGE_LABELS = 0
STAGE_UNCLUSTERED = 1
STAGE_CLUSTERED = 2
STAGE_FOLLOWUP = 3
STAGE_VARUNITS = 4
STAGE_RULE = 999  # one-shot pseudopopulation build

DESIGN_KINDS = ("hybrid", "two_phase_unit", "two_phase_psu")

_ALLOWED = {
    "hybrid": {est.EST_T1, est.EST_T2, est.EST_TA, est.EST_TB1, est.EST_TDF1, est.EST_TDF2},
    "two_phase_unit": {est.EST_T1, est.EST_T2},
    "two_phase_psu": {est.EST_T1, est.EST_T2, est.EST_T2_ALT},
}


@dataclass(frozen=True)
class DesignSpec:
    kind: str
    n_unclustered: int = 0
    n_psus: int = 0
    m_per_psu: int = 0
    omega: float = 1.0          # unit subsampling fraction
    n_sub_psus: int = 0         # PSU subsampling count

    def validate(self) -> None:
        if self.kind not in DESIGN_KINDS:
            raise ConfigError(f"unknown design kind {self.kind!r}")
        if self.kind == "hybrid":
            if self.n_unclustered < 1 or self.n_psus < 1 or self.m_per_psu < 1:
                raise ConfigError("hybrid design needs n_unclustered, n_psus, m_per_psu")
        else:
            if self.n_psus < 1 or self.m_per_psu < 1:
                raise ConfigError(f"{self.kind} design needs n_psus and m_per_psu")
        if self.kind == "two_phase_unit" and not 0.0 < self.omega <= 1.0:
            raise ConfigError("unit subsampling fraction must be in (0, 1]")
        if self.kind == "two_phase_psu" and not 0 < self.n_sub_psus <= self.n_psus:
            raise ConfigError("n_sub_psus must be in 1..n_psus")


@dataclass(frozen=True)
class EstimatorSpec:
    id: str
    label: str | None = None
    compositing: float | str | None = None  # None: scenario default

    @property
    def name(self) -> str:
        return self.label or self.id


@dataclass(frozen=True)
class ScenarioSpec:
    id: str
    rule: str  # A|B|C|D|stochastic|as_is
    design: DesignSpec
    estimators: tuple[EstimatorSpec, ...]
    iterations: int
    seed: int
    compositing: float | str = "effective"
    icc_planning: float = 0.0
    n_hat_mode: str = "composite"

    def validate(self) -> None:
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if not self.estimators:
            raise ConfigError("estimator list is empty")
        if self.rule not in (*RULES, "stochastic", "as_is"):
            raise ConfigError(f"unknown pseudopopulation rule {self.rule!r}")
        self.design.validate()
        allowed = _ALLOWED[self.design.kind]
        names = set()
        for spec in self.estimators:
            if spec.id not in est.ALL_ESTIMATORS:
                raise ConfigError(f"unknown estimator id {spec.id!r}")
            if spec.id not in allowed:
                raise ConfigError(
                    f"estimator {spec.id} is not defined for the {self.design.kind} design"
                )
            if spec.name in names:
                raise ConfigError(f"duplicate estimator label {spec.name!r}")
            names.add(spec.name)
            if isinstance(spec.compositing, float) and not 0.0 <= spec.compositing <= 1.0:
                raise ConfigError("compositing override must be in [0, 1]")
        if isinstance(self.compositing, str) and self.compositing != "effective":
            raise ConfigError(f"unknown compositing mode {self.compositing!r}")
        if self.n_hat_mode not in ("composite", "frame"):
            raise ConfigError(f"unknown n_hat mode {self.n_hat_mode!r}")


@dataclass(frozen=True)
class EstimatorCell:
    point: np.ndarray
    variance: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    covered: np.ndarray
    degenerate: bool = False
    reason: str | None = None


@dataclass(frozen=True)
class IterationResult:
    iteration: int
    cells: dict[str, EstimatorCell]


def scenario_key(scenario_id: str) -> int:
    digest = hashlib.sha256(scenario_id.encode()).digest()
    return int.from_bytes(digest[:8], "big")


def stage_rng(master_seed: int, scen_key: int, iteration: int, stage: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence((master_seed, scen_key, iteration, stage))
    )


def prepare_population(pop: Population, scenario: ScenarioSpec) -> Population:
    """Apply a deterministic response rule once, ahead of the iterations."""
    if scenario.rule == "stochastic":
        if pop.propensities is None:
            raise ConfigError("stochastic rule requires household propensity vectors")
        return pop
    if scenario.rule == "as_is":
        if pop.labels is None:
            raise ConfigError("rule 'as_is' requires a population with labels")
        return pop
    rng = stage_rng(scenario.seed, scenario_key(scenario.id), 0, STAGE_RULE)
    return build_pseudopopulation(pop, scenario.rule, rng)


def _factors_for(spec: EstimatorSpec, scenario: ScenarioSpec,
                 sa: sampling.DrawnSample, sb: sampling.DrawnSample,
                 cache: dict) -> est.CompositeFactors:
    setting = spec.compositing if spec.compositing is not None else scenario.compositing
    key = ("eff",) if setting == "effective" else ("fix", float(setting))
    if key not in cache:
        if setting == "effective":
            cache[key] = est.compute_factors(sa, sb, scenario.icc_planning)
        else:
            cache[key] = est.compute_factors(sa, sb, 0.0, fixed=float(setting))
    return cache[key]


def run_iteration(scenario: ScenarioSpec, pop: Population, truth: np.ndarray,
                  iteration: int, keep_samples: bool = False) -> IterationResult:
    """Draw, collect, estimate, and attach variances for one replicate."""
    key = scenario_key(scenario.id)
    if scenario.rule == "stochastic":
        labels = draw_stochastic_labels(
            pop, stage_rng(scenario.seed, key, iteration, STAGE_LABELS)
        ).labels
    else:
        labels = pop.labels
    design = scenario.design

    plans: dict[str, VarianceUnitPlan] = {}
    samples: dict[str, sampling.DrawnSample] = {}
    outcomes: dict[str, np.ndarray] = {}

    if design.kind == "hybrid":
        sa = sampling.srswor(pop, design.n_unclustered,
                             stage_rng(scenario.seed, key, iteration, STAGE_UNCLUSTERED),
                             tag="A")
        sa = response.apply_protocol(sa, labels, response.WEB_ONLY)
        sb = sampling.two_stage_select(pop, design.n_psus, design.m_per_psu,
                                       stage_rng(scenario.seed, key, iteration, STAGE_CLUSTERED),
                                       tag="B")
        sb = response.apply_protocol(sb, labels, response.WEB_ONLY)
        sb = sampling.followup_all_units(sb)
        sb = response.apply_protocol(sb, labels, response.WEB_THEN_FTF)
        samples = {"A": sa, "B": sb}
    else:
        s = sampling.two_stage_select(pop, design.n_psus, design.m_per_psu,
                                      stage_rng(scenario.seed, key, iteration, STAGE_CLUSTERED),
                                      tag="S")
        s = response.apply_protocol(s, labels, response.WEB_ONLY)
        rng_follow = stage_rng(scenario.seed, key, iteration, STAGE_FOLLOWUP)
        if design.kind == "two_phase_unit":
            s = sampling.subsample_nonrespondents_units(s, design.omega, rng_follow)
        else:
            s = sampling.subsample_psus(s, design.n_sub_psus, rng_follow)
            plans["S"] = build_variance_units(
                s, stage_rng(scenario.seed, key, iteration, STAGE_VARUNITS)
            )
        s = response.apply_protocol(s, labels, response.WEB_THEN_FTF)
        samples = {"S": s}
    outcomes = {tag: pop.y[smp.unit_idx] for tag, smp in samples.items()}

    cells: dict[str, EstimatorCell] = {}
    factor_cache: dict = {}
    component_cache: dict[str, est.EstimatorResult] = {}

    def component(eid: str) -> est.EstimatorResult:
        if eid not in component_cache:
            if eid == est.EST_TA:
                component_cache[eid] = est.web_only_total(samples["A"], outcomes["A"])
            else:  # TB1
                component_cache[eid] = est.clustered_uniform_total(samples["B"], outcomes["B"])
        return component_cache[eid]

    for spec in scenario.estimators:
        try:
            if design.kind == "hybrid":
                if spec.id == est.EST_T1:
                    result = est.uniform_adjustment_total(samples["B"], outcomes["B"])
                elif spec.id == est.EST_TB1:
                    result = component(est.EST_TB1)
                elif spec.id == est.EST_T2:
                    result = est.followup_adjustment_total(samples["B"], outcomes["B"])
                elif spec.id == est.EST_TA:
                    result = component(est.EST_TA)
                elif spec.id == est.EST_TDF1:
                    fac = _factors_for(spec, scenario, samples["A"], samples["B"], factor_cache)
                    result = est.composite_total(component(est.EST_TA),
                                                 component(est.EST_TB1), fac.lam)
                else:  # TDF2
                    fac = _factors_for(spec, scenario, samples["A"], samples["B"], factor_cache)
                    result = est.web_composite_total(
                        samples["A"], outcomes["A"], samples["B"], outcomes["B"],
                        fac.kappa, n_hat_mode=scenario.n_hat_mode,
                        frame_n=pop.n_households,
                    )
            else:
                s = samples["S"]
                if spec.id == est.EST_T1:
                    result = est.uniform_adjustment_total(s, outcomes["S"])
                elif spec.id == est.EST_T2:
                    result = est.followup_adjustment_total(s, outcomes["S"])
                else:  # T2_AltOmega
                    result = est.followup_adjustment_total(s, outcomes["S"],
                                                           expansion="realized")
            var = variance.taylor_variance(result, plans=plans or None)
            low, high, covered = confidence_interval(result.total, var.variance, truth)
            cells[spec.name] = EstimatorCell(
                point=result.total, variance=var.variance,
                ci_low=low, ci_high=high, covered=covered,
            )
        except EstimationError as exc:
            nan = np.full(len(truth), np.nan)
            cells[spec.name] = EstimatorCell(
                point=nan, variance=nan, ci_low=nan, ci_high=nan,
                covered=np.zeros(len(truth), dtype=bool),
                degenerate=True, reason=str(exc),
            )
    out = IterationResult(iteration=iteration, cells=cells)
    if keep_samples:
        out = (out, samples)  # debugging hook used by tests
    return out


# ---------------------------------------------------------------------------
# Parallel driver.
# ---------------------------------------------------------------------------

_CTX: dict = {}


def _worker_init(pop, scenario, truth):
    _CTX["args"] = (pop, scenario, truth)


def _worker_chunk(span):
    pop, scenario, truth = _CTX["args"]
    return [run_iteration(scenario, pop, truth, i) for i in span]


def run_scenario(pop: Population, scenario: ScenarioSpec, jobs: int = 1,
                 progress: bool = False) -> list[IterationResult]:
    """Run all iterations; output is independent of ``jobs``."""
    scenario.validate()
    pop = prepare_population(pop, scenario)
    truth = pop.y.sum(axis=0)
    n = scenario.iterations
    if jobs <= 1:
        results = []
        for i in range(n):
            results.append(run_iteration(scenario, pop, truth, i))
            if progress and (i + 1) % 1000 == 0:
                print(f"{scenario.id}: {i + 1}/{n} iterations", file=sys.stderr)
        return results
    chunk = max(1, math.ceil(n / (jobs * 8)))
    spans = [range(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
    results: list[IterationResult | None] = [None] * n
    with ProcessPoolExecutor(max_workers=jobs, initializer=_worker_init,
                             initargs=(pop, scenario, truth)) as pool:
        for span, block in zip(spans, pool.map(_worker_chunk, spans)):
            for i, res in zip(span, block):
                results[i] = res
            if progress:
                done = sum(r is not None for r in results)
                print(f"{scenario.id}: {done}/{n} iterations", file=sys.stderr)
    return results  # type: ignore[return-value]


# ---------------------------------------------------------------------------
# Summaries.
# ---------------------------------------------------------------------------

AGGREGATE = "__mean__"


@dataclass(frozen=True)
class SummaryRow:
    estimator: str
    variable: str
    n_used: int
    degenerate: int
    rb: float
    se_rb: float
    cv: float
    se_cv: float
    rrmse: float
    se_rrmse: float
    coverage: float
    se_coverage: float
    abs_rb: float
    mean_cil: float
    norm_cil: float


@dataclass(frozen=True)
class ScenarioSummary:
    scenario: str
    variables: tuple[str, ...]
    rows: tuple[SummaryRow, ...]

    def row(self, estimator: str, variable: str = AGGREGATE) -> SummaryRow:
        for r in self.rows:
            if r.estimator == estimator and r.variable == variable:
                return r
        raise KeyError((estimator, variable))


def _collect(results: list[IterationResult], label: str):
    points, variances, covered, cils = [], [], [], []
    degenerate = 0
    for res in results:
        cell = res.cells[label]
        if cell.degenerate:
            degenerate += 1
            continue
        points.append(cell.point)
        variances.append(cell.variance)
        covered.append(cell.covered)
        cils.append(cell.ci_high - cell.ci_low)
    if not points:
        return None, degenerate
    return (np.array(points), np.array(variances),
            np.array(covered, dtype=float), np.array(cils)), degenerate


def summarize(results: list[IterationResult], truth: np.ndarray,
              variable_names: tuple[str, ...], scenario_id: str = "",
              cil_reference: dict[str, float] | None = None) -> ScenarioSummary:
    """Per-variable and variable-averaged metrics for every estimator.

    ``cil_reference`` maps variable names to the mean confidence-interval
    length used to normalize CIL (typically the cross-scenario mean);
    without it each variable is normalized by the within-run mean across
    estimators.
    """
    truth = np.asarray(truth, dtype=float)
    labels = list(results[0].cells)
    collected = {}
    for label in labels:
        data, degenerate = _collect(results, label)
        if data is None:
            raise DegenerateResultsError(
                f"estimator {label}: all {len(results)} iterations degenerate"
            )
        collected[label] = (data, degenerate)

    k = len(variable_names)
    if cil_reference is None:
        per_var_cils = {
            v: [collected[lab][0][3][:, j].mean() for lab in labels]
            for j, v in enumerate(variable_names)
        }
        cil_reference = {v: float(np.mean(vals)) for v, vals in per_var_cils.items()}

    rows = []
    for label in labels:
        (points, variances, covered, cils), degenerate = collected[label]
        n = len(points)
        rel = (points - truth[None, :]) / truth[None, :]
        sq = rel**2
        cv_i = np.sqrt(variances) / points
        rb = rel.mean(axis=0)
        se_rb = rel.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(k, np.nan)
        cv = cv_i.mean(axis=0)
        se_cv = cv_i.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(k, np.nan)
        m_sq = sq.mean(axis=0)
        rrmse = np.sqrt(m_sq)
        with np.errstate(divide="ignore", invalid="ignore"):
            se_rrmse = np.where(
                rrmse > 0,
                sq.std(axis=0, ddof=1) / math.sqrt(n) / (2.0 * rrmse),
                0.0,
            ) if n > 1 else np.full(k, np.nan)
        cover = covered.mean(axis=0)
        se_cover = np.sqrt(cover * (1.0 - cover) / n)
        mean_cil = cils.mean(axis=0)

        for j, v in enumerate(variable_names):
            ref = cil_reference.get(v)
            rows.append(SummaryRow(
                estimator=label, variable=v, n_used=n, degenerate=degenerate,
                rb=float(rb[j]), se_rb=float(se_rb[j]),
                cv=float(cv[j]), se_cv=float(se_cv[j]),
                rrmse=float(rrmse[j]), se_rrmse=float(se_rrmse[j]),
                coverage=float(cover[j]), se_coverage=float(se_cover[j]),
                abs_rb=float(abs(rb[j])),
                mean_cil=float(mean_cil[j]),
                norm_cil=float(mean_cil[j] / ref) if ref else float("nan"),
            ))

        # Variable-averaged row with MC errors that respect the
        # within-iteration correlation across variables.
        rel_agg = rel.mean(axis=1)
        cv_agg = cv_i.mean(axis=1)
        cover_agg = covered.mean(axis=1)
        if n > 1:
            with np.errstate(divide="ignore"):
                grad = np.where(m_sq > 0, 1.0 / (2.0 * k * np.sqrt(m_sq)), 0.0)
            cov_sq = np.cov(sq, rowvar=False).reshape(k, k)
            se_rrmse_agg = float(np.sqrt(max(grad @ cov_sq @ grad, 0.0) / n))
            se_rb_agg = float(rel_agg.std(ddof=1) / math.sqrt(n))
            se_cv_agg = float(cv_agg.std(ddof=1) / math.sqrt(n))
            se_cover_agg = float(cover_agg.std(ddof=1) / math.sqrt(n))
        else:
            se_rrmse_agg = se_rb_agg = se_cv_agg = se_cover_agg = float("nan")
        norm_vals = [mean_cil[j] / cil_reference[v]
                     for j, v in enumerate(variable_names) if cil_reference.get(v)]
        rows.append(SummaryRow(
            estimator=label, variable=AGGREGATE, n_used=n, degenerate=degenerate,
            rb=float(rel_agg.mean()), se_rb=se_rb_agg,
            cv=float(cv_agg.mean()), se_cv=se_cv_agg,
            rrmse=float(rrmse.mean()), se_rrmse=se_rrmse_agg,
            coverage=float(cover_agg.mean()), se_coverage=se_cover_agg,
            abs_rb=float(np.abs(rb).mean()),
            mean_cil=float(mean_cil.mean()),
            norm_cil=float(np.mean(norm_vals)) if norm_vals else float("nan"),
        ))
    return ScenarioSummary(scenario=scenario_id, variables=tuple(variable_names),
                           rows=tuple(rows))


# ---------------------------------------------------------------------------
# File interfaces.
# ---------------------------------------------------------------------------

def _write_metadata(fh, metadata: dict) -> None:
    for key, value in metadata.items():
        fh.write(f"# {key}: {value}\n")


def write_iterations_csv(path, scenario_id: str, results: list[IterationResult],
                         variable_names, metadata: dict) -> None:
    with open(path, "w", newline="") as fh:
        _write_metadata(fh, metadata)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "iteration", "variable", "estimator",
                    "point", "variance", "covered", "degenerate"])
        for res in results:
            for label, cell in res.cells.items():
                for j, v in enumerate(variable_names):
                    w.writerow([
                        scenario_id, res.iteration, v, label,
                        repr(float(cell.point[j])), repr(float(cell.variance[j])),
                        "" if cell.degenerate else int(cell.covered[j]),
                        int(cell.degenerate),
                    ])


_SUMMARY_FIELDS = ("n_used", "degenerate", "rb", "se_rb", "cv", "se_cv",
                   "rrmse", "se_rrmse", "coverage", "se_coverage",
                   "abs_rb", "mean_cil", "norm_cil")


def write_summary_csv(path, summary: ScenarioSummary, metadata: dict) -> None:
    with open(path, "w", newline="") as fh:
        _write_metadata(fh, metadata)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "estimator", "variable", *_SUMMARY_FIELDS])
        for r in summary.rows:
            w.writerow([summary.scenario, r.estimator, r.variable,
                        *(repr(getattr(r, f)) if isinstance(getattr(r, f), float)
                          else getattr(r, f) for f in _SUMMARY_FIELDS)])


def write_summary_json(path, summary: ScenarioSummary, metadata: dict) -> None:
    doc = {
        "metadata": metadata,
        "scenario": summary.scenario,
        "variables": list(summary.variables),
        "rows": [
            {"estimator": r.estimator, "variable": r.variable,
             **{f: getattr(r, f) for f in _SUMMARY_FIELDS}}
            for r in summary.rows
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def write_plotdata_csv(path, summary: ScenarioSummary, metadata: dict) -> None:
    """Long-format metric values for downstream charting."""
    with open(path, "w", newline="") as fh:
        _write_metadata(fh, metadata)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "variable", "estimator", "metric", "value"])
        for r in summary.rows:
            if r.variable == AGGREGATE:
                continue
            for metric in ("rb", "cv", "rrmse", "coverage", "norm_cil"):
                w.writerow([summary.scenario, r.variable, r.estimator,
                            metric, repr(getattr(r, metric))])
