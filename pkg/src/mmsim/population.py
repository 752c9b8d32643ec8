"""Finite household populations: ingestion, synthesis, labelling, summaries.

A population is stored column-wise (numpy arrays) and is immutable after
construction, so it can be shared read-only across worker processes.  Each
household carries a source mode (how it answered the survey the microdata
came from) and, once a response rule has been applied, a response label:
responds to a web invitation, responds only to the face-to-face (ftf)
follow-up, or never responds.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import IntegrityError, ParseError, SchemaError, ValidationError

# Source modes (from ingested or generated microdata).
MODE_WEB, MODE_MAIL, MODE_FTF = 0, 1, 2
MODE_NAMES = ("WEB", "MAIL", "FTF")

# Response labels under the web-then-ftf protocol.
LABEL_WEB, LABEL_FTF, LABEL_NONE = 0, 1, 2
LABEL_NAMES = ("W", "F", "N")

RULES = ("A", "B", "C", "D")

_SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class Population:
    """Immutable roster of households.

    ``labels`` is None for a raw (mode-only) population and becomes a
    per-household response label once a rule or propensity draw is applied.
    ``y`` has one column per analysis variable.
    """

    ids: np.ndarray
    psu_ids: np.ndarray
    y: np.ndarray
    modes: np.ndarray | None
    labels: np.ndarray | None
    variable_names: tuple[str, ...]
    propensities: np.ndarray | None = None
    _psu_index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.ids)
        if n == 0:
            raise IntegrityError("population is empty")
        if self.y.shape != (n, len(self.variable_names)):
            raise IntegrityError(
                f"outcome matrix shape {self.y.shape} does not match "
                f"{n} households x {len(self.variable_names)} variables"
            )
        if len(self.psu_ids) != n:
            raise IntegrityError("psu_ids length mismatch")
        if len(np.unique(self.ids)) != n:
            raise IntegrityError("duplicate household ids")
        if self.labels is not None and len(self.labels) != n:
            raise IntegrityError("labels length mismatch")
        if self.propensities is not None:
            _validate_propensities(self.propensities)

    @property
    def n_households(self) -> int:
        return len(self.ids)

    @property
    def n_variables(self) -> int:
        return len(self.variable_names)

    def psu_frame(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Distinct PSU ids, their household counts, and per-household
        dense PSU codes (index into the distinct-id array)."""
        if self._psu_index is None:
            psus, codes = np.unique(self.psu_ids, return_inverse=True)
            sizes = np.bincount(codes)
            by_psu = np.argsort(codes, kind="stable")
            starts = np.concatenate(([0], np.cumsum(sizes)))
            object.__setattr__(
                self,
                "_psu_index",
                {"psus": psus, "sizes": sizes, "codes": codes,
                 "members": by_psu, "starts": starts},
            )
        ix = self._psu_index
        return ix["psus"], ix["sizes"], ix["codes"]

    def psu_members(self, psu_code: int) -> np.ndarray:
        """Household row indices belonging to the PSU with dense code."""
        self.psu_frame()
        ix = self._psu_index
        return ix["members"][ix["starts"][psu_code]:ix["starts"][psu_code + 1]]

    def household(self, i: int) -> "Household":
        return Household(
            id=int(self.ids[i]),
            psu_id=int(self.psu_ids[i]),
            y=self.y[i],
            source_mode=MODE_NAMES[self.modes[i]] if self.modes is not None else None,
            label=LABEL_NAMES[self.labels[i]] if self.labels is not None else None,
            propensity=(tuple(float(p) for p in self.propensities[i])
                        if self.propensities is not None else None),
        )

    def with_labels(self, labels: np.ndarray) -> "Population":
        return replace(self, labels=labels, _psu_index=self._psu_index)

    def with_propensities(self, phi: np.ndarray) -> "Population":
        return replace(self, propensities=phi, _psu_index=self._psu_index)


@dataclass(frozen=True)
class Household:
    """Row view of one household (for inspection and audits)."""

    id: int
    psu_id: int
    y: np.ndarray
    source_mode: str | None
    label: str | None
    propensity: tuple[float, float] | None

    @property
    def phi_f_given_wc(self) -> float | None:
        """Conditional ftf propensity, defined only when phi_w < 1."""
        if self.propensity is None or self.propensity[0] >= 1.0:
            return None
        return self.propensity[1] / (1.0 - self.propensity[0])


@dataclass(frozen=True)
class PopulationSummary:
    """Category shares and means satisfying
    total = N * (gamma_w*mean_w + gamma_f*mean_f + (1-gamma_w-gamma_f)*mean_n).
    """

    n_households: int
    gamma_w: float
    gamma_f: float
    mean_w: np.ndarray
    mean_f: np.ndarray
    mean_n: np.ndarray
    total: np.ndarray


@dataclass(frozen=True)
class MicrodataSchema:
    """Column mapping for household microdata CSV files."""

    id: str = "id"
    psu: str = "psu"
    mode: str = "mode"
    variables: tuple[str, ...] = ()
    label: str | None = None


@dataclass(frozen=True)
class VariableSpec:
    """One synthetic analysis variable with per-source-mode means."""

    name: str
    mean_web: float
    mean_mail: float
    mean_ftf: float
    kind: str = "binary"  # "binary" | "continuous"
    sd: float | None = None  # within-mode sd, continuous only

    def mode_means(self) -> np.ndarray:
        return np.array([self.mean_web, self.mean_mail, self.mean_ftf])


@dataclass(frozen=True)
class SyntheticPopSpec:
    """Recipe for a clustered synthetic population.

    PSU-level random effects are additive on both the outcome means and
    the web-mode share; loadings are calibrated in closed form so the
    realized outcome intraclass correlation matches ``icc_outcome``.
    """

    n_psus: int
    households_min: int
    households_max: int
    share_web: float
    share_mail: float
    variables: tuple[VariableSpec, ...]
    icc_outcome: float = 0.0
    icc_response: float = 0.0
    seed: int = 0

    @property
    def share_ftf(self) -> float:
        return 1.0 - self.share_web - self.share_mail

    def validate(self) -> None:
        if self.n_psus < 1 or self.households_min < 1:
            raise ValidationError("PSU and household counts must be positive")
        if self.households_max < self.households_min:
            raise ValidationError("households_max < households_min")
        if not self.variables:
            raise ValidationError("at least one variable is required")
        for s in (self.share_web, self.share_mail, self.share_ftf):
            if not 0.0 <= s <= 1.0:
                raise ValidationError(f"mode shares must lie in the simplex, got {s}")
        for icc in (self.icc_outcome, self.icc_response):
            if not 0.0 <= icc < 1.0:
                raise ValidationError(f"intraclass correlation must be in [0, 1), got {icc}")
        for v in self.variables:
            if v.kind not in ("binary", "continuous"):
                raise ValidationError(f"{v.name}: unknown kind {v.kind!r}")
            if v.kind == "binary":
                for m in v.mode_means():
                    if not 0.0 < m < 1.0:
                        raise ValidationError(
                            f"{v.name}: binary mean {m} outside (0, 1)"
                        )
                loads = _binary_loadings(v.mode_means(),
                                         _mode_shares(self), self.icc_outcome)
                lo = v.mode_means() - loads * _SQRT3
                hi = v.mode_means() + loads * _SQRT3
                if lo.min() < 0.0 or hi.max() > 1.0:
                    raise ValidationError(
                        f"{v.name}: icc_outcome={self.icc_outcome} pushes a PSU-level "
                        f"probability outside [0, 1]; reduce the icc or move the means"
                    )
            else:
                if v.sd is None or v.sd <= 0:
                    raise ValidationError(f"{v.name}: continuous variables need sd > 0")
        b = _response_loading(self)
        if self.share_web - b * _SQRT3 < 0 or self.share_web + b * _SQRT3 > 1:
            raise ValidationError(
                "icc_response pushes a PSU-level web share outside [0, 1]"
            )


def _mode_shares(spec: SyntheticPopSpec) -> np.ndarray:
    return np.array([spec.share_web, spec.share_mail, spec.share_ftf])


def _total_variance(means: np.ndarray, shares: np.ndarray, within: np.ndarray) -> float:
    """Population variance of one variable: within-mode plus between-mode."""
    grand = float(shares @ means)
    between = float(shares @ means**2) - grand**2
    return float(shares @ within) + between


def _binary_loadings(means: np.ndarray, shares: np.ndarray, icc: float) -> np.ndarray:
    """PSU-effect loadings per mode so the overall outcome ICC equals ``icc``.

    With a shared standardized PSU effect u and success probability
    p_c + b_c * u in mode c, the between-PSU variance is (sum_c g_c b_c)^2.
    Choosing b_c proportional to sqrt(p_c q_c) and scaling the common factor
    to icc * Var_total gives the exact target.
    """
    if icc == 0.0:
        return np.zeros_like(means)
    pq = means * (1.0 - means)
    v_tot = _total_variance(means, shares, pq)
    denom = float(shares @ np.sqrt(pq))
    return np.sqrt(icc * v_tot) / denom * np.sqrt(pq)


def _response_loading(spec: SyntheticPopSpec) -> float:
    if spec.icc_response == 0.0:
        return 0.0
    return math.sqrt(spec.icc_response * spec.share_web * (1.0 - spec.share_web))


def generate_synthetic(spec: SyntheticPopSpec) -> Population:
    """Generate a raw clustered population (modes assigned, labels unset)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    sizes = rng.integers(spec.households_min, spec.households_max + 1, spec.n_psus)
    n = int(sizes.sum())
    psu_of_hh = np.repeat(np.arange(spec.n_psus), sizes)

    # Mode assignment: the PSU effect shifts the web share; mail and ftf
    # split the remainder in their marginal proportions.
    u_resp = rng.uniform(-_SQRT3, _SQRT3, spec.n_psus)
    b_resp = _response_loading(spec)
    q_web = np.clip(spec.share_web + b_resp * u_resp, 0.0, 1.0)
    rest = 1.0 - spec.share_web
    q_mail = spec.share_mail * (1.0 - q_web) / rest if rest > 0 else np.zeros_like(q_web)
    u = rng.random(n)
    qw = q_web[psu_of_hh]
    qm = q_mail[psu_of_hh]
    modes = np.where(u < qw, MODE_WEB, np.where(u < qw + qm, MODE_MAIL, MODE_FTF))
    modes = modes.astype(np.int8)

    # Outcomes: one shared standardized PSU effect per variable.
    shares = _mode_shares(spec)
    y = np.empty((n, len(spec.variables)))
    for j, v in enumerate(spec.variables):
        u_y = rng.uniform(-_SQRT3, _SQRT3, spec.n_psus)[psu_of_hh]
        means = v.mode_means()[modes]
        if v.kind == "binary":
            loads = _binary_loadings(v.mode_means(), shares, spec.icc_outcome)
            p = np.clip(means + loads[modes] * u_y, 0.0, 1.0)
            y[:, j] = (rng.random(n) < p).astype(float)
        else:
            v_tot = _total_variance(v.mode_means(), shares,
                                    np.full(3, v.sd**2))
            b = math.sqrt(spec.icc_outcome * v_tot)
            sd_within = math.sqrt(max(v.sd**2 - b**2, 0.0))
            y[:, j] = means + b * u_y + rng.normal(0.0, sd_within, n)

    return Population(
        ids=np.arange(n, dtype=np.int64),
        psu_ids=psu_of_hh.astype(np.int64),
        y=y,
        modes=modes,
        labels=None,
        variable_names=tuple(v.name for v in spec.variables),
    )


def build_pseudopopulation(raw: Population, rule: str, rng: np.random.Generator) -> Population:
    """Assign response labels from source modes under rule A, B, C or D.

    Half-splits are exact per mode group: shuffle, first half becomes ftf
    respondents, remainder (plus the odd one) nonrespondents.
    """
    if rule not in RULES:
        raise ValidationError(f"unknown pseudopopulation rule {rule!r}")
    if raw.modes is None:
        raise IntegrityError("source mode is unset; cannot apply a response rule")
    modes = raw.modes
    labels = np.empty(raw.n_households, dtype=np.int8)
    if rule == "A":
        labels[modes == MODE_WEB] = LABEL_WEB
        labels[modes == MODE_MAIL] = LABEL_FTF
        labels[modes == MODE_FTF] = LABEL_NONE
    elif rule == "B":
        labels[modes == MODE_WEB] = LABEL_WEB
        for m in (MODE_MAIL, MODE_FTF):
            _half_split(labels, np.flatnonzero(modes == m), rng)
    elif rule == "C":
        labels[modes == MODE_WEB] = LABEL_WEB
        labels[(modes == MODE_MAIL) | (modes == MODE_FTF)] = LABEL_FTF
    else:  # D
        labels[modes == MODE_MAIL] = LABEL_WEB
        for m in (MODE_WEB, MODE_FTF):
            _half_split(labels, np.flatnonzero(modes == m), rng)
    return raw.with_labels(labels)


def _half_split(labels: np.ndarray, idx: np.ndarray, rng: np.random.Generator) -> None:
    perm = rng.permutation(len(idx))
    half = len(idx) // 2
    labels[idx[perm[:half]]] = LABEL_FTF
    labels[idx[perm[half:]]] = LABEL_NONE


def _validate_propensities(phi: np.ndarray) -> None:
    if phi.ndim != 2 or phi.shape[1] != 2:
        raise IntegrityError("propensity array must be (N, 2)")
    pw, pf = phi[:, 0], phi[:, 1]
    if (pw < 0).any() or (pw > 1).any() or (pf < 0).any() or (pf > 1).any():
        raise ValidationError("propensities must lie in [0, 1]")
    s = pw + pf
    if (s <= 0).any() or (s > 1 + 1e-12).any():
        raise ValidationError("phi_w + phi_f must lie in (0, 1]")


def attach_propensities(pop: Population, by_mode: Mapping[str, tuple[float, float]]) -> Population:
    """Give every household the propensity vector of its source mode."""
    if pop.modes is None:
        raise IntegrityError("source mode is unset; cannot map propensities")
    table = np.zeros((3, 2))
    for name, code in zip(MODE_NAMES, range(3)):
        if name not in by_mode:
            raise ValidationError(f"missing propensity entry for mode {name}")
        table[code] = by_mode[name]
    phi = table[pop.modes]
    _validate_propensities(phi)
    return pop.with_propensities(phi)


def draw_stochastic_labels(pop: Population, rng: np.random.Generator) -> Population:
    """Draw labels from per-household propensity vectors.

    A household responds by web with probability phi_w, otherwise by ftf
    with the conditional probability phi_f / (1 - phi_w).
    """
    if pop.propensities is None:
        raise IntegrityError("population has no propensity vectors")
    pw = pop.propensities[:, 0]
    pf = pop.propensities[:, 1]
    u = rng.random(pop.n_households)
    labels = np.where(u < pw, LABEL_WEB,
                      np.where(u < pw + pf, LABEL_FTF, LABEL_NONE)).astype(np.int8)
    return pop.with_labels(labels)


def summarize(pop: Population) -> PopulationSummary:
    """Category shares and per-variable means and totals."""
    if pop.labels is None:
        raise IntegrityError("population has no response labels")
    n = pop.n_households
    masks = [pop.labels == c for c in (LABEL_WEB, LABEL_FTF, LABEL_NONE)]
    counts = [int(m.sum()) for m in masks]
    means = [pop.y[m].mean(axis=0) if c else np.full(pop.n_variables, np.nan)
             for m, c in zip(masks, counts)]
    return PopulationSummary(
        n_households=n,
        gamma_w=counts[0] / n,
        gamma_f=counts[1] / n,
        mean_w=means[0],
        mean_f=means[1],
        mean_n=means[2],
        total=pop.y.sum(axis=0),
    )


def estimate_icc(values: np.ndarray, groups: np.ndarray) -> float:
    """One-way ANOVA (method of moments) intraclass correlation."""
    gids, codes = np.unique(groups, return_inverse=True)
    k = len(gids)
    n = len(values)
    if k < 2 or n <= k:
        raise ValidationError("need at least 2 groups and more units than groups")
    sizes = np.bincount(codes)
    sums = np.bincount(codes, weights=values)
    grand = values.sum() / n
    ss_between = float((sums**2 / sizes).sum() - n * grand**2)
    ss_within = float((values**2).sum() - (sums**2 / sizes).sum())
    msb = ss_between / (k - 1)
    msw = ss_within / (n - k)
    n0 = (n - float((sizes**2).sum()) / n) / (k - 1)
    denom = msb + (n0 - 1.0) * msw
    return float((msb - msw) / denom) if denom > 0 else 0.0


# ---------------------------------------------------------------------------
# CSV interchange.  Header row required; columns id, psu, mode (WEB/MAIL/FTF),
# one numeric column per variable, and optionally a label column (W/F/N).
# ---------------------------------------------------------------------------

def load_microdata(path: str | Path, schema: MicrodataSchema) -> Population:
    """Read a household microdata CSV into a raw population."""
    path = Path(path)
    mode_codes = {name: code for code, name in enumerate(MODE_NAMES)}
    label_codes = {name: code for code, name in enumerate(LABEL_NAMES)}
    if not schema.variables:
        raise SchemaError("schema lists no variable columns")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [schema.id, schema.psu, schema.mode, *schema.variables]
        if schema.label is not None:
            needed.append(schema.label)
        for col in needed:
            if col not in header:
                raise SchemaError(f"required column {col!r} missing from {path.name}")
        ids, psus, modes, labels, rows = [], [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                ids.append(int(row[schema.id]))
                psus.append(int(row[schema.psu]))
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path.name}:{lineno}: bad id/psu value ({exc})") from None
            mode = (row[schema.mode] or "").strip().upper()
            if mode not in mode_codes:
                raise ParseError(f"{path.name}:{lineno}: unknown mode {row[schema.mode]!r}")
            modes.append(mode_codes[mode])
            try:
                rows.append([float(row[c]) for c in schema.variables])
            except (TypeError, ValueError):
                raise ParseError(f"{path.name}:{lineno}: non-numeric outcome value") from None
            if schema.label is not None:
                lab = (row[schema.label] or "").strip().upper()
                if lab not in label_codes:
                    raise ParseError(f"{path.name}:{lineno}: unknown label {row[schema.label]!r}")
                labels.append(label_codes[lab])
    if not ids:
        raise ParseError(f"{path.name}: no data rows")
    ids_arr = np.asarray(ids, dtype=np.int64)
    if len(np.unique(ids_arr)) != len(ids_arr):
        seen: set[int] = set()
        dup = next(i for i in ids if i in seen or seen.add(i))
        raise IntegrityError(f"duplicate household id {dup}")
    return Population(
        ids=ids_arr,
        psu_ids=np.asarray(psus, dtype=np.int64),
        y=np.asarray(rows, dtype=float),
        modes=np.asarray(modes, dtype=np.int8),
        labels=np.asarray(labels, dtype=np.int8) if schema.label is not None else None,
        variable_names=tuple(schema.variables),
    )


def write_population_csv(pop: Population, path: str | Path) -> None:
    """Write a population back out in the interchange layout."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["id", "psu", "mode", *pop.variable_names]
        if pop.labels is not None:
            header.append("label")
        writer.writerow(header)
        for i in range(pop.n_households):
            row = [int(pop.ids[i]), int(pop.psu_ids[i]),
                   MODE_NAMES[pop.modes[i]] if pop.modes is not None else "WEB",
                   *(repr(float(v)) for v in pop.y[i])]
            if pop.labels is not None:
                row.append(LABEL_NAMES[pop.labels[i]])
            writer.writerow(row)


def default_schema(variable_names: Sequence[str], with_label: bool = False) -> MicrodataSchema:
    """Schema matching ``write_population_csv`` output."""
    return MicrodataSchema(variables=tuple(variable_names),
                           label="label" if with_label else None)
