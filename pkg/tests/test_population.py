import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmsim.errors import IntegrityError, ParseError, SchemaError, ValidationError
from mmsim.population import (
    LABEL_FTF,
    LABEL_NONE,
    LABEL_WEB,
    MODE_FTF,
    MODE_MAIL,
    MODE_WEB,
    MicrodataSchema,
    SyntheticPopSpec,
    VariableSpec,
    attach_propensities,
    build_pseudopopulation,
    default_schema,
    draw_stochastic_labels,
    estimate_icc,
    generate_synthetic,
    load_microdata,
    summarize,
    write_population_csv,
)

from conftest import SMALL_SPEC, make_population


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def _write(tmp_path, text, name="pop.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_three_rows(tmp_path):
    path = _write(tmp_path, "id,psu,mode,v1\n1,10,WEB,1.0\n2,10,MAIL,2.0\n3,20,FTF,3.0\n")
    pop = load_microdata(path, MicrodataSchema(variables=("v1",)))
    assert pop.n_households == 3
    assert pop.labels is None
    assert list(pop.modes) == [MODE_WEB, MODE_MAIL, MODE_FTF]
    psus, sizes, _ = pop.psu_frame()
    assert list(psus) == [10, 20] and list(sizes) == [2, 1]


def test_missing_column_is_schema_error(tmp_path):
    path = _write(tmp_path, "id,psu,mode\n1,1,WEB\n")
    with pytest.raises(SchemaError, match="v1"):
        load_microdata(path, MicrodataSchema(variables=("v1",)))


def test_bad_value_reports_line_number(tmp_path):
    path = _write(tmp_path, "id,psu,mode,v1\n1,1,WEB,1.0\n2,1,MAIL,oops\n")
    with pytest.raises(ParseError, match=":3"):
        load_microdata(path, MicrodataSchema(variables=("v1",)))


def test_duplicate_id_is_integrity_error(tmp_path):
    path = _write(tmp_path, "id,psu,mode,v1\n1,1,WEB,1.0\n1,1,MAIL,2.0\n")
    with pytest.raises(IntegrityError, match="duplicate"):
        load_microdata(path, MicrodataSchema(variables=("v1",)))


def test_roundtrip_is_lossless(tmp_path):
    rng = np.random.default_rng(3)
    n = 1000
    pop = make_population(
        y=rng.normal(size=(n, 3)),
        psu_ids=rng.integers(0, 25, n),
        modes=rng.integers(0, 3, n),
        labels=rng.integers(0, 3, n),
    )
    path = tmp_path / "roundtrip.csv"
    write_population_csv(pop, path)
    back = load_microdata(path, default_schema(pop.variable_names, with_label=True))
    np.testing.assert_array_equal(back.ids, pop.ids)
    np.testing.assert_array_equal(back.psu_ids, pop.psu_ids)
    np.testing.assert_array_equal(back.modes, pop.modes)
    np.testing.assert_array_equal(back.labels, pop.labels)
    np.testing.assert_array_equal(back.y, pop.y)


# ---------------------------------------------------------------------------
# Pseudopopulation rules
# ---------------------------------------------------------------------------

def test_rule_a_maps_modes_directly():
    pop = make_population([1.0, 2.0, 3.0], [0, 0, 0], modes=[MODE_WEB, MODE_MAIL, MODE_FTF])
    out = build_pseudopopulation(pop, "A", np.random.default_rng(0))
    assert list(out.labels) == [LABEL_WEB, LABEL_FTF, LABEL_NONE]


def test_rule_c_has_no_nonrespondents():
    rng = np.random.default_rng(1)
    pop = make_population(rng.normal(size=200), np.zeros(200), modes=rng.integers(0, 3, 200))
    out = build_pseudopopulation(pop, "C", rng)
    assert (out.labels != LABEL_NONE).all()
    assert ((pop.modes == MODE_WEB) == (out.labels == LABEL_WEB)).all()


def test_rule_b_splits_mail_households_in_half():
    n = 10_000
    pop = make_population(np.ones(n), np.zeros(n), modes=np.full(n, MODE_MAIL))
    out = build_pseudopopulation(pop, "B", np.random.default_rng(2))
    n_ftf = int((out.labels == LABEL_FTF).sum())
    # 4 sd of Binomial(10000, .5); the exact-half split sits at the center
    assert abs(n_ftf - 5000) <= 4 * math.sqrt(n * 0.25)
    assert int((out.labels == LABEL_NONE).sum()) == n - n_ftf


def test_rule_d_mail_becomes_web():
    rng = np.random.default_rng(3)
    modes = rng.integers(0, 3, 5000)
    pop = make_population(rng.normal(size=5000), np.zeros(5000), modes=modes)
    out = build_pseudopopulation(pop, "D", rng)
    assert ((modes == MODE_MAIL) == (out.labels == LABEL_WEB)).all()
    pool = modes != MODE_MAIL
    n_f = int((out.labels[pool] == LABEL_FTF).sum())
    assert abs(n_f - pool.sum() / 2) <= 2  # exact halves per mode group


def test_rules_preserve_households_and_outcomes():
    rng = np.random.default_rng(4)
    pop = make_population(rng.normal(size=(300, 2)), rng.integers(0, 9, 300),
                          modes=rng.integers(0, 3, 300))
    for rule in "ABCD":
        out = build_pseudopopulation(pop, rule, np.random.default_rng(5))
        assert out.n_households == pop.n_households
        np.testing.assert_array_equal(out.y, pop.y)
        np.testing.assert_array_equal(out.ids, pop.ids)


def test_rule_requires_modes():
    pop = make_population([1.0, 2.0], [0, 0])
    with pytest.raises(IntegrityError):
        build_pseudopopulation(pop, "A", np.random.default_rng(0))


@pytest.mark.parametrize("rule", ["B", "D"])
def test_random_half_rules_equalize_ftf_and_nonresp_means(rule):
    # The split is an exact stratified half-split, so
    # var(mean_F - mean_N) = (4/n^2) * sum_g n_g * S_g^2 over the split groups.
    rng = np.random.default_rng(6)
    n = 12_000
    modes = rng.integers(0, 3, n)
    y = rng.normal(loc=modes.astype(float), scale=1.0, size=n)
    pop = make_population(y, np.zeros(n), modes=modes)
    out = build_pseudopopulation(pop, rule, rng)
    split_modes = (MODE_MAIL, MODE_FTF) if rule == "B" else (MODE_WEB, MODE_FTF)
    pool = np.isin(modes, split_modes)
    var = 4.0 / pool.sum() ** 2 * sum(
        (modes == m).sum() * y[modes == m].var(ddof=1) for m in split_modes
    )
    diff = y[out.labels == LABEL_FTF].mean() - y[out.labels == LABEL_NONE].mean()
    assert abs(diff) <= 4 * math.sqrt(var)


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

def test_zero_icc_spec_yields_zero_icc():
    spec = SyntheticPopSpec(
        n_psus=400, households_min=60, households_max=80,
        share_web=0.5, share_mail=0.3,
        variables=(VariableSpec("v1", 0.6, 0.6, 0.6),),
        icc_outcome=0.0, seed=11,
    )
    pop = generate_synthetic(spec)
    assert abs(estimate_icc(pop.y[:, 0], pop.psu_ids)) <= 0.01


def test_icc_calibration_at_scale():
    spec = SyntheticPopSpec(
        n_psus=1200, households_min=90, households_max=110,
        share_web=0.48, share_mail=0.26,
        variables=(VariableSpec("v1", 0.88, 0.82, 0.77),
                   VariableSpec("inc", 0.75, 0.62, 0.52, kind="continuous", sd=0.55)),
        icc_outcome=0.02, icc_response=0.02, seed=12,
    )
    pop = generate_synthetic(spec)
    assert pop.n_households >= 100_000
    for j in range(pop.n_variables):
        assert abs(estimate_icc(pop.y[:, j], pop.psu_ids) - 0.02) <= 0.01


def test_mode_shares_hit_targets(small_synthetic):
    pop = small_synthetic
    n = pop.n_households
    m_bar = n / SMALL_SPEC.n_psus
    for target, code in ((0.48, MODE_WEB), (0.26, MODE_MAIL), (0.26, MODE_FTF)):
        share = (pop.modes == code).mean()
        # cluster-inflated binomial sd
        sd = math.sqrt(target * (1 - target) / n * (1 + SMALL_SPEC.icc_response * (m_bar - 1)))
        assert abs(share - target) <= 2 * sd, (code, share)


def test_mode_means_hit_targets(small_synthetic):
    pop = small_synthetic
    m_bar = pop.n_households / SMALL_SPEC.n_psus
    deff = 1 + SMALL_SPEC.icc_outcome * (m_bar - 1)
    for j, v in enumerate(SMALL_SPEC.variables):
        for code, target in enumerate(v.mode_means()):
            got = pop.y[pop.modes == code, j]
            sd = math.sqrt(got.var(ddof=1) / len(got) * deff)
            assert abs(got.mean() - target) <= 2 * sd, (v.name, code)


def test_equal_mail_ftf_means_balance():
    spec = SyntheticPopSpec(
        n_psus=300, households_min=90, households_max=110,
        share_web=0.5, share_mail=0.25,
        variables=(VariableSpec("v1", 0.7, 0.5, 0.5),),
        icc_outcome=0.01, seed=13,
    )
    pop = generate_synthetic(spec)
    m_bar = pop.n_households / spec.n_psus
    deff = 1 + spec.icc_outcome * (m_bar - 1)
    a = pop.y[pop.modes == MODE_MAIL, 0]
    b = pop.y[pop.modes == MODE_FTF, 0]
    sd = math.sqrt((a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b)) * deff)
    assert abs(a.mean() - b.mean()) <= 2 * sd


def test_infeasible_specs_rejected():
    bad_mean = SyntheticPopSpec(
        n_psus=10, households_min=5, households_max=6,
        share_web=0.5, share_mail=0.3,
        variables=(VariableSpec("v1", 1.2, 0.5, 0.5),), seed=0,
    )
    with pytest.raises(ValidationError):
        bad_mean.validate()
    bad_shares = SyntheticPopSpec(
        n_psus=10, households_min=5, households_max=6,
        share_web=0.8, share_mail=0.3,
        variables=(VariableSpec("v1", 0.5, 0.5, 0.5),), seed=0,
    )
    with pytest.raises(ValidationError):
        bad_shares.validate()


# ---------------------------------------------------------------------------
# Stochastic labels
# ---------------------------------------------------------------------------

def test_certain_web_propensity():
    pop = make_population(np.ones(50), np.zeros(50), modes=np.zeros(50, dtype=int))
    pop = attach_propensities(pop, {"WEB": (1.0, 0.0), "MAIL": (1.0, 0.0), "FTF": (1.0, 0.0)})
    out = draw_stochastic_labels(pop, np.random.default_rng(0))
    assert (out.labels == LABEL_WEB).all()


def test_certain_ftf_propensity():
    pop = make_population(np.ones(50), np.zeros(50), modes=np.zeros(50, dtype=int))
    pop = attach_propensities(pop, {"WEB": (0.0, 1.0), "MAIL": (0.0, 1.0), "FTF": (0.0, 1.0)})
    out = draw_stochastic_labels(pop, np.random.default_rng(0))
    assert (out.labels == LABEL_FTF).all()


def test_stochastic_shares_match_propensities():
    n = 100_000
    pop = make_population(np.ones(n), np.zeros(n), modes=np.zeros(n, dtype=int))
    pop = attach_propensities(pop, {"WEB": (0.3, 0.35), "MAIL": (0.3, 0.35), "FTF": (0.3, 0.35)})
    out = draw_stochastic_labels(pop, np.random.default_rng(1))
    for target, label in ((0.3, LABEL_WEB), (0.35, LABEL_FTF)):
        share = (out.labels == label).mean()
        assert abs(share - target) <= 4 * math.sqrt(target * (1 - target) / n)


def test_invalid_propensities_rejected():
    pop = make_population(np.ones(3), np.zeros(3), modes=np.zeros(3, dtype=int))
    with pytest.raises(ValidationError):
        attach_propensities(pop, {"WEB": (0.0, 0.0), "MAIL": (0.5, 0.2), "FTF": (0.5, 0.2)})
    with pytest.raises(IntegrityError):
        draw_stochastic_labels(pop, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------

def test_summary_full_response_identity():
    rng = np.random.default_rng(7)
    labels = rng.integers(0, 2, 500)  # web or ftf only
    pop = make_population(rng.normal(size=(500, 2)), np.zeros(500), labels=labels)
    s = summarize(pop)
    np.testing.assert_allclose(
        s.total,
        s.n_households * (s.gamma_w * s.mean_w + s.gamma_f * s.mean_f),
        rtol=1e-9,
    )


def test_summary_all_web_unit_outcome():
    pop = make_population(np.ones(40), np.zeros(40), labels=np.zeros(40, dtype=int))
    s = summarize(pop)
    assert s.gamma_w == 1.0 and s.gamma_f == 0.0
    assert s.total[0] == pytest.approx(40.0)


def test_summary_hand_computed():
    y = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    labels = [LABEL_WEB, LABEL_WEB, LABEL_FTF, LABEL_FTF, LABEL_NONE, LABEL_NONE]
    s = summarize(make_population(y, [0] * 6, labels=labels))
    assert s.total[0] == pytest.approx(21.0)
    assert s.mean_w[0] == pytest.approx(1.5)
    assert s.mean_f[0] == pytest.approx(3.5)
    assert s.mean_n[0] == pytest.approx(5.5)
    assert s.gamma_w == pytest.approx(2 / 6) and s.gamma_f == pytest.approx(2 / 6)


def test_summary_requires_labels():
    pop = make_population([1.0], [0], modes=[0])
    with pytest.raises(IntegrityError):
        summarize(pop)


def test_household_row_view():
    pop = make_population([[1.0, 2.0]], [7], modes=[MODE_MAIL], labels=[LABEL_FTF])
    pop = attach_propensities(pop, {"WEB": (0.5, 0.25), "MAIL": (0.5, 0.25),
                                    "FTF": (0.5, 0.25)})
    hh = pop.household(0)
    assert hh.psu_id == 7 and hh.source_mode == "MAIL" and hh.label == "F"
    assert hh.propensity == (0.5, 0.25)
    assert hh.phi_f_given_wc == pytest.approx(0.5)
    certain = attach_propensities(
        make_population([[0.0, 0.0]], [0], modes=[0]),
        {"WEB": (1.0, 0.0), "MAIL": (1.0, 0.0), "FTF": (1.0, 0.0)})
    assert certain.household(0).phi_f_given_wc is None


@settings(max_examples=40, deadline=None)
@given(
    labels=st.lists(st.integers(0, 2), min_size=3, max_size=60),
    seed=st.integers(0, 2**16),
)
def test_population_identity_property(labels, seed):
    # total == N * [gw*mw + gf*mf + (1-gw-gf)*mn] with empty-category terms dropped
    rng = np.random.default_rng(seed)
    y = rng.normal(size=(len(labels), 2))
    s = summarize(make_population(y, np.zeros(len(labels)), labels=labels))
    parts = np.zeros(2)
    for share, mean in ((s.gamma_w, s.mean_w), (s.gamma_f, s.mean_f),
                        (1 - s.gamma_w - s.gamma_f, s.mean_n)):
        if not np.isnan(mean).any():
            parts = parts + share * mean
    np.testing.assert_allclose(s.total, s.n_households * parts, rtol=1e-9, atol=1e-9)
