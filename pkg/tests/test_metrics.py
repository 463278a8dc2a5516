from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from padphys.metrics import (
    MEAN,
    TOTAL,
    MetricsError,
    VideoScore,
    classify_and_report,
    eer_threshold,
    pool_video,
    read_report_csv,
    roc_curve,
)

# Published results for six models (three baselines, each with a frozen-transfer
# counterpart): (BPCER, {row: (APCER, ACER)}) per model, and the model averages.
PUBLISHED_TABLES = {
    "baseline A": (41.44, {
        "MH": (42.01, 41.73), "L2TP": (34.36, 37.90), "PlM": (47.36, 44.40), "LM": (50.97, 46.20),
        "3CPM": (48.50, 44.97), "PrM": (62.32, 51.88), "VR": (49.84, 45.64), "Pr": (34.91, 38.18),
        "SM": (46.73, 44.09), "PR": (32.35, 36.90), "Pr3LM": (41.67, 41.55), "Total": (45.33, 43.38)}),
    "transfer A": (18.28, {
        "MH": (1.06, 9.67), "L2TP": (2.57, 10.42), "PlM": (3.50, 10.89), "LM": (9.69, 13.99),
        "3CPM": (2.28, 10.28), "PrM": (32.00, 25.14), "VR": (69.50, 43.89), "Pr": (7.19, 12.73),
        "SM": (4.17, 11.22), "PR": (41.18, 29.73), "Pr3LM": (6.19, 12.23), "Total": (10.94, 14.61)}),
    "baseline B": (39.60, {
        "MH": (41.67, 40.63), "L2TP": (29.24, 34.42), "PlM": (29.34, 34.47), "LM": (34.58, 37.09),
        "3CPM": (41.76, 40.68), "PrM": (56.63, 48.11), "VR": (48.89, 44.24), "Pr": (50.30, 44.95),
        "SM": (49.93, 44.76), "PR": (57.35, 48.47), "Pr3LM": (50.00, 44.80), "Total": (38.79, 39.19)}),
    "transfer B": (24.97, {
        "MH": (14.24, 19.60), "L2TP": (10.85, 17.91), "PlM": (7.32, 16.14), "LM": (39.71, 32.34),
        "3CPM": (9.70, 17.33), "PrM": (36.63, 30.80), "VR": (55.66, 40.31), "Pr": (11.98, 18.47),
        "SM": (7.50, 16.23), "PR": (13.97, 19.47), "Pr3LM": (29.90, 27.43), "Total": (22.01, 23.49)}),
    "baseline C": (42.45, {
        "MH": (45.49, 43.97), "L2TP": (13.54, 27.99), "PlM": (48.54, 45.50), "LM": (51.10, 46.77),
        "3CPM": (31.29, 36.87), "PrM": (37.05, 39.75), "VR": (38.41, 40.43), "Pr": (29.59, 36.02),
        "SM": (50.51, 46.48), "PR": (12.50, 27.47), "Pr3LM": (46.88, 44.66), "Total": (38.60, 40.52)}),
    "transfer C": (29.03, {
        "MH": (2.35, 15.69), "L2TP": (0.34, 14.69), "PlM": (4.81, 16.92), "LM": (15.94, 22.49),
        "3CPM": (1.56, 15.30), "PrM": (16.00, 22.52), "VR": (47.48, 38.26), "Pr": (1.80, 15.42),
        "SM": (3.33, 16.18), "PR": (8.09, 18.56), "Pr3LM": (0.00, 14.52), "Total": (10.71, 19.87)}),
}
SUMMARY = {  # BPCER, APCER, ACER
    "baseline A": (41.44, 45.33, 43.38), "baseline B": (39.60, 38.79, 39.19),
    "baseline C": (42.45, 38.60, 40.52), "transfer A": (18.28, 10.94, 14.61),
    "transfer B": (24.97, 22.01, 23.49), "transfer C": (29.03, 10.71, 19.87),
}


def vs(label, score, i=0):
    return VideoScore(f"{label}{i}", label, [score])


def make_set(bona, attacks):
    out = [vs("bonafide", s, i) for i, s in enumerate(bona)]
    for kind, scores in attacks.items():
        out += [vs(kind, s, i) for i, s in enumerate(scores)]
    return out


def random_set(rng, n_max=50):
    n = int(rng.integers(2, n_max + 1))
    labels = rng.choice(["bonafide", "Pr", "PlM", "VR"], size=n, p=[0.4, 0.2, 0.2, 0.2])
    labels[0], labels[1] = "bonafide", "Pr"
    # coarse scores produce plenty of ties
    scores = rng.integers(0, 12, size=n) / 11.0 if rng.random() < 0.5 else rng.random(n)
    return [VideoScore(f"c{i}", lab, [s]) for i, (lab, s) in enumerate(zip(labels, scores))]


# ---------------------------------------------------------------- oracles


def eer_oracle(scores):
    """Exhaustive sweep in exact rationals with the stated tie-break order."""
    bona = [v.pooled for v in scores if v.is_bonafide]
    att = [v.pooled for v in scores if not v.is_bonafide]
    u = sorted(set(bona + att))
    cands = [-np.inf] + [(u[i] + u[i + 1]) / 2.0 for i in range(len(u) - 1)] + [np.inf]
    best = None
    for tau in cands:
        fn = sum(s < tau for s in bona)
        fp = sum(s >= tau for s in att)
        fnr, fpr = Fraction(fn, len(bona)), Fraction(fp, len(att))
        key = (abs(fnr - fpr), fnr + fpr, tau)
        if best is None or key < best[0]:
            best = (key, tau, fn, fp)
    _, tau, fn, fp = best
    return tau, (fn / len(bona) + fp / len(att)) / 2.0


def roc_oracle(scores):
    bona = [v.pooled for v in scores if v.is_bonafide]
    att = [v.pooled for v in scores if not v.is_bonafide]
    thr = [np.inf] + sorted(set(bona + att), reverse=True)
    fpr = [sum(s >= t for s in att) / len(att) for t in thr]
    tpr = [sum(s >= t for s in bona) / len(bona) for t in thr]
    pairs = sum((b > a) * 2 + (b == a) for b in bona for a in att)
    return np.array(thr), np.array(fpr), np.array(tpr), pairs / (2 * len(bona) * len(att))


# ---------------------------------------------------------------- pooling


def test_pool_video_examples(rng):
    assert pool_video([0.2, 0.4, 0.6]) == pytest.approx(0.4, abs=1e-15)
    assert pool_video([0.73]) == 0.73
    s = rng.random(1000)
    naive = 0.0
    for x in s:
        naive += x
    assert abs(pool_video(s) - naive / 1000) < 1e-12
    with pytest.raises(MetricsError):
        pool_video([])


# ---------------------------------------------------------------- EER


def test_eer_separable():
    tau, eer = eer_threshold(make_set([0.9, 0.8], {"Pr": [0.1, 0.2]}))
    assert eer == 0.0 and tau == pytest.approx(0.5)


def test_eer_all_identical():
    _, eer = eer_threshold(make_set([0.4, 0.4, 0.4], {"Pr": [0.4, 0.4]}))
    assert eer == 0.5


def test_eer_single_class():
    with pytest.raises(MetricsError):
        eer_threshold(make_set([0.3, 0.4], {}))


def test_eer_matches_oracle_20_scores():
    rng = np.random.default_rng(20)
    scores = [VideoScore(f"c{i}", lab, [s]) for i, (lab, s) in
              enumerate(zip(["bonafide", "Pr"] * 10, rng.random(20)))]
    assert eer_threshold(scores) == eer_oracle(scores)


def test_eer_matches_oracle_100_sets():
    rng = np.random.default_rng(4)
    for _ in range(100):
        s = random_set(rng)
        assert eer_threshold(s) == eer_oracle(s)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), kind=st.sampled_from(["cube", "logit", "affine"]))
def test_eer_invariant_under_increasing_transform(seed, kind):
    s = random_set(np.random.default_rng(seed), 30)
    f = {"cube": lambda x: x ** 3, "logit": lambda x: np.log((x + 0.01) / (1.01 - x)),
         "affine": lambda x: 3.0 * x - 1.0}[kind]
    t = [VideoScore(v.clip_id, v.label, [f(v.pooled)]) for v in s]
    tau_s, eer_s = eer_threshold(s)
    tau_t, eer_t = eer_threshold(t)
    assert eer_s == eer_t
    # same induced classification of every video
    assert [v.pooled >= tau_s for v in s] == [v.pooled >= tau_t for v in t]


# ---------------------------------------------------------------- report


def test_published_total_row_example():
    apcer, bpcer = 0.1094, 0.1828
    assert round(100 * (apcer + bpcer) / 2, 2) == 14.61


def test_perfect_classifier_report():
    r = classify_and_report(make_set([0.9, 0.8], {"Pr": [0.1], "VR": [0.2]}), 0.5)
    assert all(row.apcer == row.bpcer == row.acer == 0 for row in r.rows)


def test_hand_counted_report():
    scores = make_set([0.9, 0.8, 0.7, 0.2], {"Pr": [0.6, 0.7, 0.95, 0.1, 0.3, 0.4]})
    total = classify_and_report(scores, 0.5).total
    assert (total.bpcer, total.apcer, total.acer) == (0.25, 0.5, 0.375)
    assert "25.00,37.50" in classify_and_report(scores, 0.5).to_csv()


def test_per_attack_rows_pair_with_global_bpcer():
    scores = make_set([0.9, 0.3], {"Pr": [0.1, 0.2], "VR": [0.8, 0.6]})
    r = classify_and_report(scores, 0.5)
    assert [row.name for row in r.rows] == ["Pr", "VR", TOTAL]
    assert r.row("Pr").acer == 0.25 and r.row("VR").acer == 0.75
    assert r.total.apcer == 0.5


def test_report_rejects_bad_input():
    with pytest.raises(MetricsError):
        classify_and_report(make_set([0.9], {"Pr": [0.1]}), float("nan"))
    with pytest.raises(MetricsError):
        classify_and_report(make_set([], {"Pr": [0.1]}), 0.5)


def test_acer_identity_every_row_random():
    rng = np.random.default_rng(9)
    for _ in range(50):
        s = random_set(rng)
        for row in classify_and_report(s, float(rng.random()), with_roc=False).rows:
            assert row.acer == (row.apcer + row.bpcer) / 2


def test_threshold_monotonicity():
    rng = np.random.default_rng(5)
    s = random_set(rng, 50)
    prev = None
    for tau in np.linspace(-0.1, 1.1, 60):
        t = classify_and_report(s, float(tau), with_roc=False).total
        if prev is not None:
            assert t.bpcer >= prev.bpcer and t.apcer <= prev.apcer
        prev = t


@pytest.mark.parametrize("model", list(PUBLISHED_TABLES))
def test_published_total_rows_satisfy_acer_identity(model):
    bpcer, rows = PUBLISHED_TABLES[model]
    apcer, acer = rows["Total"]
    assert abs(acer - (apcer + bpcer) / 2) <= 0.01


@pytest.mark.parametrize("model", list(PUBLISHED_TABLES))
def test_published_per_attack_rows_pair_with_model_bpcer(model):
    bpcer, rows = PUBLISHED_TABLES[model]
    for name, (apcer, acer) in rows.items():
        assert abs(acer - (apcer + bpcer) / 2) <= 0.01, name


def test_published_summary_table():
    for model, (bpcer, apcer, acer) in SUMMARY.items():
        assert abs(acer - (apcer + bpcer) / 2) <= 0.01
        assert (apcer, acer) == PUBLISHED_TABLES[model][1]["Total"]
        assert bpcer == PUBLISHED_TABLES[model][0]


def test_published_improvement_arithmetic():
    drop = lambda base, new: SUMMARY[base][2] - SUMMARY[new][2]
    d1 = drop("baseline A", "transfer A")
    d2 = drop("baseline B", "transfer B")
    d3 = drop("baseline C", "transfer C")
    assert round(d1, 2) == 28.77
    assert round(d2, 2) == 15.70
    assert round(d3, 2) == 20.65
    assert abs((d1 + d2 + d3) / 3 - 21.70) <= 0.01


# ---------------------------------------------------------------- ROC


def test_roc_perfect():
    c = roc_curve(make_set([0.9, 0.8], {"Pr": [0.1, 0.2]}))
    assert c.auc == 1.0
    assert any(f == 0.0 and t == 1.0 for f, t in zip(c.fpr, c.tpr))


def test_roc_constant_scores():
    assert roc_curve(make_set([0.5] * 3, {"Pr": [0.5] * 4})).auc == 0.5


def test_roc_mann_whitney_30():
    rng = np.random.default_rng(30)
    s = [VideoScore(f"c{i}", lab, [x]) for i, (lab, x) in
         enumerate(zip(["bonafide"] * 12 + ["Pr"] * 18, rng.random(30)))]
    assert abs(roc_curve(s).auc - roc_oracle(s)[3]) < 1e-12


def test_roc_matches_oracle_100_sets():
    rng = np.random.default_rng(11)
    for _ in range(100):
        s = random_set(rng)
        c = roc_curve(s)
        thr, fpr, tpr, auc = roc_oracle(s)
        assert np.array_equal(c.thresholds, thr)
        assert np.array_equal(c.fpr, fpr) and np.array_equal(c.tpr, tpr)
        assert c.auc == auc


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_roc_is_monotone_step_curve(seed):
    c = roc_curve(random_set(np.random.default_rng(seed)))
    assert (c.fpr[0], c.tpr[0]) == (0.0, 0.0)
    assert (c.fpr[-1], c.tpr[-1]) == (1.0, 1.0)
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)
    assert 0.0 <= c.auc <= 1.0


def test_report_files():
    s = make_set([0.9, 0.7, 0.4], {"Pr": [0.1, 0.5], "PlM": [0.3], "VR": [0.8, 0.6]})
    r = classify_and_report(s, 0.5)
    back = read_report_csv(r.to_csv())
    assert [x.name for x in back] == [x.name for x in r.rows]
    assert sorted(x.name for x in r.attack_rows) == ["PlM", "Pr", "VR"]
    for a, b in zip(r.rows, back):
        assert abs(a.acer - b.acer) < 5e-5
    svg = r.roc_svg()
    assert svg.count("<polyline") == 4
    assert f'data-curve="{MEAN}"' in svg and f'data-curve="{TOTAL}"' not in svg
    roc_lines = r.roc_csv().splitlines()
    assert roc_lines[0] == "curve,fpr,tpr,threshold"
    assert {ln.split(",")[0] for ln in roc_lines[1:]} == {"PlM", "Pr", "VR", TOTAL, MEAN}


def test_mean_roc_averages_attack_fprs():
    s = make_set([0.9, 0.4], {"Pr": [0.1, 0.5], "VR": [0.8, 0.95]})
    roc = classify_and_report(s, 0.5).roc
    m = roc[MEAN]
    assert (m.fpr[-1], m.tpr[-1]) == (1.0, 1.0)
    # at threshold 0.9: Pr accepts 0/2, VR accepts 1/2
    i = list(m.thresholds).index(0.9)
    assert m.fpr[i] == 0.25 and m.tpr[i] == 0.5
