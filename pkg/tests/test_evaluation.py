import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latlapmed.dataset import Dataset
from latlapmed.evaluation import SweepError, auc_pr, confusion, pr_sweep, write_sweep


def test_confusion_examples():
    t = np.array([1, -1, 1, -1])
    m = confusion(t, t)
    assert m.precision == m.recall == 1.0 and m.fnr == 0.0
    pred = np.array([1] * 3 + [1] + [-1] + [-1] * 95)
    truth = np.array([1] * 3 + [-1] + [1] + [-1] * 95)
    m = confusion(pred, truth)
    assert (m.tp, m.fp, m.fn, m.tn) == (3, 1, 1, 95)
    assert m.precision == 0.75 and m.recall == 0.75
    assert m.fpr == pytest.approx(1 / 96)
    m = confusion(-np.ones(4), t)
    assert m.recall == 0.0 and m.precision == 0.0
    with pytest.raises(ValueError):
        confusion([1, -1], [1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([-1, 1]), st.sampled_from([-1, 1])), min_size=1))
def test_counts_sum_to_n(pairs):
    p, t = map(np.array, zip(*pairs))
    m = confusion(p, t)
    assert m.tp + m.fp + m.tn + m.fn == len(pairs)


def test_auc_examples():
    assert auc_pr([(1.0, 1.0)]) == 1.0
    assert auc_pr([(0.4, 0.7)]) == pytest.approx(0.28)
    pts = [(0.2, 0.9), (0.5, 0.8), (0.9, 0.5)]
    hand = 0.2 * 0.9 + 0.3 * (0.9 + 0.8) / 2 + 0.4 * (0.8 + 0.5) / 2
    assert auc_pr(pts) == pytest.approx(hand)
    assert auc_pr([]) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=10), st.randoms())
def test_auc_order_invariant_and_bounded(pts, rnd):
    shuffled = list(pts)
    rnd.shuffle(shuffled)
    assert auc_pr(shuffled) == pytest.approx(auc_pr(pts))
    assert 0.0 <= auc_pr(pts) <= 1.0


def _toy():
    truth = np.array([1, 1, -1, -1, -1, -1])
    return Dataset(np.zeros((6, 1)), np.zeros(6), truth_anomaly=truth > 0, truth_utility=truth)


def perfect(d, phi, seed):
    return d.truth_utility.copy()


def test_perfect_classifier_auc_one():
    assert pr_sweep(perfect, _toy(), [0.1, 0.2, 0.3], trials=2).auc == 1.0


def noisy(d, phi, seed):
    rng = np.random.default_rng(seed + int(phi * 100))
    return np.where(rng.random(d.n) < 0.5, 1, -1)


def test_pointwise_trial_averaging():
    c = pr_sweep(noisy, _toy(), [0.1, 0.2], trials=3, seed=7)
    for k, phi in enumerate(c.phis):
        recs = [m for f, _, m in c.records if f == phi]
        assert c.recall[k] == pytest.approx(np.mean([m.recall for m in recs]))
        assert c.precision[k] == pytest.approx(np.mean([m.precision for m in recs]))
    one = pr_sweep(noisy, _toy(), [0.1, 0.2], trials=1, seed=7)
    single = [noisy(_toy(), f, 7) for f in (0.1, 0.2)]
    assert one.recall == tuple(confusion(p, _toy().truth_utility).recall for p in single)


def test_workers_do_not_change_results():
    a = pr_sweep(noisy, _toy(), [0.1, 0.2], trials=4, workers=1)
    b = pr_sweep(noisy, _toy(), [0.1, 0.2], trials=4, workers=2)
    assert a == b


def broken(d, phi, seed):
    if phi > 0.15:
        raise RuntimeError("boom")
    return d.truth_utility


def test_failure_names_phi_and_trial():
    with pytest.raises(SweepError) as err:
        pr_sweep(broken, _toy(), [0.1, 0.2], trials=1)
    assert err.value.phi == 0.2 and err.value.trial == 0


def test_sweep_validation():
    with pytest.raises(ValueError):
        pr_sweep(perfect, _toy(), [])
    with pytest.raises(ValueError):
        pr_sweep(perfect, Dataset(np.zeros((2, 1)), [0, 0]), [0.1])


def test_write_sweep(tmp_path):
    c = pr_sweep(noisy, _toy(), [0.1, 0.2], trials=2)
    write_sweep(c, "toy", tmp_path)
    lines = (tmp_path / "sweep_toy.csv").read_text().splitlines()
    assert len(lines) == 1 + 4 + 2 and lines[-1].split(",")[2] == "mean"
    import json
    js = json.loads((tmp_path / "sweep_toy.json").read_text())
    assert js["method"] == "toy" and js["auc"] == c.auc and len(js["per_phi"]) == 2
