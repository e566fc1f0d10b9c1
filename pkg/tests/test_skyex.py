import itertools

import numpy as np
import pytest

from quadsky import skyex
from quadsky.core import CandidatePair, QuadSkyError, SimilarityVector
from quadsky.skyex import (DistanceProfile, compute_metrics, gaussian_smooth, level_distance_sums, metric_series,
                           metrics_from_counts, mu_profile, skyex_d, skyex_f, skyex_fes)
from quadsky.skyrank import partition_from_levels, peel

DIMS = ("name", "address", "semantic")


def _mk(vectors, truth=None, levels=None):
    pairs = [CandidatePair(("a", f"{i:05d}"), ("b", f"{i:05d}"), SimilarityVector(DIMS[:len(v)], tuple(map(float, v))),
                           truth=None if truth is None else bool(truth[i]))
             for i, v in enumerate(vectors)]
    return partition_from_levels(pairs, np.asarray(levels)) if levels is not None else peel(pairs)


def _layered(sizes, tp):
    """Partition whose level k holds sizes[k] pairs, tp[k] of them true."""
    vecs, truth, lv = [], [], []
    step = 0.9 / len(sizes)
    for k, (n, t) in enumerate(zip(sizes, tp)):
        base = 1.0 - step * k
        for i in range(n):
            # points on an anti-diagonal are mutually incomparable
            vecs.append((base - 0.001 * i, base - step / 2 + 0.001 * i))
            truth.append(i < t)
            lv.append(k + 1)
    return _mk(vecs, truth, lv)


def _brute_best(part, missed=0):
    truth = part.truth()
    best = None
    for k in range(1, part.K + 1):
        sel = part.level_of <= k
        tp = int((sel & truth).sum())
        f = metrics_from_counts(tp, int(sel.sum()) - tp, int(truth.sum()) + missed - tp)[2]
        if best is None or f > best[1]:
            best = (k, f)
    return best


# ---- metrics --------------------------------------------------------------

def test_compute_metrics_examples():
    pairs = _mk([(1, 1)] * 12, truth=[1] * 6 + [0] * 2 + [1] * 4, levels=[1] * 12).pairs
    p, r, f = compute_metrics(pairs[:8], pairs[8:])
    assert (p, r) == (0.75, 0.6) and f == pytest.approx(2 / 3)
    assert compute_metrics([], pairs[:8]) == (0.0, 0.0, 0.0)
    assert compute_metrics(pairs[:6], pairs[8:8]) == (1.0, 1.0, 1.0)


def test_f1_agrees_with_harmonic_mean():
    for tp, fp, fn in itertools.product(range(1, 6), range(4), range(4)):
        p, r, f = metrics_from_counts(tp, fp, fn)
        assert f == pytest.approx(2 * p * r / (p + r))


def test_missed_lowers_recall():
    part = _layered([2, 2], [2, 0])
    assert compute_metrics(part.levels[0], part.levels[1], missed=2)[1] == 0.5


# ---- SkyEx-F / FES -------------------------------------------------------

def test_skyex_f_perfect_separation():
    part = _layered([3, 4, 5], [3, 0, 0])
    res = skyex_f(part)
    assert res.cutoff_k == 1 and res.metric_series[0][3] == 1.0


def test_worked_example_8_1_0():
    # 10 positives overall, one of them never became a candidate pair
    part = _layered([8, 4, 8], [8, 1, 0])
    res = skyex_f(part, missed=1)
    f1 = [round(f, 4) for _, _, _, f in res.metric_series]
    assert f1 == [0.8889, 0.8182, 0.6]
    assert res.cutoff_k == 1
    fes = skyex_fes(part, missed=1)
    assert (fes.cutoff_k, fes.explored_levels, fes.total_levels) == (1, 2, 3)


def test_fes_on_raw_pairs_peels_lazily():
    part = _layered([8, 4, 8], [8, 1, 0])
    raw = [p.with_(skyline_level=None) for p in part.pairs]
    fes = skyex_fes(raw, missed=1)
    assert fes.cutoff_k == 1 and fes.explored_levels == 2 and fes.total_levels is None
    # pairs in unexplored levels carry no level
    assert sum(p.skyline_level is None for p in fes.negatives) == 8


def test_fes_single_level_and_rise_then_fall():
    one = _layered([3], [2])
    assert skyex_fes(one).cutoff_k == 1
    part = _layered([4, 4, 4, 4, 4], [1, 3, 3, 0, 0])
    f, fes = skyex_f(part), skyex_fes(part)
    assert fes.cutoff_k == f.cutoff_k == 3
    assert fes.explored_levels == 4


def test_fes_plateau_keeps_first_level_of_the_run():
    # F1 series 0.8, 0.8, 0.667: no strict drop until level 3
    part = _layered([4, 5, 3], [4, 2, 0])
    series = [round(f, 4) for *_, f in metric_series(part.level_of, part.truth())]
    assert series == [0.8, 0.8, 0.6667]
    fes = skyex_fes(part)
    assert fes.cutoff_k == skyex_f(part).cutoff_k == 1
    assert fes.explored_levels == 3


def test_degenerate_labels():
    part = _layered([2, 2], [2, 2])
    for fn in (skyex_f, skyex_fes):
        with pytest.raises(QuadSkyError, match="degenerate labels"):
            fn(part)


@pytest.mark.parametrize("seed", range(15))
def test_f_is_exhaustive_argmax_and_fes_never_beats_it(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(2, 12))
    sizes = rng.integers(1, 8, K)
    tp = [int(rng.integers(0, s + 1)) for s in sizes]
    if sum(tp) in (0, sum(sizes)):
        tp[0] = 1 if sum(tp) == 0 else 0
    part = _layered(sizes, tp)
    missed = int(rng.integers(0, 3))
    f = skyex_f(part, missed=missed)
    k, best = _brute_best(part, missed)
    assert f.cutoff_k == k
    fes = skyex_fes(part, missed=missed)
    assert fes.cutoff_k <= f.cutoff_k and fes.explored_levels <= part.K
    assert fes.metric_series[fes.cutoff_k - 1][3] <= best
    # recall never decreases in k
    rec = [r for _, _, r, _ in f.metric_series]
    assert all(a <= b for a, b in zip(rec, rec[1:]))
    prec = [p for _, p, _, _ in f.metric_series]
    if all(a >= b for a, b in zip(prec, prec[1:])):
        assert fes.cutoff_k == f.cutoff_k


# ---- SkyEx-D --------------------------------------------------------------

def _brute_mu(part, literal=False):
    v, lv = part.vectors(), part.level_of
    out = []
    for k in range(1, part.K):
        P, N = v[lv <= k], v[lv > k]
        total = sum(float(np.linalg.norm(p - q)) for p in P for q in N)
        out.append(total / len(P) if literal else total / (len(P) * len(N)))
    return np.array(out)


def test_mu_profile_matches_brute_force():
    rng = np.random.default_rng(0)
    part = _mk(np.round(rng.random((120, 3)), 1))
    prof = mu_profile(part)
    np.testing.assert_allclose(prof.mu, _brute_mu(part), rtol=1e-10)
    np.testing.assert_allclose(mu_profile(part, mu_per_positive=True).mu, _brute_mu(part, True), rtol=1e-10)
    np.testing.assert_allclose(prof.derivative, np.diff(prof.mu))
    assert len(prof.smoothed) == len(prof.derivative) == part.K - 2


def test_mu_profile_k3_toy():
    part = _mk([(1, 1), (0.5, 0.5), (0, 0)])
    prof = mu_profile(part, window=1)
    # k=1: {(1,1)} vs {(.5,.5),(0,0)} -> (0.7071 + 1.4142) / 2
    # k=2: {(1,1),(.5,.5)} vs {(0,0)} -> (1.4142 + 0.7071) / 2
    r2 = np.sqrt(2)
    np.testing.assert_allclose(prof.mu, [1.5 * r2 / 2, 1.5 * r2 / 2])
    assert prof.derivative.tolist() == pytest.approx([0.0])


def test_manhattan_metric_and_chunking():
    rng = np.random.default_rng(1)
    part = _mk(np.round(rng.random((90, 3)), 1))
    v, lv = part.vectors(), part.level_of
    a = level_distance_sums(v, lv, "manhattan")
    b = level_distance_sums(v, lv, "manhattan", chunk_cells=7)
    np.testing.assert_allclose(a, b)
    d = np.abs(v[:, None] - v[None]).sum(axis=2)
    want = np.array([[d[np.ix_(lv == i, lv == j)].sum() for j in range(1, part.K + 1)]
                     for i in range(1, part.K + 1)])
    np.testing.assert_allclose(a, want)
    with pytest.raises(QuadSkyError):
        level_distance_sums(v, lv, "cosine")


def test_identical_vectors_give_zero_profile():
    part = _mk([(0.5, 0.5)] * 6, levels=[1, 1, 2, 2, 3, 3])
    assert mu_profile(part).mu.tolist() == [0.0, 0.0]


def test_too_few_levels():
    with pytest.raises(QuadSkyError, match="too few levels"):
        mu_profile(_mk([(1, 1), (0, 0)]))


def test_gaussian_smooth():
    x = np.array([0.0, 0, 1, 0, 0])
    s = gaussian_smooth(x, 5, 1.0)
    assert s.argmax() == 2 and s[1] == pytest.approx(s[3])
    np.testing.assert_allclose(gaussian_smooth(np.full(7, 3.0)), 3.0)
    assert gaussian_smooth(x, 1).tolist() == x.tolist()
    for bad in (0, 4):
        with pytest.raises(QuadSkyError):
            gaussian_smooth(x, bad)


def _fake_profile(smoothed):
    s = np.asarray(smoothed, float)
    return DistanceProfile(np.zeros(len(s) + 1), s, s, 5, 1.0)


def test_skyex_d_first_negative(monkeypatch):
    part = _mk([(1 - 0.1 * i, 1 - 0.1 * i) for i in range(6)])
    monkeypatch.setattr(skyex, "mu_profile", lambda *a, **k: _fake_profile([0.2, 0.1, -0.1, 0.3]))
    assert skyex_d(part).cutoff_k == 3


def test_skyex_d_fallback_warns(monkeypatch, caplog):
    part = _mk([(1 - 0.1 * i, 1 - 0.1 * i) for i in range(6)])
    monkeypatch.setattr(skyex, "mu_profile", lambda *a, **k: _fake_profile([0.2, 0.1, 0.0, 0.3]))
    with caplog.at_level("WARNING"):
        res = skyex_d(part)
    assert res.cutoff_k == part.K - 1 and res.warnings
    assert "falling back" in caplog.text


def _two_clusters(seed, n_pos=40, n_neg=40):
    rng = np.random.default_rng(seed)
    pos = np.clip(rng.normal(0.9, 0.04, (n_pos, 3)), 0, 1)
    neg = np.clip(rng.normal(0.2, 0.04, (n_neg, 3)), 0, 1)
    v = np.vstack([pos, neg])
    return _mk(v, truth=[1] * n_pos + [0] * n_neg)


@pytest.mark.parametrize("seed", range(5))
def test_two_cluster_boundary(seed):
    part = _two_clusters(seed)
    truth = part.truth()
    boundary = int(part.level_of[truth].max())
    assert part.level_of[~truth].min() > boundary  # clusters do not interleave
    mu = mu_profile(part).mu
    assert abs(int(mu.argmax()) + 1 - boundary) <= 1
    assert abs(skyex_d(part).cutoff_k - boundary) <= 2


def test_skyex_d_ignores_labels():
    part = _two_clusters(3)
    a = skyex_d(part)
    rng = np.random.default_rng(0)
    flipped = partition_from_levels([p.with_(truth=bool(t)) for p, t in
                                     zip(part.pairs, rng.permutation(part.truth()))], part.level_of)
    b = skyex_d(flipped)
    assert a.cutoff_k == b.cutoff_k
    assert a.profile.smoothed.tobytes() == b.profile.smoothed.tobytes()
    assert [p.key for p in a.positives] == [p.key for p in b.positives]


def test_cumulative_precision_alone_does_not_make_f1_single_peaked():
    # 20 true pairs; cumulative precision 1, .55, .533, .286 never rises,
    # yet F1 goes .667, .55, .64, .444: a drop followed by a rise
    part = _layered([10, 10, 10, 40], [10, 1, 5, 4])
    series = skyex_f(part).metric_series
    prec = [p for _, p, _, _ in series]
    f1 = [round(f, 3) for *_, f in series]
    assert all(a >= b for a, b in zip(prec, prec[1:]))
    assert f1 == [0.667, 0.55, 0.64, 0.444]
    # early stopping still returns the first peak, which here is the global one
    assert skyex_fes(part).cutoff_k == skyex_f(part).cutoff_k == 1
    assert skyex_fes(part).explored_levels == 2


def test_non_increasing_level_precision_gives_single_peak():
    rng = np.random.default_rng(9)
    for _ in range(40):
        K = int(rng.integers(3, 15))
        sizes = rng.integers(1, 30, K)
        rates = np.sort(rng.random(K))[::-1]
        tp = np.minimum(sizes, np.floor(rates * sizes).astype(int))
        order = np.argsort(-(tp / sizes), kind="stable")
        sizes, tp = sizes[order], tp[order]
        if tp.sum() in (0, sizes.sum()):
            continue
        f1 = [f for *_, f in skyex_f(_layered(sizes, tp)).metric_series]
        peak = int(np.argmax(f1))
        assert all(a <= b + 1e-12 for a, b in zip(f1[:peak], f1[1:peak + 1]))
        assert all(a >= b - 1e-12 for a, b in zip(f1[peak:], f1[peak + 1:]))
