import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import least_squares

from refcolor import trainer as tr
from refcolor.imagecore import LabImage, lab_to_rgb, write_png
from refcolor.matching import SIMPLEX_TOL, WeightVector, combine

COLORS = np.array([[30.0, -20.0], [-25.0, 35.0]])


def planted_pair(rng, informative=0, n_t=25, n_r=30):
    """PairData where only feature ``informative`` separates the two colour classes."""
    ct, cr = rng.integers(0, 2, n_t), rng.integers(0, 2, n_r)
    D = rng.uniform(0.2, 1.0, (4, n_t, n_r))
    D[informative] = np.abs(ct[:, None] - cr[None, :]) * 0.8 + rng.uniform(0, 0.1, (n_t, n_r))
    return tr.PairData(D, COLORS[cr], COLORS[ct])


def rosenbrock(x):
    return np.array([10.0 * (x[1] - x[0] ** 2), 1.0 - x[0]])


def exp_fit(x):
    t = np.linspace(0, 3, 25)
    y = 2.5 * np.exp(-1.3 * t) + 0.4
    return x[0] * np.exp(-x[1] * t) + x[2] - y


@pytest.mark.parametrize("fun,x0", [(rosenbrock, [-1.2, 1.0]), (exp_fit, [1.0, 0.5, 0.0]), (exp_fit, [4.0, 3.0, 1.0])])
def test_lm_reaches_the_scipy_minimiser(fun, x0):
    ours = tr.levenberg_marquardt(fun, x0, max_iter=500, rel_tol=1e-14)
    ref = least_squares(fun, x0, method="lm", xtol=1e-14, ftol=1e-14)
    assert ours.converged
    assert np.allclose(ours.x, ref.x, atol=1e-5)
    assert ours.cost <= 2 * ref.cost + 1e-12


def test_lm_cost_never_increases():
    costs = []

    def f(x):
        r = exp_fit(x)
        costs.append(float(r @ r))
        return r

    res = tr.levenberg_marquardt(f, [4.0, 3.0, 1.0])
    assert res.cost <= costs[0]


@given(st.integers(0, 1000))
def test_soft_error_approaches_hard_error_as_tau_falls(seed):
    rng = np.random.default_rng(seed)
    pd = planted_pair(rng)
    W = WeightVector(tuple(rng.dirichlet(np.ones(4))))
    G = np.sort(combine(W, pd.D), axis=1)
    # once tau is far below the smallest best-vs-runner-up gap the softmin is the argmin
    tau = (G[:, 1] - G[:, 0]).min() / 60.0
    assert abs(tr.soft_error(pd, W, tau) - tr.hard_error(pd, W)) < 1e-9 * max(1.0, tr.hard_error(pd, W))


def test_residuals_square_to_the_soft_error():
    rng = np.random.default_rng(0)
    data = [planted_pair(rng), planted_pair(rng)]
    z = np.log([0.1, 0.2, 0.3, 0.4])
    r = tr._residuals(z, data, 0.05)
    soft = sum(tr.soft_error(pd, tr.softmax(z), 0.05) for pd in data)
    assert abs(r @ r - soft) < 1e-4


@given(st.lists(st.floats(-30, 30), min_size=4, max_size=4))
def test_softmax_lies_on_the_simplex(z):
    w = tr.softmax(np.array(z))
    assert np.all(w >= 0) and abs(w.sum() - 1) < 1e-12


@settings(max_examples=6)
@given(st.integers(0, 1000), st.integers(0, 3))
def test_training_finds_the_planted_feature(seed, informative):
    rng = np.random.default_rng(seed)
    data = [planted_pair(rng, informative) for _ in range(3)]
    W, reports = tr.train_weights(data, tr.TrainConfig(n_starts=4, seed=seed))
    assert abs(sum(W.w) - 1) <= SIMPLEX_TOL and min(W.w) >= 0
    assert np.argmax(W.w) == informative
    hard = sum(tr.hard_error(pd, W) for pd in data)
    assert hard == 0.0
    # the chosen start is never worse than any other start or any start's initial weights
    for r in reports:
        assert hard <= r.hard
        assert hard <= sum(tr.hard_error(pd, np.array(r.init)) for pd in data)


def test_training_is_reproducible_for_a_seed():
    rng = np.random.default_rng(5)
    data = [planted_pair(rng, 2) for _ in range(2)]
    cfg = tr.TrainConfig(n_starts=3, seed=11)
    assert tr.train_weights(data, cfg)[0] == tr.train_weights(data, cfg)[0]
    with pytest.raises(ValueError):
        tr.train_weights([], cfg)


def _lab(seed, h=30, w=30):
    rng = np.random.default_rng(seed)
    L = np.clip(50 + 20 * rng.standard_normal((h, w)), 0, 100)
    a = np.where(L > 50, 20.0, -20.0)
    return LabImage(L, a, -a)


def test_model_round_trip_and_rejection(tmp_path):
    m = tr.train_model([tr.TrainingPair.from_images(_lab(0), _lab(1))], tr.TrainConfig(n_starts=2))
    assert m.count == 1 and m.sample_counts == (1,)
    p = tmp_path / "m.json"
    tr.save_model(m, p)
    back = tr.load_model(p)
    assert back == m and back.weights_for(_lab(2).gray())[0] == 0
    d = json.loads(p.read_text())
    for mutate in [
        lambda d: d.update(version=99),
        lambda d: d["clusters"][0].update(weights=[0.5, 0.5, 0.5, 0.5]),
        lambda d: d["clusters"][0].update(center=[1, 2]),
        lambda d: d.pop("glcm"),
        lambda d: d["feature_norm"].update(surf_dim=64),
    ]:
        bad = json.loads(json.dumps(d))
        mutate(bad)
        p.write_text(json.dumps(bad))
        with pytest.raises(tr.ModelFormatError):
            tr.load_model(p)
    p.write_text("{not json")
    with pytest.raises(tr.ModelFormatError):
        tr.load_model(p)


def test_manifest_parsing_and_bad_pairs(tmp_path):
    write_png(lab_to_rgb(_lab(0)), tmp_path / "a.png")
    write_png(lab_to_rgb(_lab(1)), tmp_path / "b.png")
    (tmp_path / "junk.png").write_bytes(b"junk")
    m = tmp_path / "m.jsonl"
    m.write_text(
        '{"ground_truth": "a.png", "reference": "b.png"}\n\n'
        '{"ground_truth": "junk.png", "reference": "b.png"}\n'
        '{"ground_truth": "missing.png", "reference": "b.png"}\n',
        encoding="utf-8",
    )
    entries = tr.read_manifest(m)
    assert entries[0] == (tmp_path / "a.png", tmp_path / "b.png") and len(entries) == 3
    assert len(tr.load_pairs(entries)) == 1
    with pytest.raises(Exception):
        tr.load_pairs(entries, skip_bad=False)
    m.write_text('{"ground_truth": "a.png"}\n')
    with pytest.raises(ValueError, match="reference"):
        tr.read_manifest(m)
    m.write_text("[1, 2]\n")
    with pytest.raises(ValueError):
        tr.read_manifest(m)
