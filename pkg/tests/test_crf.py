import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refcolor import crf
from refcolor.imagecore import GrayImage
from refcolor.matching import ChromaSeeds
from refcolor.superpixel import from_labels, segment


def grid_map(n=6, cell=5):
    labels = np.kron(np.arange(n * n).reshape(n, n), np.ones((cell, cell), dtype=int))
    return from_labels(labels)


def random_instance(seed, n_sp=40):
    rng = np.random.default_rng(seed)
    sp = segment(GrayImage(rng.uniform(0, 100, (40, 40))), 1600 // n_sp)
    # coarse levels so many neighbours are compatible
    inten = rng.integers(0, 4, sp.count) * 0.03
    std = rng.integers(0, 3, sp.count) * 0.01
    return rng, sp, inten, std


def brute_neighborhoods(adj, l, s, d1, d2, max_size=15, max_reps=3):
    out = []
    for j in range(len(adj)):
        members, visited, ring = [], {j}, [j]
        for _ in range(max_reps):
            if len(members) >= max_size or not ring:
                break
            cands = set()
            for f in ring:
                cands |= set(int(x) for x in adj[f])
            cands = sorted(cands - visited)
            visited |= set(cands)
            ring = []
            for c in cands:
                if len(members) >= max_size:
                    break
                if abs(l[c] - l[j]) <= d1 and abs(s[c] - s[j]) <= d2:
                    members.append(c)
                    ring.append(c)
        out.append(members)
    return out


def oracle_icm(C_hat, n, gamma, eta, max_sweeps=20):
    """ICM scoring every candidate with the full log-posterior."""
    C = C_hat.copy()
    for _ in range(max_sweeps):
        changed = False
        for i in range(len(C)):
            cands = [C[i].copy(), C_hat[i].copy()]
            if len(n.sets[i]):
                cands.append(C[n.sets[i]].mean(axis=0))
            scores = []
            for c in cands:
                trial = C.copy()
                trial[i] = c
                scores.append(crf.log_posterior(trial, C_hat, n, gamma, eta))
            best = 0
            for k in range(1, len(cands)):
                if np.array_equal(cands[k], C[i]):
                    continue
                if scores[k] > scores[best] + 1e-9:
                    best = k
            if best:
                C[i] = cands[best]
                changed = True
        if not changed:
            break
    return C


@given(st.integers(0, 10_000), st.floats(0.0, 0.07), st.floats(0.0, 0.025))
def test_neighborhoods_match_brute_bfs(seed, d1, d2):
    _, sp, inten, std = random_instance(seed)
    n = crf.build_neighborhoods(sp, inten, std, d1, d2)
    want = brute_neighborhoods(sp.adjacency(), inten, std, d1, d2)
    assert [s.tolist() for s in n.sets] == want


@given(st.integers(0, 10_000))
def test_neighborhood_invariants(seed):
    _, sp, inten, std = random_instance(seed)
    n = crf.build_neighborhoods(sp, inten, std)
    for j, s in enumerate(n.sets):
        assert j not in s and len(s) <= 15 and len(set(s.tolist())) == len(s)
        assert np.all(np.abs(inten[s] - inten[j]) <= crf.DELTA1)
        assert np.all(np.abs(std[s] - std[j]) <= crf.DELTA2)
    rev = n.containing()
    for i, js in enumerate(rev):
        for j in js:
            assert i in n.sets[j]


def _seeds(sp, ab):
    return ChromaSeeds(sp.centers.copy(), np.asarray(ab, dtype=np.float64), np.arange(sp.count))


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.floats(0.1, 3.0), st.floats(0.0, 4.0))
def test_refine_equals_full_posterior_icm(seed, gamma, eta):
    rng, sp, inten, std = random_instance(seed, 30)
    n = crf.build_neighborhoods(sp, inten, std)
    ab = rng.choice([-30.0, 0.0, 25.0], size=(sp.count, 2)) + rng.normal(0, 2, (sp.count, 2))
    got = crf.refine(_seeds(sp, ab), n, gamma, eta).ab
    assert np.allclose(got, oracle_icm(ab, n, gamma, eta), atol=1e-9)


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_refine_never_lowers_the_posterior(seed):
    rng, sp, inten, std = random_instance(seed)
    n = crf.build_neighborhoods(sp, inten, std)
    ab = rng.normal(0, 30, (sp.count, 2))
    out = crf.refine(_seeds(sp, ab), n).ab
    assert crf.log_posterior(out, ab, n, 1.0, 2.0) >= crf.log_posterior(ab, ab, n, 1.0, 2.0) - 1e-9
    # every refined colour is its seed or was produced by averaging colours in play
    lo, hi = ab.min(axis=0) - 1e-9, ab.max(axis=0) + 1e-9
    assert np.all((out >= lo) & (out <= hi))


def test_compiled_icm_equals_its_python_source():
    rng, sp, inten, std = random_instance(3)
    n = crf.build_neighborhoods(sp, inten, std)
    C_hat = rng.normal(0, 20, (sp.count, 2))
    sp_, si = crf._csr(n.sets)
    rp, ri = crf._csr(n.containing())
    a, b = C_hat.copy(), C_hat.copy()
    sa = crf._icm(a, C_hat, sp_, si, rp, ri, 1.0, 2.0, 20, 1e-12)
    sb = crf._icm.py_func(b, C_hat, sp_, si, rp, ri, 1.0, 2.0, 20, 1e-12)
    assert sa == sb and np.array_equal(a, b)


def test_single_outlier_in_uniform_region_is_corrected():
    sp = grid_map()
    n = crf.build_neighborhoods(sp, np.full(36, 0.5), np.full(36, 0.02))
    ab = np.tile([20.0, -10.0], (36, 1))
    ab[14] = [-30.0, 40.0]
    out = crf.refine(_seeds(sp, ab), n).ab
    assert np.allclose(out[14], ab[n.sets[14]].mean(axis=0))
    keep = np.arange(36) != 14
    assert np.array_equal(out[keep], ab[keep])


def test_eta_zero_and_isolated_superpixels_keep_seeds():
    sp = grid_map(3)
    ab = np.arange(18.0).reshape(9, 2)
    n = crf.build_neighborhoods(sp, np.full(9, 0.5), np.full(9, 0.0))
    assert np.array_equal(crf.refine(_seeds(sp, ab), n, eta=0.0).ab, ab)
    lonely = crf.build_neighborhoods(sp, np.arange(9) * 0.1, np.zeros(9))
    assert all(len(s) == 0 for s in lonely.sets)
    assert np.array_equal(crf.refine(_seeds(sp, ab), lonely).ab, ab)


def test_factor_values_and_validation():
    assert crf.unary([1, 2], [1, 2], 1.0) == 1.0
    assert crf.unary([0, 0], [3, 4], 2.0) == pytest.approx(np.exp(-10))
    assert crf.pairwise([0, 0], [3, 4], False, 2.0) == 1.0
    assert crf.pairwise([0, 0], [3, 4], True, 1.0) == pytest.approx(np.exp(-5))
    sp = grid_map(2)
    n = crf.build_neighborhoods(sp, np.zeros(4), np.zeros(4))
    with pytest.raises(ValueError):
        crf.refine(_seeds(sp, np.zeros((4, 2))), n, gamma=-1)
    with pytest.raises(ValueError):
        crf.refine(_seeds(sp, np.zeros((4, 2))), crf.NeighborhoodSets([np.zeros(0, int)]))
