import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ura_sim.codebook import (Codebook, assign_codewords, cross_match_expectation, extraction_map,
                              generate_codebook, select_uniform)
from ura_sim.errors import ConfigurationError, InfeasibleCodebookError


def test_paper_size_codebook(rng):
    cb = generate_codebook(1600, 40, 1000, rng)
    assert cb.columns.shape == (1000, 40)
    dense = cb.dense()
    assert dense.shape == (1600, 1000)
    assert np.all(dense.sum(axis=0) == 40)


def test_full_support_single_codeword(rng):
    cb = generate_codebook(4, 4, 1, rng)
    assert cb.columns.tolist() == [[0, 1, 2, 3]]


def test_infeasible_codebook(rng):
    # the 2-subsets of a 4-set, counted by enumeration
    assert len(list(itertools.combinations(range(4), 2))) == 6
    with pytest.raises(InfeasibleCodebookError):
        generate_codebook(4, 2, 7, rng)
    cb = generate_codebook(4, 2, 6, rng)
    assert {tuple(r) for r in cb.columns} == set(itertools.combinations(range(4), 2))


@pytest.mark.parametrize("L,S,K", [(0, 1, 1), (4, 0, 1), (4, 5, 1), (4, 2, 0)])
def test_invalid_dimensions(rng, L, S, K):
    with pytest.raises(ConfigurationError):
        generate_codebook(L, S, K, rng)


def test_dense_sparsity_warning(rng):
    with pytest.warns(UserWarning, match="sparsity"):
        generate_codebook(20, 5, 10, rng)


@given(L=st.integers(8, 60), data=st.data())
def test_columns_weight_and_distinct(L, data):
    S = data.draw(st.integers(1, max(1, L // 10)))
    K = data.draw(st.integers(1, min(40, math.comb(L, S))))
    seed = data.draw(st.integers(0, 2**32 - 1))
    cb = generate_codebook(L, S, K, np.random.default_rng(seed))
    cols = cb.columns
    assert cols.shape == (K, S)
    assert np.all((cols >= 0) & (cols < L))
    assert np.all(np.diff(cols, axis=1) > 0) if S > 1 else True
    assert len({r.tobytes() for r in cols}) == K
    C = cb.dense()
    assert np.all(C.sum(axis=0) == S)
    assert np.all(np.diag(C.T @ C) == S)


def test_determinism():
    a = generate_codebook(100, 5, 50, np.random.default_rng(3))
    b = generate_codebook(100, 5, 50, np.random.default_rng(3))
    assert np.array_equal(a.columns, b.columns)


def test_json_roundtrip(tmp_path, rng):
    cb = generate_codebook(50, 3, 20, rng, seed=9)
    path = tmp_path / "cb.json"
    cb.save(path)
    back = Codebook.load(path)
    assert back.L == 50 and back.S == 3 and back.seed == 9
    assert np.array_equal(back.columns, cb.columns)


def test_json_rejects_bad_columns():
    with pytest.raises(ConfigurationError):
        Codebook.from_json({"L": 5, "S": 2, "Ktot": 2, "columns": [[0, 1], [0, 1]]})
    with pytest.raises(ConfigurationError):
        Codebook.from_json({"L": 5, "S": 2, "Ktot": 1, "columns": [[0, 7]]})


def test_extraction_examples():
    cb = Codebook(L=4, S=3, columns=np.array([[0, 2, 3], [0, 1, 2]]))
    row = np.array(["a", "b", "c", "d"])
    assert extraction_map(cb, 0).apply(row).tolist() == ["a", "c", "d"]
    full = Codebook(L=4, S=4, columns=np.array([[0, 1, 2, 3]]))
    x = np.arange(4) * 1.5
    assert np.array_equal(extraction_map(full, 0)(x), x)
    frame = np.array([7, 0, 0, 9, 0])
    cb2 = Codebook(L=5, S=2, columns=np.array([[0, 3]]))
    assert extraction_map(cb2, 0)(frame).tolist() == [7, 9]


def test_extraction_of_own_codeword_is_all_ones(rng):
    cb = generate_codebook(40, 4, 10, rng)
    C = cb.dense()
    for k in range(cb.Ktot):
        em = extraction_map(cb, k)
        assert np.all(em(C[:, k]) == 1)
        assert np.array_equal(em.matrix().T @ C[:, k], np.ones(4))
    with pytest.raises(IndexError):
        extraction_map(cb, 10)


def test_assign_no_collisions(rng):
    cb = generate_codebook(1600, 40, 1000, rng)
    a = assign_codewords(cb, 100, 0.0, 2, rng)
    assert len(np.unique(a.codewords)) == 100
    assert a.collided.size == 0


def test_assign_ten_percent(rng):
    cb = generate_codebook(1600, 40, 1000, rng)
    a = assign_codewords(cb, 100, 0.1, 2, rng)
    vals, counts = np.unique(a.codewords, return_counts=True)
    assert np.sum(counts == 2) == 5
    assert counts.max() == 2
    assert a.collided.size == 10
    assert np.all(np.isin(a.codewords[a.collided], vals[counts == 2]))


@given(Ka=st.integers(1, 60), cr=st.floats(0, 1), m_rep=st.integers(1, 4), seed=st.integers(0, 10**6))
def test_assign_respects_m_rep(Ka, cr, m_rep, seed):
    rng = np.random.default_rng(seed)
    cb = generate_codebook(200, 4, 100, rng)
    try:
        a = assign_codewords(cb, Ka, cr, m_rep, rng)
    except ConfigurationError:
        n_join = math.floor(cr * Ka / 2 + 0.5)
        assert n_join > (Ka - n_join) * (m_rep - 1)
        return
    assert a.multiplicity().max() <= m_rep
    assert len(a.codewords) == Ka


def test_assign_capacity_error(rng):
    cb = generate_codebook(100, 4, 50, rng)
    with pytest.raises(ConfigurationError):
        assign_codewords(cb, 10, 0.5, 1, rng)
    with pytest.raises(ConfigurationError):
        assign_codewords(cb, 60, 0.0, 2, rng)


def test_uniform_collision_probability():
    # all ordered pairs of the 6 codewords of binom(4,2): 6 of 36 collide
    pairs = list(itertools.product(range(6), repeat=2))
    assert sum(a == b for a, b in pairs) / len(pairs) == pytest.approx(1 / 6)
    cb = generate_codebook(4, 2, 6, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    draws = np.array([select_uniform(cb, 2, rng) for _ in range(30000)])
    rate = np.mean(draws[:, 0] == draws[:, 1])
    assert rate == pytest.approx(1 / 6, abs=0.01)


def test_cross_match_expectation(rng):
    assert cross_match_expectation(1600, 40) == 1.0
    assert cross_match_expectation(4, 4) == 4
    n = 100_000
    a = np.argsort(rng.random((n, 100)), axis=1)[:, :10]
    b = np.argsort(rng.random((n, 100)), axis=1)[:, :10]
    ma = np.zeros((n, 100), dtype=bool)
    mb = np.zeros((n, 100), dtype=bool)
    np.put_along_axis(ma, a, True, axis=1)
    np.put_along_axis(mb, b, True, axis=1)
    mc = np.mean(np.sum(ma & mb, axis=1))
    assert mc == pytest.approx(cross_match_expectation(100, 10), rel=0.05)


def test_column_sparsity_concentrates_near_ka_gamma():
    # per frame position, the number of active users occupying it averages Ka*S/L
    rng = np.random.default_rng(5)
    means = []
    for _ in range(100):
        cb = generate_codebook(1600, 40, 1000, rng)
        act = rng.choice(1000, 100, replace=False)
        occ = np.bincount(cb.columns[act].ravel(), minlength=1600)
        means.append(occ.mean())
    assert np.mean(means) == pytest.approx(100 * 40 / 1600, rel=0.1)
