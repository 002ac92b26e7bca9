import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ura_sim.codebook import Codebook, generate_codebook
from ura_sim.dictlearn import DlConfig, dl_decompose
from ura_sim.errors import ConfigurationError
from ura_sim.fec import ldpc_encode, make_ldpc
from ura_sim.metrics import trial_metrics
from ura_sim.phy import channel_apply, complex_gaussian, draw_scene, encode_users, qpsk_modulate
from ura_sim.receiver import (DetectionResult, KaEstimatorConfig, ReceiverConfig, decode_detection,
                              detect_active, estimate_ka_upper, extract_pattern, refine,
                              resolve_collisions, resolve_scalar, resolve_scalar_batch, match_scores,
                              receive, trim)


class Planted:
    """A drawn scene with its received block and noiseless frame rows."""

    def __init__(self, seed=0, Ktot=200, Ka=20, M=32, L=400, S=10, B=10, rho=1.0, noise_var=1e-12,
                 CR=0.0, m_rep=2):
        rng = np.random.default_rng(seed)
        self.code = make_ldpc(B, B / (2 * S), np.random.default_rng(1000 + seed))
        self.cb = generate_codebook(L, S, Ktot, rng)
        self.scene = draw_scene(self.cb, Ka, M, B, rho, noise_var, CR=CR, m_rep=m_rep,
                                rng_assign=rng, rng_bits=rng, rng_channel=rng)
        self.X = encode_users(self.scene.bits, self.code, self.cb, self.scene.codewords)
        self.Y = channel_apply(self.scene, self.X, rng).Y
        self.noise_var = max(noise_var, 1e-16)   # receiver side; LLRs need a positive variance
        self.Ka = Ka


@pytest.fixture(scope="module")
def planted():
    return Planted(seed=3, noise_var=0.0)


def _decompose(p, cfg=None, seed=0, atoms=1, tol=None):
    cfg = cfg or ReceiverConfig()
    M = p.Y.shape[0]
    if tol is None:
        tol = math.sqrt(cfg.omp_tol_factor * M * p.noise_var)
    dl = DlConfig(atoms=atoms, n_atoms=p.Ka, omp_tol=tol, init="data", noise_energy=M * p.noise_var)
    return dl_decompose(p.Y, dl, np.random.default_rng(seed))


# -- pattern and detection ------------------------------------------------------


def test_extract_pattern_planted_and_zero(planted):
    om = extract_pattern(planted.X)
    for u, c in enumerate(planted.scene.codewords):
        assert np.array_equal(np.flatnonzero(om[u]), planted.cb.columns[c])
    assert not extract_pattern(np.zeros((3, 7))).any()
    with pytest.raises(ConfigurationError):
        extract_pattern(planted.X, threshold=-1)


def test_extract_pattern_threshold_semantics():
    X = np.array([[0.05, 1.0, -2.0, 0.0]])
    assert extract_pattern(X).tolist() == [[1, 1, 1, 0]]
    assert extract_pattern(X, threshold=0.5).tolist() == [[0, 1, 1, 0]]
    assert extract_pattern(X, rel_threshold=0.1).tolist() == [[0, 1, 1, 0]]


@settings(max_examples=40)
@given(seed=st.integers(0, 2**31), thr=st.floats(0, 2))
def test_pattern_support_subset(seed, thr):
    X = complex_gaussian((4, 30), np.random.default_rng(seed))
    X[np.random.default_rng(seed + 1).random(X.shape) < 0.5] = 0
    om = extract_pattern(X, thr)
    assert set(np.unique(om)) <= {0, 1}
    assert np.all(om[X == 0] == 0)


def test_pattern_calibration_noisy():
    # spare atoms so that rows are not starved by the budget
    p = Planted(seed=11, noise_var=0.01)
    dec = _decompose(p, atoms=3)
    om = extract_pattern(dec.X, rel_threshold=0.1)
    det = detect_active(om, p.cb, p.Ka)
    truth = set(p.scene.codewords.tolist())
    good = [k for k in det.matched_rows if det.codewords[k] in truth]
    assert len(good) >= p.Ka - 1
    sizes = om[good].sum(axis=1).astype(int)
    S = p.cb.S
    assert np.all(np.abs(sizes - S) <= 0.2 * S)


def test_detect_self_match():
    cb = generate_codebook(60, 6, 20, np.random.default_rng(0))
    om = np.zeros((3, 60), dtype=np.uint8)
    om[1, cb.columns[7]] = 1
    det = detect_active(om, cb, 1)
    assert det.codewords[1] == 7 and det.scores[1] == 6
    assert det.matched_rows.tolist() == [1]


def test_detect_tie_break_lexicographic():
    cb = Codebook(L=6, S=2, columns=np.array([[0, 1], [2, 3], [4, 5]]))
    om = np.zeros((2, 6), dtype=np.uint8)
    om[:, [0, 1, 2, 3]] = 1                      # both rows fit codewords 0 and 1 equally
    det = detect_active(om, cb, 2)
    assert det.codewords.tolist() == [0, 1]
    det = detect_active(om, cb, 2, zero_column=False)
    assert det.codewords.tolist() == [0, 0]


def test_detect_caps_and_validates():
    cb = Codebook(L=6, S=2, columns=np.array([[0, 1], [2, 3], [4, 5]]))
    om = np.ones((2, 6), dtype=np.uint8)
    with pytest.warns(RuntimeWarning):
        det = detect_active(om, cb, 5)
    assert det.n_matched == 2
    with pytest.raises(ConfigurationError):
        detect_active(om, cb, 0)
    with pytest.raises(ConfigurationError):
        detect_active(np.ones((2, 5)), cb, 1)


@settings(max_examples=30)
@given(seed=st.integers(0, 2**31), k=st.integers(1, 8))
def test_detect_injective_and_bounded(seed, k):
    rng = np.random.default_rng(seed)
    cb = generate_codebook(40, 4, 15, rng)
    om = (rng.random((8, 40)) < 0.2).astype(np.uint8)
    det = detect_active(om, cb, k)
    cw = det.detected()
    assert det.n_matched == k
    assert len(set(cw.tolist())) == len(cw)
    assert np.all(det.scores <= cb.S) and np.all(det.P <= cb.S)
    assert np.array_equal(det.P, match_scores(om, cb))


def test_detect_planted_small_scene():
    # Ktot=50, Ka=5, L=100, S=5 (B=4, p=6)
    p = Planted(seed=2, Ktot=50, Ka=5, M=16, L=100, S=5, B=4)
    dec = _decompose(p)
    det = detect_active(extract_pattern(dec.X), p.cb, 5)
    assert sorted(det.detected().tolist()) == sorted(p.scene.codewords.tolist())
    # exact patterns self-match at S
    exact = detect_active(extract_pattern(p.X), p.cb, 5)
    assert np.array_equal(exact.codewords, p.scene.codewords)
    assert np.all(exact.scores == 5)


# -- scalar ambiguity ---------------------------------------------------------------


@pytest.fixture(scope="module")
def code20():
    return make_ldpc(20, 0.5, np.random.default_rng(5))


def _clean_row(code, seed):
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, code.B, dtype=np.uint8)
    return bits, qpsk_modulate(ldpc_encode(code, bits))


def test_resolve_scalar_quarter_turn(code20):
    bits, s = _clean_row(code20, 0)
    g, rot, dec, perr = resolve_scalar(2.7 * np.exp(1j * np.pi / 2) * s, code20, 1e-3)
    assert rot == 1 and perr == 0
    assert np.array_equal(dec, bits)
    assert g == pytest.approx(2.7j)


def test_resolve_scalar_identity(code20):
    bits, s = _clean_row(code20, 1)
    g, rot, dec, perr = resolve_scalar(s, code20, 1e-3)
    assert (rot, perr) == (0, 0) and np.array_equal(dec, bits)


def test_resolve_scalar_off_grid(code20):
    # pi/7 is not a quarter turn; the phase estimate absorbs it on a clean row
    bits, s = _clean_row(code20, 2)
    g, rot, dec, perr = resolve_scalar(np.exp(1j * np.pi / 7) * s, code20, 1e-3)
    assert rot in range(4) and perr >= 0
    assert np.array_equal(dec, bits) == (perr == 0)


def test_resolve_scalar_errors(code20):
    with pytest.raises(ConfigurationError):
        resolve_scalar(np.zeros(20), code20, 1.0)
    with pytest.raises(ConfigurationError):
        resolve_scalar(np.ones(19), code20, 1.0)
    r = resolve_scalar_batch(np.zeros((1, 20)), code20, 1.0)
    assert r.parity_errors[0] == code20.p


@settings(max_examples=30)
@given(seed=st.integers(0, 2**31), k=st.integers(0, 3), gain=st.floats(0.05, 50))
def test_rotation_invariance(code20, seed, k, gain):
    rng = np.random.default_rng(seed)
    bits, s = _clean_row(code20, seed)
    y = s + complex_gaussian(20, rng, 0.05)
    ref = resolve_scalar(y, code20, 0.05)[2]
    got = resolve_scalar(gain * (1j ** k) * y, code20, 0.05 * gain ** 2)[2]
    assert np.array_equal(ref, got)


# -- refinement -----------------------------------------------------------------------


def _planted_detection(p, dec):
    return detect_active(extract_pattern(dec.X), p.cb, p.Ka)


def test_refine_planted_noiseless(planted):
    p = planted
    dec = _decompose(p, atoms=4)
    det = _planted_detection(p, dec)
    cfg = ReceiverConfig()
    ref = refine(p.Y, dec.X, dec.D, det, p.cb, p.code, cfg, p.noise_var)
    order = {c: u for u, c in enumerate(p.scene.codewords)}
    users = [order[c] for c in ref.codewords]
    assert np.array_equal(ref.bits, p.scene.bits[users])
    assert np.all(ref.parity_errors == 0)
    fit = np.linalg.norm(p.Y - ref.G @ ref.X)
    assert fit / np.linalg.norm(p.Y) < 1e-6
    assert fit <= np.linalg.norm(p.Y - dec.D @ dec.X) + 1e-9
    # columns match the true channels up to a unit-modulus factor
    G_true = p.scene.G[:, users]
    ratio = np.sum(ref.G.conj() * G_true, axis=0) / np.sum(np.abs(ref.G) ** 2, axis=0)
    assert np.allclose(np.abs(ratio), 1.0, atol=1e-6)
    # re-encoded rows vanish off their codeword support
    for k, c in enumerate(ref.codewords):
        off = np.setdiff1d(np.arange(p.cb.L), p.cb.columns[c])
        assert not ref.X[k, off].any()


def test_refine_single_user_rank_one():
    p = Planted(seed=4, Ka=1)
    dec = _decompose(p)
    det = _planted_detection(p, dec)
    ref = refine(p.Y, dec.X, dec.D, det, p.cb, p.code, ReceiverConfig(refine_passes=1), p.noise_var)
    assert np.allclose(ref.G @ ref.X, p.scene.G @ p.X, atol=1e-5)


def test_refine_corrects_injected_error(planted):
    p = planted
    dec = _decompose(p, atoms=4)
    det = _planted_detection(p, dec)
    X_bad = dec.X.copy()
    k = det.matched_rows[0]
    pos = p.cb.columns[det.codewords[k]][3]
    X_bad[k, pos] *= -1                     # one symbol flipped by a half-turn
    cfg = ReceiverConfig(refit_support=False, refine_passes=1)
    before = np.linalg.norm(p.Y - dec.D @ X_bad)
    ref = refine(p.Y, X_bad, dec.D, det, p.cb, p.code, cfg, p.noise_var)
    u = int(np.flatnonzero(p.scene.codewords == det.codewords[k])[0])
    assert np.array_equal(ref.bits[0], p.scene.bits[u])
    assert ref.residuals[-1] < before


def test_refine_needs_rows(planted):
    det = DetectionResult(np.full(3, -1), np.zeros(3, int), np.zeros((3, planted.cb.Ktot), int))
    with pytest.raises(ConfigurationError):
        refine(planted.Y, np.zeros((3, 400)), np.zeros((32, 3)), det, planted.cb, planted.code,
               ReceiverConfig(), 1.0)


# -- collisions --------------------------------------------------------------------------


def _collision_setup(code, true_cw, det_cw, P_rows, cb, seed=0):
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, (len(true_cw), code.B), dtype=np.uint8)
    X = encode_users(bits, code, cb, np.array(true_cw))
    G = np.eye(len(true_cw), dtype=complex)
    det = DetectionResult(np.array(det_cw), np.array([P_rows[k][c] for k, c in enumerate(det_cw)]),
                          np.array(P_rows))
    return X, G, det, bits


def _toy_cb():
    return generate_codebook(100, 10, 12, np.random.default_rng(0))


def test_collision_reassigns_wrong_row():
    cb = _toy_cb()
    code = make_ldpc(10, 0.5, np.random.default_rng(2))
    P = np.zeros((2, 12), dtype=int)
    P[0, 9], P[1, 9], P[1, 4] = 10, 9, 8       # row 1 looks more like 9 than its own 4
    X, G, det, bits = _collision_setup(code, [9, 4], [9, 9], P, cb)
    out = resolve_collisions(det, X, G, cb, code, m_rep=1, noise_var=1e-3)
    assert out.codewords.tolist() == [9, 4]
    assert out.scores.tolist() == [10, 8]
    r = resolve_scalar_batch(X[1, cb.columns[4]][None], code, 1e-3)
    assert r.parity_errors[0] == 0 and np.array_equal(r.bits[0], bits[1])
    # d <= m_rep: nothing to do
    same = resolve_collisions(det, X, G, cb, code, m_rep=2, noise_var=1e-3)
    assert same.codewords.tolist() == [9, 9]


def test_genuine_collision_keeps_codeword():
    cb = _toy_cb()
    code = make_ldpc(10, 0.5, np.random.default_rng(2))
    rng = np.random.default_rng(3)
    bits = rng.integers(0, 2, (2, code.B), dtype=np.uint8)
    X2 = encode_users(bits, code, cb, np.array([9, 9]))
    # both learned rows see the superposition of the two colliding users
    mix = np.array([[1.0, 0.9j], [0.8, -1.0]]) @ X2
    P = np.zeros((2, 12), dtype=int)
    P[:, 9] = 10
    P[:, 4] = 8
    det = DetectionResult(np.array([9, 9]), np.array([10, 10]), P)
    out = resolve_collisions(det, mix, np.eye(2, dtype=complex), cb, code, m_rep=1, noise_var=1e-3)
    assert out.codewords.tolist() == [9, 9]
    res = resolve_scalar_batch(mix[:, cb.columns[9]], code, 1e-3)
    assert res.parity_errors.shape == (2,)


# -- Ka estimation ---------------------------------------------------------------------


def test_ka_upper_expectation_and_clamps():
    M, L, S, rho, Ka = 16, 100, 5, 2.0, 7
    target = M * (rho * S * Ka + L)
    Y = np.full((M, L), math.sqrt(target / (M * L)), dtype=complex)
    assert estimate_ka_upper(Y, rho, S, M, L) == Ka
    assert estimate_ka_upper(np.zeros((M, L)), rho, S, M, L) == 0
    assert estimate_ka_upper(Y * 10, rho, S, M, L, Ktot=50) == 50
    with pytest.raises(ConfigurationError):
        estimate_ka_upper(Y, 0.0, S, M, L)


def ka_upper_rel_error(draws=100, seed=0, M=128, Ka=20, snr_db=10.0):
    rng = np.random.default_rng(seed)
    rho = 10 ** (snr_db / 10)
    cb = generate_codebook(400, 10, 200, rng)
    code = make_ldpc(10, 0.5, rng)
    errs = []
    for _ in range(draws):
        sc = draw_scene(cb, Ka, M, 10, rho, 1.0, rng_assign=rng, rng_bits=rng, rng_channel=rng)
        Y = channel_apply(sc, encode_users(sc.bits, code, cb, sc.codewords), rng).Y
        errs.append(abs(estimate_ka_upper(Y, rho, 10, M, 400, 200) - Ka) / Ka)
    return float(np.mean(errs))


def test_ka_upper_concentration():
    assert ka_upper_rel_error() <= 0.15


def _padded(p, extra=5, seed=0):
    """Ka true rows plus ``extra`` weak random rows."""
    rng = np.random.default_rng(seed)
    L = p.cb.L
    junk = np.zeros((extra, L), complex)
    for r in range(extra):
        pos = rng.choice(L, 3, replace=False)
        junk[r, pos] = 1e-3 * complex_gaussian(3, rng)
    X = np.vstack([p.X, junk])
    G = np.hstack([p.scene.G, complex_gaussian((p.Y.shape[0], extra), rng)])
    return X, G


@pytest.mark.parametrize("rescue", [False, True])
def test_trim_padded_rows(planted, rescue):
    p = planted
    X, G = _padded(p)
    det = detect_active(extract_pattern(X), p.cb, p.Ka + 5)
    cfg = KaEstimatorConfig(rho_min=1.0, rescue=rescue)
    k, out = trim(p.Y, X, G, det, cfg, p.cb.S, code=p.code, codebook=p.cb, noise_var=p.noise_var)
    assert k == p.Ka
    assert sorted(out.detected().tolist()) == sorted(p.scene.codewords.tolist())


def test_trim_keeps_genuine_rows(planted):
    p = planted
    det = detect_active(extract_pattern(p.X), p.cb, p.Ka)
    k, out = trim(p.Y, p.X, p.scene.G, det, KaEstimatorConfig(rho_min=1.0), p.cb.S)
    assert k == p.Ka


def test_trim_median_threshold(planted):
    p = planted
    det = detect_active(extract_pattern(p.X), p.cb, p.Ka)
    cfg = KaEstimatorConfig(rho_min=1.0, tau_pow=1.0, rescue=False)
    k, _ = trim(p.Y, p.X, p.scene.G, det, cfg, p.cb.S)
    assert abs(k - p.Ka / 2) <= 1


def test_trim_everything_warns(planted):
    p = planted
    det = detect_active(extract_pattern(p.X), p.cb, 1)
    det.scores[:] = 0
    with pytest.warns(RuntimeWarning):
        k, _ = trim(p.Y, p.X, p.scene.G, det, KaEstimatorConfig(rho_min=1.0), p.cb.S)
    assert k == 0


def test_estimator_config_validation():
    with pytest.raises(ConfigurationError):
        KaEstimatorConfig(rho_min=0)
    with pytest.raises(ConfigurationError):
        KaEstimatorConfig(rho_min=1, tau_match=0)
    with pytest.raises(ConfigurationError):
        KaEstimatorConfig(rho_min=1, tau_pow=1.5)


# -- pipeline ---------------------------------------------------------------------------


def _score(p, res, ka_known=True):
    return trial_metrics(p.scene.codewords, p.scene.bits, res.codewords, res.bits, ka_known=ka_known,
                         det_parity_errors=res.parity_errors, truth_coded=ldpc_encode(p.code, p.scene.bits),
                         det_coded=ldpc_encode(p.code, res.bits))


def test_receive_planted_known(planted):
    p = planted
    res = receive(p.Y, p.cb, p.code, ReceiverConfig(), p.noise_var, Ka=p.Ka, rng=np.random.default_rng(0))
    m = _score(p, res)
    assert m.p_e == 0.0 and m.ser == 0.0


def test_receive_planted_unknown(planted):
    p = planted
    cfg = ReceiverConfig(ka_estimator=KaEstimatorConfig(rho_min=1.0))
    res = receive(p.Y, p.cb, p.code, cfg, p.noise_var, rng=np.random.default_rng(0))
    m = _score(p, res, ka_known=False)
    assert m.L_size == res.K_est
    assert res.K_est == p.Ka and res.K_hat == p.Ka


def test_receive_validation(planted):
    p = planted
    with pytest.raises(ConfigurationError):
        receive(p.Y[:, :10], p.cb, p.code, ReceiverConfig(), Ka=3)
    with pytest.raises(ConfigurationError):
        receive(p.Y, p.cb, p.code, ReceiverConfig())
    empty = receive(np.zeros_like(p.Y), p.cb, p.code,
                    ReceiverConfig(ka_estimator=KaEstimatorConfig(rho_min=1.0)), 1.0)
    assert empty.K_est == 0 and empty.bits.shape == (0, p.code.B)


def ambiguity_check(p, rng, cfg=None):
    """Permute and rescale the decomposition; True when the outputs are unchanged."""
    cfg = cfg or ReceiverConfig()
    dec = _decompose(p)
    det = detect_active(extract_pattern(dec.X), p.cb, p.Ka)
    base = decode_detection(p.Y, dec.X, dec.D, det, p.cb, p.code, cfg, p.noise_var)
    K = dec.X.shape[0]
    perm = rng.permutation(K)
    lam = np.exp(2j * np.pi * rng.random(K)) * rng.uniform(0.3, 3.0, K)
    D2 = (dec.D * lam)[:, perm]
    X2 = (dec.X / lam[:, None])[perm]
    det2 = detect_active(extract_pattern(X2), p.cb, p.Ka)
    alt = decode_detection(p.Y, X2, D2, det2, p.cb, p.code, cfg, p.noise_var)

    def key(r):
        return sorted(zip(r.codewords.tolist(), map(bytes, r.bits)))
    return key(base) == key(alt)


def test_ambiguity_invariance(planted):
    rng = np.random.default_rng(9)
    assert all(ambiguity_check(planted, rng) for _ in range(10))


def test_receiver_config_validation():
    with pytest.raises(ConfigurationError):
        ReceiverConfig(atom_mode="best")
    with pytest.raises(ConfigurationError):
        ReceiverConfig(atom_mode="explicit")
    with pytest.raises(ConfigurationError):
        ReceiverConfig(bp_method="viterbi")
    with pytest.raises(ConfigurationError):
        ReceiverConfig(refine_passes=0)
