"""Receive pipeline: decomposition, pattern matching, ECC refinement, collisions, Ka estimation.

Row indices below always refer to rows of the learned coefficient matrix X~
(equivalently, columns of the learned dictionary G~).  A detection maps each
row to at most one codeword index; ``-1`` marks an unmatched row.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .codebook import Codebook
from .dictlearn import DlConfig, atom_budget, default_reg, dl_decompose, mod_update
from .errors import ConfigurationError
from .fec import LdpcCode, ldpc_decode_bp, ldpc_encode
from .phy import qpsk_demod_llr, qpsk_modulate, spread_rows

ROTATIONS = np.array([1.0, 1j, -1.0, -1j])


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class KaEstimatorConfig:
    """Blind active-count estimation: power bound plus pattern/power trimming.

    ``margin`` extra dictionary atoms are added on top of the power bound
    before trimming; ``rescue`` keeps trimmed rows that still decode cleanly.
    """

    rho_min: float
    tau_match: float = 0.5
    tau_pow: float = 0.1
    margin: int = 2
    rescue: bool = True

    def __post_init__(self):
        if not self.rho_min > 0:
            raise ConfigurationError(f"rho_min must be positive, got {self.rho_min}")
        for name in ("tau_match", "tau_pow"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ConfigurationError(f"{name}={v} must lie in (0, 1]")
        if self.margin < 0:
            raise ConfigurationError("margin must be >= 0")


@dataclass(frozen=True)
class ReceiverConfig:
    atom_mode: str = "optimized"        # optimized | upper | explicit
    atoms: int | None = None            # used by atom_mode="explicit"
    dl_max_iter: int = 30
    dl_rel_tol: float = 1e-4
    dl_reg: float | None = None
    dl_init: str = "data"
    dl_init_threshold: float = 0.8
    dl_escapes: int = 3
    omp_tol: float | None = None        # None: sqrt(omp_tol_factor * M * noise_var)
    omp_tol_factor: float = 2.0
    pattern_threshold: float = 0.0
    pattern_rel_threshold: float = 0.0
    zero_column: bool = True
    refine_passes: int = 2
    noise_fit_factor: float = 1.5
    refit_support: bool = True
    max_total_parity_errors: int = 0
    crp: bool = False
    m_rep: int = 2
    crp_candidates: int = 4
    bp_iters: int = 50
    bp_method: str = "sum-product"
    ka_estimator: KaEstimatorConfig | None = None

    def __post_init__(self):
        if self.atom_mode not in ("optimized", "upper", "explicit"):
            raise ConfigurationError(f"unknown atom_mode {self.atom_mode!r}")
        if self.atom_mode == "explicit" and (self.atoms is None or self.atoms < 1):
            raise ConfigurationError("atom_mode='explicit' needs atoms >= 1")
        if self.refine_passes < 1:
            raise ConfigurationError("refine_passes must be >= 1")
        if self.m_rep < 1 or self.crp_candidates < 1:
            raise ConfigurationError("m_rep and crp_candidates must be >= 1")
        if self.bp_method not in ("sum-product", "min-sum"):
            raise ConfigurationError(f"unknown bp_method {self.bp_method!r}")
        if self.omp_tol is not None and self.omp_tol < 0:
            raise ConfigurationError("omp_tol must be >= 0")


# --------------------------------------------------------------------------
# pattern extraction and detection
# --------------------------------------------------------------------------


def extract_pattern(X, threshold: float = 0.0, rel_threshold: float = 0.0) -> np.ndarray:
    """Binary support pattern of ``X``: ``|X_ij| > max(threshold, rel_threshold * rms_i)``.

    ``rms_i`` is the RMS magnitude over the nonzero entries of row i.
    """
    if threshold < 0 or rel_threshold < 0:
        raise ConfigurationError("pattern thresholds must be >= 0")
    A = np.abs(np.asarray(X))
    thr = np.full(A.shape[0], float(threshold))
    if rel_threshold > 0:
        nz = np.count_nonzero(A, axis=1)
        rms = np.sqrt(np.sum(A ** 2, axis=1) / np.maximum(nz, 1))
        thr = np.maximum(thr, rel_threshold * rms)
    return (A > thr[:, None]).astype(np.uint8)


def match_scores(omega: np.ndarray, cb: Codebook) -> np.ndarray:
    """``P = Omega C``: overlap of every pattern row with every codeword support."""
    omega = np.asarray(omega, dtype=np.int64)
    if omega.shape[1] != cb.L:
        raise ConfigurationError(f"pattern has {omega.shape[1]} columns, codebook L={cb.L}")
    return omega[:, cb.columns].sum(axis=2)


@dataclass
class DetectionResult:
    codewords: np.ndarray   # (rows,) matched codeword, -1 if unmatched
    scores: np.ndarray      # (rows,) P at the match, 0 if unmatched
    P: np.ndarray           # (rows, Ktot) full score matrix

    @property
    def matched_rows(self) -> np.ndarray:
        return np.flatnonzero(self.codewords >= 0)

    @property
    def n_matched(self) -> int:
        return int(np.count_nonzero(self.codewords >= 0))

    def detected(self) -> np.ndarray:
        """Matched codewords of all matched rows (a multiset, row order)."""
        return self.codewords[self.matched_rows]

    def permuted(self, perm: np.ndarray) -> DetectionResult:
        return DetectionResult(self.codewords[perm], self.scores[perm], self.P[perm])


def detect_active(omega, cb: Codebook, K_target: int, zero_column: bool = True) -> DetectionResult:
    """Greedy global-maximum matching of pattern rows to codewords.

    Each pick takes the largest remaining entry of ``P`` (ties: smallest row,
    then smallest codeword), retires its row and, with ``zero_column``, its
    codeword.  Exactly ``K_target`` rows are matched, even at score 0.
    """
    if K_target < 1:
        raise ConfigurationError(f"K_target must be >= 1, got {K_target}")
    P = match_scores(omega, cb)
    rows = P.shape[0]
    if K_target > rows:
        warnings.warn(f"K_target={K_target} exceeds {rows} pattern rows; capping", RuntimeWarning, stacklevel=2)
        K_target = rows
    work = P.copy()
    codewords = np.full(rows, -1, dtype=np.int64)
    scores = np.zeros(rows, dtype=np.int64)
    for _ in range(K_target):
        k, n = divmod(int(np.argmax(work)), work.shape[1])
        if work[k, n] < 0:
            break
        codewords[k] = n
        scores[k] = P[k, n]
        work[k, :] = -1
        if zero_column:
            work[:, n] = -1
    return DetectionResult(codewords=codewords, scores=scores, P=P)


# --------------------------------------------------------------------------
# scalar ambiguity
# --------------------------------------------------------------------------


@dataclass
class ScalarResolution:
    gain: np.ndarray           # complex gain incl. the chosen rotation
    rotation: np.ndarray       # index into ROTATIONS
    bits: np.ndarray           # decoded message bits
    codeword: np.ndarray       # re-encoded coded bits
    parity_errors: np.ndarray


def _phase_estimate(symbols: np.ndarray) -> np.ndarray:
    # fourth power strips QPSK data; unit-energy QPSK points satisfy s**4 == -1
    return (np.angle(np.sum(symbols ** 4, axis=-1)) - math.pi) / 4.0


def resolve_scalar_batch(symbols, code: LdpcCode, noise_var, max_iters: int | None = None,
                         method: str = "sum-product") -> ScalarResolution:
    """Resolve the per-row complex scale of ``(K, S)`` symbol rows by decoding.

    Magnitude is the RMS of each row and the phase comes from a fourth-power
    estimate; the remaining quarter-turn ambiguity is settled by BP-decoding
    all four rotations and keeping the one with the fewest unsatisfied checks.
    Ties go to the smallest disagreement between the channel LLRs and the
    re-encoded codeword, then to the smallest rotation index.  Rows that are
    all zero report every check as failed.
    """
    s = np.atleast_2d(np.asarray(symbols, dtype=np.complex128))
    K, S = s.shape
    if S != code.S:
        raise ConfigurationError(f"{S} symbols per row, code carries {code.S}")
    nv = np.broadcast_to(np.asarray(noise_var, dtype=np.float64), s.shape)
    mag = np.sqrt(np.mean(np.abs(s) ** 2, axis=1))
    dead = mag == 0
    g0 = np.where(dead, 1.0, mag) * np.exp(1j * _phase_estimate(s))
    gains = g0[:, None] * ROTATIONS[None, :]                       # (K, 4)
    llr = qpsk_demod_llr(s[:, None, :], nv[:, None, :], gains[:, :, None], clamp=code.llr_clamp)
    res = ldpc_decode_bp(code, llr.reshape(4 * K, 2 * S), max_iters=max_iters, method=method)
    perr = res.parity_errors.reshape(K, 4)
    bits = res.bits.reshape(K, 4, code.B)
    cw = ldpc_encode(code, res.bits).reshape(K, 4, code.n)
    llr = llr.reshape(K, 4, code.n)
    # LLR mass that the re-encoded codeword contradicts
    cost = np.sum(np.abs(llr) * ((llr <= 0) != cw.astype(bool)), axis=2)
    order = np.lexsort((np.broadcast_to(np.arange(4), (K, 4)), cost, perr), axis=1)
    best = order[:, 0]
    idx = np.arange(K)
    out_perr = perr[idx, best].astype(np.int64)
    out_perr[dead] = code.p
    return ScalarResolution(gain=gains[idx, best], rotation=best, bits=bits[idx, best],
                            codeword=cw[idx, best], parity_errors=out_perr)


def resolve_scalar(symbols, code: LdpcCode, noise_var, max_iters: int | None = None,
                   method: str = "sum-product"):
    """Single-row form of :func:`resolve_scalar_batch`.

    Returns ``(gain, rotation, bits, parity_errors)``.
    """
    s = np.asarray(symbols, dtype=np.complex128)
    if s.ndim != 1:
        raise ConfigurationError("resolve_scalar takes one row of symbols")
    if not np.any(s):
        raise ConfigurationError("all-zero symbols: the gain is undefined")
    r = resolve_scalar_batch(s[None, :], code, np.asarray(noise_var)[None, ...] if np.ndim(noise_var) else noise_var,
                             max_iters=max_iters, method=method)
    return complex(r.gain[0]), int(r.rotation[0]), r.bits[0], int(r.parity_errors[0])


# --------------------------------------------------------------------------
# refinement
# --------------------------------------------------------------------------


@dataclass
class RefinedOutput:
    rows: np.ndarray           # X~ rows that were refined
    codewords: np.ndarray      # (K,) codeword of each refined row
    G: np.ndarray              # (M, K) refined channel estimates
    bits: np.ndarray           # (K, B)
    parity_errors: np.ndarray  # (K,)
    gains: np.ndarray          # (K,) resolved complex scale of the last symbol extraction
    rotations: np.ndarray      # (K,)
    X: np.ndarray              # (K, L) re-encoded rows f(X^)
    residuals: list[float] = field(default_factory=list)
    passes: int = 0


def support_ls(Y, G, supports, noise_var):
    """Per-position least squares restricted to the users active at that position.

    Returns ``(symbols, symbol_noise_var)``, both ``(K, S)``.
    """
    Y = np.asarray(Y)
    K, S = supports.shape
    pos = supports.ravel()
    owner = np.repeat(np.arange(K), S)
    slot = np.tile(np.arange(S), K)
    order = np.argsort(pos, kind="stable")
    pos, owner, slot = pos[order], owner[order], slot[order]
    starts = np.flatnonzero(np.r_[True, pos[1:] != pos[:-1]])
    counts = np.diff(np.r_[starts, pos.size])
    sym = np.zeros((K, S), dtype=np.complex128)
    var = np.full((K, S), np.inf)
    for c in np.unique(counts):
        st = starts[counts == c]
        members = st[:, None] + np.arange(c)[None, :]          # (P, c)
        us = owner[members]
        Ga = G[:, us].transpose(1, 0, 2)                        # (P, M, c)
        A = Ga.conj().transpose(0, 2, 1) @ Ga
        b = Ga.conj().transpose(0, 2, 1) @ Y[:, pos[st]].T[:, :, None]
        Ainv = np.linalg.pinv(A, hermitian=True)
        x = (Ainv @ b)[..., 0]
        v = noise_var * np.real(np.diagonal(Ainv, axis1=1, axis2=2))
        v = np.where(v > 0, v, np.inf)
        sym[us, slot[members]] = x
        var[us, slot[members]] = v
    return sym, var


def _channel_fit(Y, Xf, max_cond: float = 1e10):
    """MOD channel fit; the ridge term is used only when ``Xf Xf^H`` is ill-conditioned."""
    A = Xf @ Xf.conj().T
    reg = 0.0 if np.linalg.cond(A) < max_cond else default_reg(Xf)
    try:
        return mod_update(Y, Xf, reg)
    except np.linalg.LinAlgError:
        return None


def refine(Y, X_tilde, G_tilde, det: DetectionResult, cb: Codebook, code: LdpcCode,
           cfg: ReceiverConfig, noise_var: float) -> RefinedOutput:
    """Decode matched rows, re-encode them and re-fit the channel by MOD.

    The first pass reads symbols at the codeword support from X~ re-fitted
    with G~ under the off-support-zero constraint (or from X~ itself with
    ``refit_support=False``); later passes re-estimate them the same way with
    the refined channel.  Passes stop once the total parity-error count is small enough or
    stops improving; the best pass is returned.
    """
    Y = np.asarray(Y, dtype=np.complex128)
    rows = det.matched_rows
    if rows.size == 0:
        raise ConfigurationError("refine needs at least one matched row")
    cws = det.codewords[rows]
    sup = cb.columns[cws]
    L = cb.L
    if cfg.refit_support:
        # X~ re-fitted under the off-support-zero constraint, then read at the support
        sym, var = support_ls(Y, G_tilde[:, rows], sup, noise_var)
    else:
        atom_norm2 = np.sum(np.abs(G_tilde[:, rows]) ** 2, axis=0)
        sym = np.take_along_axis(X_tilde[rows], sup, axis=1)
        var = np.broadcast_to((noise_var / np.maximum(atom_norm2, 1e-300))[:, None], sym.shape)
    best, best_key, prev_key = None, None, None
    history: list[float] = []
    noise_floor = cfg.noise_fit_factor * Y.size * noise_var
    G_hat = None
    n_pass = 0
    for p in range(cfg.refine_passes):
        if p:
            sym, var = support_ls(Y, G_hat, sup, noise_var)
        r = resolve_scalar_batch(sym, code, var, max_iters=cfg.bp_iters, method=cfg.bp_method)
        Xf = spread_rows(qpsk_modulate(r.codeword), sup, L)
        G_new = _channel_fit(Y, Xf)
        if G_new is None:
            G_new = G_hat if G_hat is not None else G_tilde[:, rows] * r.gain[None, :]
        resid = float(np.linalg.norm(Y - G_new @ Xf))
        history.append(resid)
        n_pass = p + 1
        key = (int(r.parity_errors.sum()), resid)
        if best is None or key < best_key:
            best_key = key
            best = RefinedOutput(rows=rows, codewords=cws, G=G_new, bits=r.bits,
                                 parity_errors=r.parity_errors, gains=r.gain,
                                 rotations=r.rotation, X=Xf)
        G_hat = G_new
        # done once the checks pass and the fit leaves only noise behind
        if key[0] <= cfg.max_total_parity_errors and resid ** 2 <= noise_floor:
            break
        if prev_key is not None and key >= prev_key:
            break
        prev_key = key
    best.residuals = history
    best.passes = n_pass
    return best


# --------------------------------------------------------------------------
# collisions
# --------------------------------------------------------------------------


def resolve_collisions(det: DetectionResult, X_tilde, G_tilde, cb: Codebook, code: LdpcCode,
                       m_rep: int, noise_var: float, n_candidates: int = 4,
                       max_iters: int | None = None) -> DetectionResult:
    """Re-assign rows of over-subscribed codewords by decoding their best candidates.

    A codeword claimed by more than ``m_rep`` rows triggers a search for each
    of those rows over its ``n_candidates`` highest-scoring codewords; the row
    takes the candidate with the fewest parity errors, ties going to the larger
    match score and then the smaller codeword index.
    """
    matched = det.codewords[det.codewords >= 0]
    if matched.size == 0:
        return det
    cw_ids, counts = np.unique(matched, return_counts=True)
    contested = cw_ids[counts > m_rep]
    if contested.size == 0:
        return det
    codewords = det.codewords.copy()
    scores = det.scores.copy()
    atom_norm2 = np.sum(np.abs(G_tilde) ** 2, axis=0)
    for n in contested:
        for k in np.flatnonzero(det.codewords == n):
            Pk = det.P[k]
            cand = np.lexsort((np.arange(Pk.size), -Pk))[:n_candidates]
            if n not in cand:
                cand = np.r_[cand, n]
            sym = X_tilde[k][cb.columns[cand]]
            ok = np.any(sym != 0, axis=1)
            if not ok.any():
                continue
            res = resolve_scalar_batch(sym[ok], code, noise_var / max(atom_norm2[k], 1e-300),
                                       max_iters=max_iters)
            c_ok = cand[ok]
            pick = np.lexsort((c_ok, -Pk[c_ok], res.parity_errors))[0]
            codewords[k] = c_ok[pick]
            scores[k] = Pk[c_ok[pick]]
    return DetectionResult(codewords=codewords, scores=scores, P=det.P)


# --------------------------------------------------------------------------
# active-count estimation
# --------------------------------------------------------------------------


def estimate_ka_upper(Y, rho_min: float, S: int, M: int, L: int, Ktot: int | None = None,
                      noise_var: float = 1.0) -> int:
    """Power-based bound ``round((||Y||_F^2/M - L*noise_var) / (rho_min*S))``, clamped to ``[0, Ktot]``."""
    if not rho_min > 0:
        raise ConfigurationError(f"rho_min must be positive, got {rho_min}")
    energy = float(np.sum(np.abs(np.asarray(Y)) ** 2))
    raw = (energy / M - L * noise_var) / (rho_min * S)
    k = max(0, int(math.floor(raw + 0.5)))
    return min(k, Ktot) if Ktot is not None else k


def trim(Y, X_tilde, G_tilde, det: DetectionResult, cfg: KaEstimatorConfig, S: int, *,
         code: LdpcCode | None = None, codebook: Codebook | None = None, noise_var: float = 1.0):
    """Drop matched rows with a weak pattern match or little energy.

    A row goes when ``score/S < tau_match`` or its X~ energy is below
    ``tau_pow`` times the median energy of the matched rows.  When ``code``
    and ``codebook`` are given and ``cfg.rescue`` is on, a dropped row is kept
    after all if its symbols, re-fitted on the matched supports, decode with
    every parity check satisfied; rows with zero score or zero energy are
    never rescued.  Returns ``(K_est, trimmed_detection)``.
    """
    rows = det.matched_rows
    if rows.size == 0:
        return 0, det
    energy = np.sum(np.abs(X_tilde[rows]) ** 2, axis=1) * np.sum(np.abs(G_tilde[:, rows]) ** 2, axis=0)
    med = float(np.median(energy))
    drop = (det.scores[rows] / S < cfg.tau_match) | (energy < cfg.tau_pow * med)
    # rows without any pattern or energy are not users, whatever they decode to
    candidates = drop & (det.scores[rows] > 0) & (energy > 0)
    if candidates.any() and cfg.rescue and code is not None and codebook is not None:
        sup = codebook.columns[det.codewords[rows]]
        sym, var = support_ls(Y, G_tilde[:, rows], sup, noise_var)
        res = resolve_scalar_batch(sym[candidates], code, var[candidates])
        idx = np.flatnonzero(candidates)
        drop[idx[res.parity_errors == 0]] = False
    codewords = det.codewords.copy()
    scores = det.scores.copy()
    codewords[rows[drop]] = -1
    scores[rows[drop]] = 0
    out = DetectionResult(codewords=codewords, scores=scores, P=det.P)
    if out.n_matched == 0:
        warnings.warn("every detected row was trimmed", RuntimeWarning, stacklevel=2)
    return out.n_matched, out


# --------------------------------------------------------------------------
# pipeline
# --------------------------------------------------------------------------


@dataclass
class TrialResult:
    codewords: np.ndarray          # (K_est,) detected codewords (multiset)
    bits: np.ndarray               # (K_est, B) decoded messages
    parity_errors: np.ndarray      # (K_est,)
    K_est: int
    K_hat: int | None = None       # power-based bound when Ka was unknown
    atoms: int = 0
    n_atoms: int = 0
    G: np.ndarray | None = None
    dl_residuals: list[float] = field(default_factory=list)
    refine_residuals: list[float] = field(default_factory=list)
    rotations: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def empty(cls, B: int, **kw) -> TrialResult:
        return cls(codewords=np.zeros(0, dtype=np.int64), bits=np.zeros((0, B), dtype=np.uint8),
                   parity_errors=np.zeros(0, dtype=np.int64), K_est=0, **kw)


def atoms_for(cfg: ReceiverConfig, K: int, S: int, L: int, M: int) -> int:
    if cfg.atom_mode == "optimized":
        m = atom_budget(K, S, L)
    elif cfg.atom_mode == "upper":
        m = K
    else:
        m = int(cfg.atoms)
    return max(1, min(m, M, K))


def decode_detection(Y, X_tilde, G_tilde, det: DetectionResult, cb: Codebook, code: LdpcCode,
                     cfg: ReceiverConfig, noise_var: float) -> TrialResult:
    """Everything after the decomposition: collisions, refinement, packaging."""
    if cfg.crp:
        det = resolve_collisions(det, X_tilde, G_tilde, cb, code, cfg.m_rep, noise_var,
                                 cfg.crp_candidates, cfg.bp_iters)
    if det.n_matched == 0:
        return TrialResult.empty(code.B)
    ref = refine(Y, X_tilde, G_tilde, det, cb, code, cfg, noise_var)
    return TrialResult(codewords=ref.codewords, bits=ref.bits, parity_errors=ref.parity_errors,
                       K_est=len(ref.codewords), G=ref.G, refine_residuals=ref.residuals,
                       rotations=ref.rotations, diagnostics={"refine_passes": ref.passes})


def receive(Y, cb: Codebook, code: LdpcCode, cfg: ReceiverConfig, noise_var: float = 1.0,
            Ka: int | None = None, rng: np.random.Generator | None = None) -> TrialResult:
    """Recover the detected codewords and decoded messages from one received block.

    With ``Ka=None`` the dictionary size comes from the power bound of
    ``cfg.ka_estimator`` and weak matches are trimmed afterwards.
    """
    Y = np.asarray(Y, dtype=np.complex128)
    M, L = Y.shape
    if L != cb.L:
        raise ConfigurationError(f"Y has {L} columns, codebook L={cb.L}")
    if code.S != cb.S:
        raise ConfigurationError(f"code carries {code.S} symbols, codewords have weight {cb.S}")
    rng = np.random.default_rng() if rng is None else rng
    K_hat = None
    if Ka is None:
        est = cfg.ka_estimator
        if est is None:
            raise ConfigurationError("Ka unknown but no ka_estimator configured")
        K_hat = estimate_ka_upper(Y, est.rho_min, cb.S, M, L, cb.Ktot, noise_var)
        K_init = min(K_hat + est.margin, cb.Ktot) if K_hat else 0
    else:
        K_init = int(Ka)
    if K_init <= 0:
        return TrialResult.empty(code.B, K_hat=K_hat)

    m = atoms_for(cfg, K_hat if Ka is None else K_init, cb.S, L, M)
    m = min(m, K_init)
    tol = cfg.omp_tol if cfg.omp_tol is not None else math.sqrt(cfg.omp_tol_factor * M * noise_var)
    dl_cfg = DlConfig(atoms=m, n_atoms=K_init, max_iter=cfg.dl_max_iter, omp_tol=tol,
                      rel_tol=cfg.dl_rel_tol, reg=cfg.dl_reg, init=cfg.dl_init,
                      init_threshold=cfg.dl_init_threshold, noise_energy=M * noise_var,
                      escapes=cfg.dl_escapes)
    dec = dl_decompose(Y, dl_cfg, rng)
    omega = extract_pattern(dec.X, cfg.pattern_threshold, cfg.pattern_rel_threshold)
    det = detect_active(omega, cb, K_init, zero_column=cfg.zero_column and not cfg.crp)
    if Ka is None:
        _, det = trim(Y, dec.X, dec.D, det, cfg.ka_estimator, cb.S,
                      code=code, codebook=cb, noise_var=noise_var)
    out = decode_detection(Y, dec.X, dec.D, det, cb, code, cfg, noise_var)
    out.K_hat = K_hat
    out.atoms = m
    out.n_atoms = K_init
    out.dl_residuals = dec.residuals
    out.diagnostics.update(dl_iterations=len(dec.residuals) - 1, dl_escapes=dec.escapes,
                           singular_columns=dec.singular_columns,
                           reseeded_atoms=dec.reseeded_atoms)
    return out
