"""Per-user error probabilities, symbol error rate and Monte Carlo summaries.

Detection is scored with multiset semantics: a codeword chosen by two users
must be detected twice to count both.  A user counts as received when some
detected output carries its codeword and exactly its B message bits.  Users
that share a codeword with another user are scored at codeword level only,
since their messages cannot be told apart by pattern.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class TrialMetrics:
    Ka: int
    n_md: int
    n_fa: int
    L_size: int                 # number of messages put out by the receiver
    symbol_errors: int
    symbols_compared: int
    detections: int             # users whose codeword was detected
    ka_known: bool
    K_est: int | None = None
    runtime_ms: float | None = None

    def __post_init__(self):
        for name in ("Ka", "n_md", "n_fa", "L_size", "symbol_errors", "symbols_compared", "detections"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.n_md > self.Ka:
            raise ValueError(f"n_md={self.n_md} exceeds Ka={self.Ka}")
        if self.L_size != self.n_fa + self.Ka - self.n_md:
            raise ValueError("|L| = n_fa + Ka - n_md violated")

    @property
    def p_md(self) -> float:
        return self.n_md / self.Ka if self.Ka else 0.0

    @property
    def p_fa(self) -> float:
        return self.n_fa / self.L_size if self.L_size else 0.0

    @property
    def p_e(self) -> float | None:
        return self.p_md if self.ka_known else None

    @property
    def ser(self) -> float | None:
        return self.symbol_errors / self.symbols_compared if self.symbols_compared else None

    def to_dict(self) -> dict:
        return asdict(self)


def _multiset_hits(truth, detected) -> int:
    t, d = Counter(truth), Counter(detected)
    return sum(min(n, d[k]) for k, n in t.items())


def pupe(truth, detected, Ka: int, ka_known: bool) -> tuple[float, float, float | None]:
    """``(p_md, p_fa, p_e)`` of one trial; items of ``truth``/``detected`` are hashable.

    ``p_e`` is ``None`` unless ``ka_known``, in which case ``n_fa == n_md``
    is asserted.
    """
    truth, detected = list(truth), list(detected)
    if Ka != len(truth):
        raise ValueError(f"Ka={Ka} but {len(truth)} true items")
    hits = _multiset_hits(truth, detected)
    n_md, n_fa = Ka - hits, len(detected) - hits
    size = n_fa + Ka - n_md
    assert size == len(detected)
    if ka_known:
        assert n_fa == n_md, f"Ka known but n_fa={n_fa} != n_md={n_md}"
    p_md = n_md / Ka if Ka else 0.0
    p_fa = n_fa / size if size else 0.0
    return p_md, p_fa, (p_md if ka_known else None)


def symbol_errors(a, b) -> int:
    """Number of QPSK symbols (consecutive bit pairs) where ``a`` and ``b`` differ."""
    a, b = np.asarray(a), np.asarray(b)
    diff = (a != b).reshape(a.shape[:-1] + (-1, 2))
    return int(np.any(diff, axis=-1).sum())


def ser(truth_bits, decoded_bits, matched_pairs) -> float | None:
    """Symbol error rate over ``(truth_row, decoded_row)`` pairs; ``None`` if there are none."""
    errs = n = 0
    for i, j in matched_pairs:
        t = np.asarray(truth_bits[i])
        errs += symbol_errors(t, decoded_bits[j])
        n += t.shape[-1] // 2
    return errs / n if n else None


def _pair_users(truth_rows, det_rows, truth_sym, det_sym):
    """Assign detected rows to true users of one codeword, fewest symbol errors first."""
    cost = [[symbol_errors(truth_sym[i], det_sym[j]) for j in det_rows] for i in truth_rows]
    pairs = []
    used_t, used_d = set(), set()
    order = sorted((cost[a][b], a, b) for a in range(len(truth_rows)) for b in range(len(det_rows)))
    for _, a, b in order:
        if a in used_t or b in used_d:
            continue
        used_t.add(a)
        used_d.add(b)
        pairs.append((truth_rows[a], det_rows[b]))
    return pairs


def trial_metrics(truth_codewords, truth_bits, det_codewords, det_bits, *, ka_known: bool,
                  det_parity_errors=None, truth_coded=None, det_coded=None,
                  K_est: int | None = None, runtime_ms: float | None = None) -> TrialMetrics:
    """Score one trial.

    ``truth_coded``/``det_coded`` are the coded bit rows used for SER (the
    message bits are used when omitted).  Symbols of a user enter SER when
    its codeword was detected; users sharing a codeword enter only if their
    decode has no parity errors.
    """
    t_cw = np.asarray(truth_codewords, dtype=np.int64)
    d_cw = np.asarray(det_codewords, dtype=np.int64)
    t_bits = np.asarray(truth_bits)
    d_bits = np.asarray(det_bits)
    Ka = len(t_cw)
    t_sym = t_bits if truth_coded is None else np.asarray(truth_coded)
    d_sym = d_bits if det_coded is None else np.asarray(det_coded)
    perr = np.zeros(len(d_cw), dtype=np.int64) if det_parity_errors is None else np.asarray(det_parity_errors)

    t_mult = Counter(t_cw.tolist())
    by_t: dict[int, list[int]] = {}
    by_d: dict[int, list[int]] = {}
    for i, c in enumerate(t_cw.tolist()):
        by_t.setdefault(c, []).append(i)
    for j, c in enumerate(d_cw.tolist()):
        by_d.setdefault(c, []).append(j)

    hits = detections = 0
    pairs = []
    for c, rows in by_t.items():
        drows = by_d.get(c, [])
        detections += min(len(rows), len(drows))
        if t_mult[c] > 1:
            hits += min(len(rows), len(drows))
            pairs += [(i, j) for i, j in _pair_users(rows, drows, t_sym, d_sym) if perr[j] == 0]
        else:
            hits += _multiset_hits([t_bits[i].tobytes() for i in rows],
                                   [d_bits[j].tobytes() for j in drows])
            pairs += _pair_users(rows, drows, t_sym, d_sym)

    errs = sum(symbol_errors(t_sym[i], d_sym[j]) for i, j in pairs)
    n_sym = len(pairs) * (t_sym.shape[-1] // 2 if t_sym.ndim == 2 else 0)
    n_md, n_fa = Ka - hits, len(d_cw) - hits
    if ka_known and n_md != n_fa:
        raise AssertionError(f"Ka known but receiver put out {len(d_cw)} messages for Ka={Ka}")
    return TrialMetrics(Ka=Ka, n_md=n_md, n_fa=n_fa, L_size=len(d_cw), symbol_errors=errs,
                        symbols_compared=n_sym, detections=detections, ka_known=ka_known,
                        K_est=K_est, runtime_ms=runtime_ms)


@dataclass(frozen=True)
class Summary:
    trials: int
    p_md: float
    p_md_stderr: float | None
    p_fa: float
    p_fa_stderr: float | None
    p_e: float | None
    p_e_stderr: float | None
    ser: float | None
    ser_stderr: float | None
    detection_ratio: float
    k_est_mean: float | None
    runtime_ms_mean: float | None
    failed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _mean_se(values) -> tuple[float | None, float | None]:
    v = np.asarray([x for x in values if x is not None], dtype=np.float64)
    if v.size == 0:
        return None, None
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else None
    return float(v.mean()), se


def aggregate(trials, failed: int = 0) -> Summary:
    """Monte Carlo means of the per-trial rates with standard errors (ddof=1)."""
    trials = list(trials)
    if not trials:
        raise ValueError("aggregate needs at least one trial")
    p_md, p_md_se = _mean_se(t.p_md for t in trials)
    p_fa, p_fa_se = _mean_se(t.p_fa for t in trials)
    p_e, p_e_se = _mean_se(t.p_e for t in trials)
    s, s_se = _mean_se(t.ser for t in trials)
    k, _ = _mean_se(t.K_est for t in trials)
    rt, _ = _mean_se(t.runtime_ms for t in trials)
    n_ka = sum(t.Ka for t in trials)
    det = sum(t.detections for t in trials) / n_ka if n_ka else 1.0
    return Summary(trials=len(trials), p_md=p_md, p_md_stderr=p_md_se, p_fa=p_fa, p_fa_stderr=p_fa_se,
                   p_e=p_e, p_e_stderr=p_e_se, ser=s, ser_stderr=s_se, detection_ratio=det,
                   k_est_mean=k, runtime_ms_mean=rt, failed=failed)
