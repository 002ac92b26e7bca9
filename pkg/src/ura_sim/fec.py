"""LDPC code: construction, systematic encoding and belief-propagation decoding.

LLR sign convention (used everywhere in the package): a positive LLR favours
bit 0.  Hard decisions map ``llr > 0`` to 0 and ``llr <= 0`` to 1, so an
all-zero LLR vector carries no information and is never declared converged
for codes whose all-ones word violates a check (which is the case for every
code built by :func:`make_ldpc`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _accel
from .errors import ConfigurationError, LdpcConstructionError

# --------------------------------------------------------------------------
# GF(2) linear algebra
# --------------------------------------------------------------------------


def gf2_rref(A: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon form over GF(2); returns (R, pivot columns)."""
    R = (np.asarray(A) % 2).astype(np.uint8).copy()
    rows, cols = R.shape
    pivots: list[int] = []
    r = 0
    for c in range(cols):
        if r == rows:
            break
        hits = np.flatnonzero(R[r:, c])
        if hits.size == 0:
            continue
        piv = r + hits[0]
        if piv != r:
            R[[r, piv]] = R[[piv, r]]
        others = np.flatnonzero(R[:, c])
        others = others[others != r]
        R[others] ^= R[r]
        pivots.append(c)
        r += 1
    return R, pivots


def gf2_rank(A: np.ndarray) -> int:
    return len(gf2_rref(A)[1])


def gf2_inv(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A) % 2
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    R, piv = gf2_rref(np.hstack([A, np.eye(n, dtype=np.uint8)]))
    if piv[:n] != list(range(n)):
        raise np.linalg.LinAlgError("matrix is singular over GF(2)")
    return R[:, n:].copy()


# --------------------------------------------------------------------------
# Code container
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LdpcCode:
    """Binary LDPC code with a systematic encoder.

    ``H`` is ``p x (B+p)``; its last ``p`` columns are invertible over GF(2)
    so a codeword is ``[message, P @ message mod 2]``.
    """

    H: np.ndarray
    B: int
    max_iters: int = 50
    llr_clamp: float = 30.0
    P: np.ndarray = field(init=False, repr=False)
    check_ptr: np.ndarray = field(init=False, repr=False)
    edge_var: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        H = (np.asarray(self.H) % 2).astype(np.uint8)
        p, n = H.shape
        if n - p != self.B:
            raise ConfigurationError(f"H is {p}x{n} but B={self.B}")
        Q = H[:, self.B:]
        try:
            Qinv = gf2_inv(Q)
        except np.linalg.LinAlgError:
            raise ConfigurationError("parity part of H is singular; not systematic") from None
        P = (Qinv.astype(np.int64) @ H[:, : self.B].astype(np.int64)) % 2
        rows, cols = np.nonzero(H)
        ptr = np.zeros(p + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=p), out=ptr[1:])
        for name, val in (("H", H), ("P", P.astype(np.uint8)), ("check_ptr", ptr),
                          ("edge_var", cols.astype(np.int64))):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def p(self) -> int:
        return self.H.shape[0]

    @property
    def n(self) -> int:
        return self.H.shape[1]

    @property
    def rate(self) -> float:
        return self.B / self.n

    @property
    def S(self) -> int:
        """QPSK symbols per codeword."""
        return self.n // 2

    def column_weights(self) -> np.ndarray:
        return self.H.sum(axis=0).astype(np.int64)

    def count_4cycles(self) -> int:
        return _count_4cycles(self.H)


def _count_4cycles(H: np.ndarray) -> int:
    overlap = H.astype(np.int64).T @ H.astype(np.int64)
    iu = np.triu_indices(H.shape[1], 1)
    k = overlap[iu]
    return int((k * (k - 1) // 2).sum())


def _row_weights(n_edges: int, p: int, n: int, rng: np.random.Generator) -> np.ndarray:
    w = np.full(p, n_edges // p, dtype=np.int64)
    w[: n_edges % p] += 1
    # split even-weight rows into (w-1, w+1) pairs; odd rows keep the all-ones
    # word out of the code
    evens = np.flatnonzero(w % 2 == 0)
    for a, b in zip(evens[0::2], evens[1::2]):
        if w[b] + 1 <= n and w[a] - 1 >= 2:
            w[a] -= 1
            w[b] += 1
    return rng.permutation(w)


def _draw_H(n: int, p: int, dv: int, row_w: np.ndarray, rng: np.random.Generator):
    """Greedy ``p x n`` incidence with column weight ``dv`` that avoids 4-cycles when it can."""
    H = np.zeros((p, n), dtype=np.uint8)
    cap = row_w.copy()
    paired = np.zeros((p, p), dtype=bool)
    for v in range(n):
        chosen: list[int] = []
        for _ in range(dv):
            ok = cap > 0
            ok[chosen] = False
            free = ok.copy()
            for c in chosen:
                free &= ~paired[c]
            cand = np.flatnonzero(free) if free.any() else np.flatnonzero(ok)
            if cand.size == 0:
                return None
            wts = cap[cand].astype(float)
            chosen.append(int(rng.choice(cand, p=wts / wts.sum())))
        for i, a in enumerate(chosen):
            for b in chosen[i + 1:]:
                paired[a, b] = paired[b, a] = True
        cap[chosen] -= 1
        H[chosen, v] = 1
    return H


def _mirror(H: np.ndarray) -> np.ndarray:
    """Swap the two bits of every QPSK symbol (columns 2i <-> 2i+1)."""
    idx = np.arange(H.shape[1]).reshape(-1, 2)[:, ::-1].ravel()
    return H[:, idx]


def _symmetric_H(S: int, p: int, dv: int, rng: np.random.Generator):
    """Parity checks closed under the within-symbol bit swap.

    ``p/2`` base checks are drawn on symbols (each symbol joins ``dv`` base
    checks, one of its two bits per check); every base check is stacked with
    its mirror image.
    """
    half = p // 2
    w = _row_weights(S * dv, half, S, rng)
    base_sym = _draw_H(S, half, dv, w, rng)
    if base_sym is None:
        return None
    rows, syms = np.nonzero(base_sym)
    base = np.zeros((half, 2 * S), dtype=np.uint8)
    base[rows, 2 * syms + rng.integers(0, 2, size=rows.size)] = 1
    return np.concatenate([base, _mirror(base)], axis=0)


def _pair_pivots(H: np.ndarray) -> list[int] | None:
    """Whole symbols whose bit columns form an invertible ``p x p`` block, or None."""
    p, n = H.shape
    picked: list[int] = []
    rank = 0
    for s in range(n // 2):
        cols = [2 * c + b for c in picked + [s] for b in (0, 1)]
        r = gf2_rank(H[:, cols])
        if r == rank + 2:
            picked.append(s)
            rank = r
            if rank == p:
                return picked
    return None


def make_ldpc(B: int, rate: float, rng: np.random.Generator, dv: int = 3,
              max_iters: int = 50, llr_clamp: float = 30.0, max_tries: int = 200) -> LdpcCode:
    """Random LDPC code with column weight ``dv`` and odd check degrees.

    The checks come in mirror pairs under the swap of the two bits of each
    QPSK symbol, and every check has odd weight.  A quarter-turn of a QPSK
    codeword swaps the bits of each symbol and complements one of them, a
    half-turn complements everything; with this structure none of these
    images of a codeword is a codeword.  Checks are filled greedily while
    avoiding 4-cycles; among the full-rank draws the one with the fewest
    4-cycles is kept.  Symbols (bit pairs) are then reordered so the parity
    part is invertible and the code is systematic.
    """
    if B <= 0 or B % 2:
        raise ConfigurationError(f"B={B} must be a positive even number")
    if not 0.0 < rate < 1.0:
        raise ConfigurationError(f"rate={rate} must lie in (0, 1)")
    p_f = B * (1.0 - rate) / rate
    p = int(round(p_f))
    if abs(p - p_f) > 1e-9 or p < 2 or p % 2:
        raise ConfigurationError(f"B*(1-rate)/rate = {p_f} must be a positive even integer")
    n = B + p
    S = n // 2

    best, best_cycles = None, None
    half_dv = min(dv, max(1, p // 2 - 1))
    for _ in range(max_tries):
        H = _symmetric_H(S, p, half_dv, rng)
        if H is None or not _breaks_rotations(H):
            continue
        piv = _pair_pivots(H)
        if piv is None:
            continue
        cyc = _count_4cycles(H)
        if best is None or cyc < best_cycles:
            rest = [s for s in range(S) if s not in set(piv)]
            order = [2 * s + b for s in rest + piv for b in (0, 1)]
            best, best_cycles = H[:, order], cyc
            if cyc == 0:
                break
    if best is None:
        # too few checks for the mirrored layout: plain draw, pivots moved last
        dv = min(dv, p)
        for _ in range(max_tries):
            H = _draw_H(n, p, dv, _row_weights(n * dv, p, n, rng), rng)
            if H is None:
                continue
            R, piv = gf2_rref(H)
            if len(piv) < p:
                continue
            cyc = _count_4cycles(H)
            if best is None or cyc < best_cycles:
                nonpiv = [c for c in range(n) if c not in set(piv)]
                best, best_cycles = H[:, nonpiv + piv], cyc
                if cyc == 0:
                    break
    if best is None:
        raise LdpcConstructionError(f"no full-rank {p}x{n} parity-check matrix in {max_tries} draws")
    return LdpcCode(H=best, B=B, max_iters=max_iters, llr_clamp=llr_clamp)


def _breaks_rotations(H: np.ndarray) -> bool:
    # a mirror-closed code is hit by a rotation image only if the offset word
    # (ones on even bits, odd bits, or all bits) is itself a codeword
    n = H.shape[1]
    even = np.zeros(n, dtype=np.int64)
    even[0::2] = 1
    offsets = (even, 1 - even, np.ones(n, dtype=np.int64))
    return all(np.any((H.astype(np.int64) @ a) % 2) for a in offsets)


def load_parity_check(path, max_iters: int = 50, llr_clamp: float = 30.0) -> LdpcCode:
    """Read ``row col`` pairs (0-based, one edge per line, ``#`` comments).

    The code dimension is ``n - rank(H)``; redundant rows are dropped and
    columns reordered (pivots last) if the trailing block is not invertible.
    """
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ConfigurationError(f"{path}:{lineno}: expected 'row col', got {line!r}")
        entries.append((int(parts[0]), int(parts[1])))
    if not entries:
        raise ConfigurationError(f"{path}: no entries")
    rc = np.array(entries)
    H = np.zeros((rc[:, 0].max() + 1, rc[:, 1].max() + 1), dtype=np.uint8)
    H[rc[:, 0], rc[:, 1]] ^= 1
    R, piv = gf2_rref(H)
    H = R[: len(piv)] if len(piv) < H.shape[0] else H
    n = H.shape[1]
    B = n - len(piv)
    try:
        return LdpcCode(H=H, B=B, max_iters=max_iters, llr_clamp=llr_clamp)
    except ConfigurationError:
        nonpiv = [c for c in range(n) if c not in set(piv)]
        return LdpcCode(H=H[:, nonpiv + piv], B=B, max_iters=max_iters, llr_clamp=llr_clamp)


def save_parity_check(code: LdpcCode, path) -> None:
    rows, cols = np.nonzero(code.H)
    lines = [f"# LDPC parity-check matrix {code.p}x{code.n}, B={code.B}"]
    lines += [f"{r} {c}" for r, c in zip(rows, cols)]
    Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# Encoding and syndrome
# --------------------------------------------------------------------------


def ldpc_encode(code: LdpcCode, bits) -> np.ndarray:
    """Systematic codeword(s) ``[bits, parity]``; accepts ``(B,)`` or ``(N, B)``."""
    bits = np.asarray(bits)
    if bits.shape[-1] != code.B:
        raise ConfigurationError(f"message length {bits.shape[-1]} != B={code.B}")
    msg = bits.astype(np.uint8) & 1
    parity = (msg.astype(np.int64) @ code.P.T.astype(np.int64)) % 2
    return np.concatenate([msg, parity.astype(np.uint8)], axis=-1)


def parity_error_count(code: LdpcCode, bits):
    """Number of unsatisfied checks; ``int`` for one word, array for a batch."""
    bits = np.asarray(bits)
    if bits.shape[-1] != code.n:
        raise ConfigurationError(f"word length {bits.shape[-1]} != n={code.n}")
    synd = (bits.astype(np.int64) @ code.H.T.astype(np.int64)) % 2
    out = synd.sum(axis=-1)
    return int(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# Belief propagation
# --------------------------------------------------------------------------


@dataclass
class BpResult:
    bits: np.ndarray           # (B,) or (N, B) decoded message bits
    parity_errors: np.ndarray  # unsatisfied checks of the final hard decision
    converged: np.ndarray
    iterations: np.ndarray
    codeword: np.ndarray       # (n,) / (N, n) hard decisions on all coded bits
    posterior: np.ndarray      # final posterior LLRs


_ATANH_LIM = 1.0 - 1e-15


@_accel.njit
def _bp_kernel_nb(llrs, check_ptr, edge_var, max_iters, clamp, minsum,
                  post_out, iters_out, synd_out):
    N, n = llrs.shape
    p = check_ptr.shape[0] - 1
    E = edge_var.shape[0]
    dmax = 0
    for c in range(p):
        d = check_ptr[c + 1] - check_ptr[c]
        if d > dmax:
            dmax = d
    v2c = np.empty(E)
    c2v = np.zeros(E)
    fwd = np.empty(dmax + 1)
    bwd = np.empty(dmax + 1)
    vals = np.empty(dmax)
    post = np.empty(n)
    for b in range(N):
        for i in range(n):
            post[i] = llrs[b, i]
        for e in range(E):
            v2c[e] = llrs[b, edge_var[e]]
        iters = 0
        synd = 0
        for c in range(p):
            par = 0
            for e in range(check_ptr[c], check_ptr[c + 1]):
                if post[edge_var[e]] <= 0.0:
                    par ^= 1
            synd += par
        it = 0
        while it < max_iters:
            it += 1
            for c in range(p):
                s = check_ptr[c]
                d = check_ptr[c + 1] - s
                if minsum:
                    for j in range(d):
                        vals[j] = v2c[s + j]
                    # exclusive sign product and exclusive minimum magnitude
                    fwd[0] = 1.0
                    bwd[d] = 1.0
                    for j in range(d):
                        fwd[j + 1] = fwd[j] * (1.0 if vals[j] >= 0.0 else -1.0)
                    for j in range(d - 1, -1, -1):
                        bwd[j] = bwd[j + 1] * (1.0 if vals[j] >= 0.0 else -1.0)
                    for j in range(d):
                        m = np.inf
                        for k in range(d):
                            if k != j:
                                a = abs(vals[k])
                                if a < m:
                                    m = a
                        c2v[s + j] = fwd[j] * bwd[j + 1] * m
                else:
                    for j in range(d):
                        # tanh(v/2) through one exp
                        ex = np.exp(-abs(v2c[s + j]))
                        t = (1.0 - ex) / (1.0 + ex)
                        vals[j] = t if v2c[s + j] >= 0.0 else -t
                    fwd[0] = 1.0
                    for j in range(d):
                        fwd[j + 1] = fwd[j] * vals[j]
                    bwd[d] = 1.0
                    for j in range(d - 1, -1, -1):
                        bwd[j] = bwd[j + 1] * vals[j]
                    for j in range(d):
                        x = fwd[j] * bwd[j + 1]
                        if x > _ATANH_LIM:
                            x = _ATANH_LIM
                        elif x < -_ATANH_LIM:
                            x = -_ATANH_LIM
                        v = np.log((1.0 + x) / (1.0 - x))
                        if v > clamp:
                            v = clamp
                        elif v < -clamp:
                            v = -clamp
                        c2v[s + j] = v
            for i in range(n):
                post[i] = llrs[b, i]
            for e in range(E):
                post[edge_var[e]] += c2v[e]
            synd = 0
            for c in range(p):
                par = 0
                for e in range(check_ptr[c], check_ptr[c + 1]):
                    if post[edge_var[e]] <= 0.0:
                        par ^= 1
                synd += par
            iters = it
            if synd == 0:
                break
            for e in range(E):
                v = post[edge_var[e]] - c2v[e]
                if v > clamp:
                    v = clamp
                elif v < -clamp:
                    v = -clamp
                v2c[e] = v
        for i in range(n):
            post_out[b, i] = post[i]
        iters_out[b] = iters
        synd_out[b] = synd


def _bp_numpy(code: LdpcCode, llrs: np.ndarray, max_iters: int, clamp: float, minsum: bool):
    N, n = llrs.shape
    p = code.p
    ptr, ev = code.check_ptr, code.edge_var
    E = ev.size
    deg = np.diff(ptr)
    dmax = int(deg.max())
    # padded check -> edge table; pad slots point at a dummy edge E
    slot = np.arange(dmax)[None, :]
    table = np.where(slot < deg[:, None], ptr[:-1, None] + slot, E)
    real = table < E
    Hf = code.H.T.astype(np.float64)
    incidence = np.zeros((E, n))
    incidence[np.arange(E), ev] = 1.0

    post = llrs.copy()
    iters = np.zeros(N, dtype=np.int64)
    synd = ((post <= 0).astype(np.float64) @ Hf % 2).sum(axis=1).astype(np.int64)
    active = np.arange(N) if max_iters > 0 else np.zeros(0, dtype=np.int64)
    v2c = np.zeros((N, E + 1))
    v2c[:, :E] = llrs[:, ev]
    c2v = np.zeros((N, E))
    it = 0
    while active.size and it < max_iters:
        it += 1
        msg = v2c[active][:, table]  # (A, p, dmax)
        if minsum:
            sgn = np.where(msg >= 0.0, 1.0, -1.0)
            sgn[:, ~real] = 1.0
            mag = np.abs(msg)
            mag[:, ~real] = np.inf
            fwd = np.cumprod(np.concatenate([np.ones_like(sgn[..., :1]), sgn[..., :-1]], axis=-1), axis=-1)
            bwd = np.cumprod(np.concatenate([np.ones_like(sgn[..., :1]), sgn[..., :0:-1]], axis=-1), axis=-1)[..., ::-1]
            order = np.sort(mag, axis=-1)
            amin = np.argmin(mag, axis=-1)[..., None]
            excl = np.where(slot[None] == amin, order[..., 1:2], order[..., 0:1])
            out = fwd * bwd * excl
        else:
            t = np.tanh(0.5 * msg)
            t[:, ~real] = 1.0
            fwd = np.cumprod(np.concatenate([np.ones_like(t[..., :1]), t[..., :-1]], axis=-1), axis=-1)
            bwd = np.cumprod(np.concatenate([np.ones_like(t[..., :1]), t[..., :0:-1]], axis=-1), axis=-1)[..., ::-1]
            x = np.clip(fwd * bwd, -_ATANH_LIM, _ATANH_LIM)
            out = np.clip(2.0 * np.arctanh(x), -clamp, clamp)
        cv = np.zeros((active.size, E + 1))
        cv[:, table[real]] = out[:, real]
        c2v[active] = cv[:, :E]
        post_a = llrs[active] + c2v[active] @ incidence
        post[active] = post_a
        iters[active] = it
        s_a = ((post_a <= 0).astype(np.float64) @ Hf % 2).sum(axis=1).astype(np.int64)
        synd[active] = s_a
        still = s_a > 0
        upd = active[still]
        v2c[upd, :E] = np.clip(post_a[still][:, ev] - c2v[upd], -clamp, clamp)
        active = upd
    return post, iters, synd


def ldpc_decode_bp(code: LdpcCode, llrs, max_iters: int | None = None,
                   method: str = "sum-product") -> BpResult:
    """Sum-product (tanh rule) or min-sum BP with early exit on a zero syndrome.

    Non-convergence is reported through ``converged``/``parity_errors``; the
    best-effort hard decisions are still returned.
    """
    llrs = np.asarray(llrs, dtype=np.float64)
    single = llrs.ndim == 1
    L2 = np.atleast_2d(llrs)
    if L2.shape[-1] != code.n:
        raise ConfigurationError(f"LLR length {L2.shape[-1]} != n={code.n}")
    if method not in ("sum-product", "min-sum"):
        raise ValueError(f"unknown BP method {method!r}")
    iters_cap = code.max_iters if max_iters is None else int(max_iters)
    clamp = code.llr_clamp
    L2 = np.clip(np.nan_to_num(L2, nan=0.0), -clamp, clamp)
    minsum = method == "min-sum"
    if _accel.use_numba():
        N = L2.shape[0]
        post = np.empty_like(L2)
        iters = np.empty(N, dtype=np.int64)
        synd = np.empty(N, dtype=np.int64)
        _bp_kernel_nb(np.ascontiguousarray(L2), code.check_ptr, code.edge_var, iters_cap,
                      float(clamp), minsum, post, iters, synd)
    else:
        post, iters, synd = _bp_numpy(code, L2, iters_cap, clamp, minsum)
    hard = (post <= 0).astype(np.uint8)
    res = BpResult(bits=hard[:, : code.B], parity_errors=synd, converged=synd == 0,
                   iterations=iters, codeword=hard, posterior=post)
    if single:
        res = BpResult(bits=res.bits[0], parity_errors=int(synd[0]), converged=bool(synd[0] == 0),
                       iterations=int(iters[0]), codeword=hard[0], posterior=post[0])
    return res
