"""Dictionary learning: OMP sparse coding, MOD dictionary update, alternation.

OMP selects atoms by the largest ``|<residual, d_k>| / ||d_k||`` and re-solves
the least-squares problem on the whole selected support at every step (a
fresh Cholesky factorisation of the support Gram matrix).  Correlations are
updated through the Gram matrix, ``D^H r = D^H y - D^H D_S x``, so one step
costs ``O(K j + j^3 + M j)`` after a single ``D^H Y`` product.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .errors import ConfigurationError

FLAG_SINGULAR = 1

_PIVOT_RTOL = 1e-12


@dataclass(frozen=True)
class DlConfig:
    """Settings of one decomposition ``Y ~ D X``.

    ``atoms`` caps the nonzeros per column of X (the atom budget m);
    ``omp_tol`` is the per-column residual norm at which OMP stops early;
    ``rel_tol`` stops the alternation once the relative residual improvement
    falls below it; ``reg`` is the MOD ridge term (``None`` picks
    ``1e-8 * trace(X X^H) / n_atoms``); ``escapes`` bounds the re-seeding
    attempts made after the alternation stalls.
    """

    atoms: int
    n_atoms: int
    max_iter: int = 30
    omp_tol: float = 0.0
    rel_tol: float = 1e-4
    reg: float | None = None
    init: str = "random"
    init_threshold: float = 0.8
    noise_energy: float = 0.0
    escapes: int = 3

    def __post_init__(self):
        if self.atoms < 1:
            raise ConfigurationError(f"atom budget must be >= 1, got {self.atoms}")
        if self.n_atoms < self.atoms:
            raise ConfigurationError(f"n_atoms={self.n_atoms} < atom budget {self.atoms}")
        if self.omp_tol < 0 or self.rel_tol < 0:
            raise ConfigurationError("tolerances must be non-negative")
        if self.escapes < 0:
            raise ConfigurationError("escapes must be >= 0")
        if self.init not in ("random", "data"):
            raise ConfigurationError(f"unknown dictionary init {self.init!r}")


@dataclass
class DecompositionResult:
    D: np.ndarray                 # (M, K) unit-norm atoms
    X: np.ndarray                 # (K, L) column-sparse coefficients
    residuals: list[float] = field(default_factory=list)
    singular_columns: int = 0
    skipped_updates: int = 0
    reseeded_atoms: int = 0
    escapes: int = 0

    @property
    def residual(self) -> float:
        return self.residuals[-1] if self.residuals else float("nan")


# --------------------------------------------------------------------------
# OMP kernels
# --------------------------------------------------------------------------


@_accel.njit
def _omp_kernel_nb(D, gram, inv_norm, DhY, Y, m, tol, X, flags):
    M, K = D.shape
    L = Y.shape[1]
    sel = np.empty(m, dtype=np.int64)
    used = np.zeros(K, dtype=np.bool_)
    A = np.empty((m, m), dtype=np.complex128)
    Lc = np.empty((m, m), dtype=np.complex128)
    z = np.empty(m, dtype=np.complex128)
    x = np.empty(m, dtype=np.complex128)
    xs = np.zeros(m, dtype=np.complex128)
    r = np.empty(M, dtype=np.complex128)
    for col in range(L):
        rn2 = 0.0
        for i in range(M):
            v = Y[i, col]
            rn2 += v.real * v.real + v.imag * v.imag
        if math.sqrt(rn2) <= tol:
            continue
        nsel = 0
        for j in range(m):
            # correlation of the residual with every unused atom
            best = -1
            bestv = -1.0
            for k in range(K):
                if used[k]:
                    continue
                c = DhY[k, col]
                for t in range(nsel):
                    c -= gram[k, sel[t]] * xs[t]
                v = abs(c) * inv_norm[k]
                if v > bestv:
                    bestv = v
                    best = k
            if best < 0:
                break
            sel[nsel] = best
            used[best] = True
            nsel += 1
            # least-squares re-fit on the whole support
            for a in range(nsel):
                for b in range(nsel):
                    A[a, b] = gram[sel[a], sel[b]]
            ok = True
            for a in range(nsel):
                s = A[a, a].real
                for t in range(a):
                    s -= Lc[a, t].real * Lc[a, t].real + Lc[a, t].imag * Lc[a, t].imag
                if s <= _PIVOT_RTOL * A[a, a].real:
                    ok = False
                    break
                d = math.sqrt(s)
                Lc[a, a] = d
                for b in range(a + 1, nsel):
                    s2 = A[b, a]
                    for t in range(a):
                        s2 -= Lc[b, t] * Lc[a, t].conjugate()
                    Lc[b, a] = s2 / d
            if not ok:
                nsel -= 1
                used[best] = False
                flags[col] |= 1
                break
            for a in range(nsel):
                s2 = DhY[sel[a], col]
                for t in range(a):
                    s2 -= Lc[a, t] * z[t]
                z[a] = s2 / Lc[a, a].real
            for a in range(nsel - 1, -1, -1):
                s2 = z[a]
                for t in range(a + 1, nsel):
                    s2 -= Lc[t, a].conjugate() * x[t]
                x[a] = s2 / Lc[a, a].real
            for a in range(nsel):
                xs[a] = x[a]
            rn2 = 0.0
            for i in range(M):
                v = Y[i, col]
                for t in range(nsel):
                    v -= D[i, sel[t]] * xs[t]
                r[i] = v
                rn2 += v.real * v.real + v.imag * v.imag
            if math.sqrt(rn2) <= tol:
                break
        for t in range(nsel):
            X[sel[t], col] = xs[t]
            used[sel[t]] = False


def _omp_numpy(D, gram, inv_norm, DhY, Y, m, tol, X, flags):
    M, K = D.shape
    L = Y.shape[1]
    active = np.flatnonzero(np.linalg.norm(Y, axis=0) > tol)
    sel = np.zeros((L, m), dtype=np.int64)
    nsel = np.zeros(L, dtype=np.int64)
    coef = np.zeros((L, m), dtype=np.complex128)
    for j in range(m):
        if active.size == 0:
            break
        s_act = sel[active, :j]
        corr = DhY[:, active].T.copy()  # (A, K)
        if j:
            corr -= np.einsum("akj,aj->ak", gram[:, s_act].transpose(1, 0, 2), coef[active, :j])
        score = np.abs(corr) * inv_norm[None, :]
        if j:
            np.put_along_axis(score, s_act, -1.0, axis=1)
        best = np.argmax(score, axis=1)
        s_new = np.concatenate([s_act, best[:, None]], axis=1)
        A = gram[s_new[:, :, None], s_new[:, None, :]]
        b = np.take_along_axis(DhY[:, active].T, s_new, axis=1)
        piv_ok = np.ones(active.size, dtype=bool)
        try:
            np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            for i in range(active.size):
                try:
                    np.linalg.cholesky(A[i])
                except np.linalg.LinAlgError:
                    piv_ok[i] = False
        # relative pivot check, mirroring the loop kernel
        if piv_ok.any():
            Lc = np.linalg.cholesky(A[piv_ok])
            diag = np.real(np.diagonal(Lc, axis1=1, axis2=2))
            adiag = np.real(np.diagonal(A[piv_ok], axis1=1, axis2=2))
            bad = np.any(diag ** 2 <= _PIVOT_RTOL * adiag, axis=1)
            idx = np.flatnonzero(piv_ok)
            piv_ok[idx[bad]] = False
        dropped = active[~piv_ok]
        flags[dropped] |= FLAG_SINGULAR
        active = active[piv_ok]
        if active.size == 0:
            break
        s_new, A, b = s_new[piv_ok], A[piv_ok], b[piv_ok]
        x = np.linalg.solve(A, b[..., None])[..., 0]
        sel[active, : j + 1] = s_new
        coef[active, : j + 1] = x
        nsel[active] = j + 1
        R = Y[:, active] - np.einsum("mak,ak->ma", D[:, s_new], x)
        active = active[np.linalg.norm(R, axis=0) > tol]
    for col in np.flatnonzero(nsel):
        X[sel[col, : nsel[col]], col] = coef[col, : nsel[col]]


def sparse_code(D, Y, m: int, tol: float = 0.0, return_flags: bool = False):
    """Column-wise OMP: each column of ``Y`` coded independently with at most ``m`` atoms."""
    D = np.asarray(D, dtype=np.complex128)
    Y = np.asarray(Y, dtype=np.complex128)
    M, K = D.shape
    if Y.shape[0] != M:
        raise ConfigurationError(f"Y has {Y.shape[0]} rows, dictionary has {M}")
    if not 1 <= m <= min(M, K):
        raise ConfigurationError(f"atom budget m={m} must lie in [1, min(M, K)={min(M, K)}]")
    norms = np.linalg.norm(D, axis=0)
    if np.any(norms == 0):
        raise ConfigurationError("dictionary has an all-zero column")
    gram = D.conj().T @ D
    DhY = D.conj().T @ Y
    X = np.zeros((K, Y.shape[1]), dtype=np.complex128)
    flags = np.zeros(Y.shape[1], dtype=np.int64)
    kernel = _omp_kernel_nb if _accel.use_numba() else _omp_numpy
    kernel(D, np.ascontiguousarray(gram), 1.0 / norms, np.ascontiguousarray(DhY),
           np.ascontiguousarray(Y), int(m), float(tol), X, flags)
    return (X, flags) if return_flags else X


def omp(D, y, m: int, tol: float = 0.0, return_flags: bool = False):
    """Orthogonal matching pursuit for a single measurement vector."""
    y = np.asarray(y, dtype=np.complex128)
    out = sparse_code(D, y[:, None], m, tol, return_flags=return_flags)
    if return_flags:
        return out[0][:, 0], int(out[1][0])
    return out[:, 0]


# --------------------------------------------------------------------------
# MOD and alternation
# --------------------------------------------------------------------------


def mod_update(Y, X, reg: float = 0.0) -> np.ndarray:
    """Least-squares dictionary for fixed coefficients: ``Y X^H (X X^H + reg I)^-1``.

    Raises ``numpy.linalg.LinAlgError`` when the system is singular.
    """
    Y = np.asarray(Y, dtype=np.complex128)
    X = np.asarray(X, dtype=np.complex128)
    A = X @ X.conj().T
    if reg:
        A = A + reg * np.eye(A.shape[0])
    # A is Hermitian: D A = Y X^H  <=>  A D^H = X Y^H
    Dh = np.linalg.solve(A, X @ Y.conj().T)
    D = Dh.conj().T
    if not np.all(np.isfinite(D)):
        raise np.linalg.LinAlgError("non-finite MOD update")
    return D


def default_reg(X: np.ndarray) -> float:
    K = X.shape[0]
    tr = float(np.sum(np.abs(X) ** 2))
    return 1e-8 * tr / K if tr > 0 else 1e-12


def atom_budget(Ka: int, S: int, L: int) -> int:
    """Statistically optimised atom number: ``max(1, ceil(Ka*S/L))``."""
    if min(Ka, S, L) <= 0:
        raise ConfigurationError("atom_budget needs positive arguments")
    # integer ceil keeps exact ratios like 100*40/1600 from rounding up
    return max(1, -(-Ka * S // L))


def _random_atoms(M: int, K: int, rng: np.random.Generator) -> np.ndarray:
    Z = rng.standard_normal((M, K)) + 1j * rng.standard_normal((M, K))
    return Z / np.linalg.norm(Z, axis=0)


def _neighbours(U: np.ndarray, q: np.ndarray, threshold: float) -> np.ndarray:
    return (np.abs(U.conj().T @ U) ** 2 > threshold * np.outer(q, q)).astype(np.float32)


def _greedy_groups(U, q, threshold, remaining, limit, min_count: float = 0.0):
    """Seed, group and remove aligned columns.

    Stops after ``limit`` groups, when no column remains, or when the best
    seed has fewer than ``min_count`` remaining neighbours (itself included).
    ``remaining`` is updated in place.
    """
    nbr = _neighbours(U, q, threshold)
    out = []
    while len(out) < limit and remaining.any():
        counts = nbr @ remaining.astype(np.float32)
        counts[~remaining] = -1.0
        i = int(np.argmax(counts))
        if counts[i] < min_count:
            break
        group = remaining & (nbr[i] > 0)
        group[i] = True
        u, _, _ = np.linalg.svd(U[:, group], full_matrices=False)
        a = u[:, 0]
        out.append((a, group))
        remaining &= np.abs(a.conj() @ U) ** 2 <= threshold * q
        remaining[i] = False
    return out


def _polish_atom(g, Yg, A, sweeps: int = 5):
    """Re-estimate ``g`` from columns that each also carry one atom of ``A``."""
    for _ in range(sweeps):
        c = g.conj() @ Yg
        r = Yg - np.outer(g, c)
        # partner atom: best correlation with the part of y not explained by g
        Ap = A - np.outer(g, g.conj() @ A)
        pn = np.linalg.norm(Ap, axis=0)
        pn[pn == 0] = np.inf
        j = np.argmax(np.abs(Ap.conj().T @ r) / pn[:, None], axis=0)
        R = np.empty_like(Yg)
        for l in range(Yg.shape[1]):
            B2 = np.stack([g, A[:, j[l]]], axis=1)
            x, *_ = np.linalg.lstsq(B2, Yg[:, l], rcond=None)
            R[:, l] = Yg[:, l] - A[:, j[l]] * x[1]
        u, _, _ = np.linalg.svd(R, full_matrices=False)
        g = u[:, 0]
    return g


def _data_atoms(Y: np.ndarray, K: int, tol: float, threshold: float, noise_energy: float,
                rng: np.random.Generator, min_group: int = 3) -> np.ndarray:
    """Greedy pick of the most populated directions among the columns of Y.

    Two columns are neighbours when their squared cosine similarity exceeds
    ``threshold * q_i * q_j``, with ``q = 1 - noise_energy/||y||^2`` the
    signal share of a column.  Columns carrying a single atom have many
    neighbours, superpositions have few, so the column with the most
    neighbours seeds an atom (the principal direction of its neighbourhood);
    every column aligned with that atom is removed before the next pick.

    Once no seed has ``min_group`` members the leftover columns are mostly
    superpositions.  They
    are projected away from the atoms found so far and clustered again; each
    such atom is then re-fitted on its columns, allowing one known partner
    atom per column.  Atoms still missing are random.
    """
    M = Y.shape[0]
    norms = np.linalg.norm(Y, axis=0)
    floor = max(tol, 1e-9 * (norms.max() if norms.size else 0.0))
    cand = np.flatnonzero(norms > floor)
    atoms: list[np.ndarray] = []
    if cand.size:
        U = Y[:, cand] / norms[cand]
        q = np.clip(1.0 - noise_energy / norms[cand] ** 2, 0.0, 1.0)
        remaining = np.ones(cand.size, dtype=bool)
        atoms = [a for a, _ in _greedy_groups(U, q, threshold, remaining, K, min_group)]
        if not atoms:
            # nothing is seen often enough: take the best seeds regardless
            atoms = [a for a, _ in _greedy_groups(U, q, threshold, remaining, K)]
        if len(atoms) < K and remaining.any() and atoms:
            A = np.array(atoms).T
            Qb, _ = np.linalg.qr(A)
            idx = np.flatnonzero(remaining)
            V = U[:, idx] - Qb @ (Qb.conj().T @ U[:, idx])
            vn = np.linalg.norm(V, axis=0)
            keep = vn ** 2 > 2.0 * noise_energy / norms[cand[idx]] ** 2 + 1e-12
            idx, V, vn = idx[keep], V[:, keep], vn[keep]
            if idx.size:
                qv = np.clip(1.0 - noise_energy / (vn * norms[cand[idx]]) ** 2, 0.0, 1.0)
                rem = np.ones(idx.size, dtype=bool)
                for a, group in _greedy_groups(V / vn, qv, threshold, rem, K - len(atoms)):
                    Yg = U[:, idx[group]]
                    atoms.append(_polish_atom(a, Yg, A))
    D = np.empty((M, K), dtype=np.complex128)
    if atoms:
        D[:, : len(atoms)] = np.array(atoms).T
    if len(atoms) < K:
        D[:, len(atoms):] = _random_atoms(M, K - len(atoms), rng)
    return D


def initial_dictionary(Y, cfg: DlConfig, rng: np.random.Generator) -> np.ndarray:
    M = Y.shape[0]
    if cfg.init == "data":
        return _data_atoms(Y, cfg.n_atoms, cfg.omp_tol, cfg.init_threshold, cfg.noise_energy, rng)
    return _random_atoms(M, cfg.n_atoms, rng)


def _column_residuals(Y, D, X) -> np.ndarray:
    return np.sum(np.abs(Y - D @ X) ** 2, axis=0)


def _alternate(Y, D, X, cfg: DlConfig, rng, res: DecompositionResult, n_iter: int):
    """Up to ``n_iter`` MOD + OMP rounds from ``(D, X)``; returns ``(D, X, residuals)``."""
    M, m = Y.shape[0], cfg.atoms
    hist = []
    prev = float(np.linalg.norm(Y - D @ X))
    for _ in range(n_iter):
        reg = default_reg(X) if cfg.reg is None else cfg.reg
        try:
            Dn = mod_update(Y, X, reg)
        except np.linalg.LinAlgError:
            warnings.warn("MOD update singular; keeping the previous dictionary", RuntimeWarning, stacklevel=3)
            res.skipped_updates += 1
            break
        scale = np.linalg.norm(Dn, axis=0)
        dead = scale <= 1e-12 * max(scale.max(), 1e-300)
        scale[dead] = 1.0
        Dn = Dn / scale
        Xs = X * scale[:, None]
        if dead.any():
            Dn[:, dead] = _random_atoms(M, int(dead.sum()), rng)
            Xs[dead] = 0.0
            res.reseeded_atoms += int(dead.sum())
        Xn, flags = sparse_code(Dn, Y, m, cfg.omp_tol, return_flags=True)
        keep_old = _column_residuals(Y, Dn, Xs) < _column_residuals(Y, Dn, Xn)
        Xn[:, keep_old] = Xs[:, keep_old]
        res.singular_columns += int(np.count_nonzero(flags))
        r = float(np.linalg.norm(Y - Dn @ Xn))
        if r > prev:
            break               # the ridge term can pull an exact fit off; keep the better one
        D, X = Dn, Xn
        hist.append(r)
        if prev - r <= cfg.rel_tol * prev:
            break
        prev = r
    return D, X, hist


def _reseed_candidates(Y, D, X):
    """Dictionaries with one atom swapped for a residual direction, least used atoms first."""
    R = Y - D @ X
    u, _, _ = np.linalg.svd(R, full_matrices=False)
    worst = R[:, int(np.argmax(np.sum(np.abs(R) ** 2, axis=0)))]
    dirs = [worst / np.linalg.norm(worst), u[:, 0]]
    for j in np.argsort(np.sum(np.abs(X) ** 2, axis=1), kind="stable"):
        for d in dirs:
            Dt, Xt = D.copy(), X.copy()
            Dt[:, j] = d
            Xt[j] = 0.0
            yield Dt, Xt


def dl_decompose(Y, cfg: DlConfig, rng: np.random.Generator, D0=None) -> DecompositionResult:
    """Alternate OMP sparse coding and MOD updates from an initial dictionary.

    A column keeps its previous code when the fresh OMP code fits worse under
    the updated dictionary, so the recorded residual never increases.  Atoms
    whose MOD update vanishes are re-drawn at random.  When the alternation
    stalls above the noise floor, single atoms (least used first) are swapped
    for the worst fitted column or the top residual direction and the
    alternation re-run; the first swap that lowers the residual is kept.
    At most ``cfg.escapes`` swaps are kept.
    """
    Y = np.asarray(Y, dtype=np.complex128)
    M = Y.shape[0]
    K = cfg.n_atoms
    m = cfg.atoms
    if m > min(M, K):
        raise ConfigurationError(f"atom budget {m} exceeds min(M, K)={min(M, K)}")
    D = initial_dictionary(Y, cfg, rng) if D0 is None else np.array(D0, dtype=np.complex128)
    D = D / np.linalg.norm(D, axis=0)
    X, flags = sparse_code(D, Y, m, cfg.omp_tol, return_flags=True)
    res = DecompositionResult(D=D, X=X, residuals=[float(np.linalg.norm(Y - D @ X))])
    res.singular_columns += int(np.count_nonzero(flags))
    if res.residuals[0] == 0.0:
        return res
    D, X, hist = _alternate(Y, D, X, cfg, rng, res, cfg.max_iter)
    res.residuals += hist
    floor = cfg.omp_tol * math.sqrt(Y.shape[1])
    for _ in range(cfg.escapes):
        if res.residuals[-1] <= floor:
            break
        best = None
        for Dt, Xt in _reseed_candidates(Y, D, X):
            Dt, Xt, hist = _alternate(Y, Dt, Xt, cfg, rng, res, cfg.max_iter)
            if hist and hist[-1] < res.residuals[-1] * (1.0 - cfg.rel_tol):
                best = (Dt, Xt, hist[-1])
                break
        if best is None:
            break
        D, X = best[0], best[1]
        res.residuals.append(best[2])
        res.escapes += 1
    res.D, res.X = D, X
    return res
