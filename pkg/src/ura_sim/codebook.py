"""Shared sparse common codebook.

Each codeword is a length-L binary pattern with exactly S ones.  Codewords are
stored as sorted support lists (a ``(Ktot, S)`` integer array) rather than as
dense bit rows; the dense ``L x Ktot`` matrix is only built on request.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InfeasibleCodebookError


@dataclass(frozen=True, eq=False)
class Codebook:
    L: int
    S: int
    columns: np.ndarray  # (Ktot, S) sorted support positions
    seed: int | None = None

    def __post_init__(self):
        cols = np.ascontiguousarray(self.columns, dtype=np.int64)
        if cols.ndim != 2 or cols.shape[1] != self.S:
            raise ConfigurationError(f"columns must have shape (Ktot, {self.S}), got {cols.shape}")
        cols.setflags(write=False)
        object.__setattr__(self, "columns", cols)

    @property
    def Ktot(self) -> int:
        return self.columns.shape[0]

    @property
    def gamma(self) -> float:
        return self.S / self.L

    def support(self, index: int) -> np.ndarray:
        return self.columns[index]

    def dense(self, dtype=np.float64) -> np.ndarray:
        """The ``L x Ktot`` 0/1 codebook matrix."""
        C = np.zeros((self.L, self.Ktot), dtype=dtype)
        C[self.columns, np.arange(self.Ktot)[:, None]] = 1
        return C

    def to_json(self) -> dict:
        return {
            "L": self.L,
            "S": self.S,
            "Ktot": self.Ktot,
            "seed": self.seed,
            "columns": self.columns.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> Codebook:
        cols = np.asarray(obj["columns"], dtype=np.int64).reshape(-1, obj["S"])
        if cols.shape[0] != obj["Ktot"]:
            raise ConfigurationError(f"Ktot={obj['Ktot']} but {cols.shape[0]} columns given")
        cb = cls(L=int(obj["L"]), S=int(obj["S"]), columns=cols, seed=obj.get("seed"))
        _validate_columns(cb)
        return cb

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> Codebook:
        return cls.from_json(json.loads(Path(path).read_text()))


def _validate_columns(cb: Codebook) -> None:
    cols = cb.columns
    if cols.size and (cols.min() < 0 or cols.max() >= cb.L):
        raise ConfigurationError("support position outside [0, L)")
    if cb.S > 1 and np.any(np.diff(cols, axis=1) <= 0):
        raise ConfigurationError("support lists must be strictly increasing")
    if len({row.tobytes() for row in cols}) != cb.Ktot:
        raise ConfigurationError("codebook columns are not distinct")


def generate_codebook(L: int, S: int, Ktot: int, rng: np.random.Generator,
                      seed: int | None = None) -> Codebook:
    """Draw ``Ktot`` distinct uniform S-subsets of ``[0, L)``.

    Duplicates are re-drawn, so the codebook itself never contains a
    collision; user-level collisions come only from :func:`assign_codewords`.
    """
    if not (0 < S <= L) or Ktot < 1:
        raise ConfigurationError(f"need 0 < S <= L and Ktot >= 1 (got L={L}, S={S}, Ktot={Ktot})")
    if Ktot > math.comb(L, S):
        raise InfeasibleCodebookError(f"Ktot={Ktot} exceeds binom({L},{S})={math.comb(L, S)}")
    if S / L > 0.1:
        warnings.warn(f"sparsity ratio S/L={S / L:.3f} > 0.1; codeword matching degrades", stacklevel=2)

    seen: set[bytes] = set()
    out = np.empty((Ktot, S), dtype=np.int64)
    filled = 0
    while filled < Ktot:
        need = Ktot - filled
        # argsort of iid uniforms gives a uniform random permutation per row
        draws = np.sort(np.argsort(rng.random((need, L)), axis=1)[:, :S], axis=1)
        for row in draws:
            key = row.tobytes()
            if key in seen:
                continue
            seen.add(key)
            out[filled] = row
            filled += 1
    return Codebook(L=L, S=S, columns=out, seed=seed)


@dataclass(frozen=True)
class ExtractionMap:
    """Pattern-extracting map of one codeword.

    The m-th output coordinate reads frame position ``positions[m]``; the
    dense ``L x S`` form is available from :meth:`matrix`.
    """

    codeword: int
    positions: np.ndarray
    L: int

    def apply(self, row: np.ndarray) -> np.ndarray:
        row = np.asarray(row)
        if row.shape[-1] != self.L:
            raise ConfigurationError(f"row length {row.shape[-1]} != L={self.L}")
        return row[..., self.positions]

    __call__ = apply

    def matrix(self) -> np.ndarray:
        E = np.zeros((self.L, len(self.positions)), dtype=np.int8)
        E[self.positions, np.arange(len(self.positions))] = 1
        return E


def extraction_map(cb: Codebook, codeword_index: int) -> ExtractionMap:
    if not 0 <= codeword_index < cb.Ktot:
        raise IndexError(f"codeword index {codeword_index} out of range [0, {cb.Ktot})")
    return ExtractionMap(codeword=int(codeword_index), positions=cb.columns[codeword_index], L=cb.L)


@dataclass(frozen=True)
class Assignment:
    """Codeword index chosen by each of the Ka active users."""

    codewords: np.ndarray  # (Ka,)
    cr: float
    m_rep: int
    collided: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def Ka(self) -> int:
        return len(self.codewords)

    def multiplicity(self) -> np.ndarray:
        _, counts = np.unique(self.codewords, return_counts=True)
        return counts


def assign_codewords(cb: Codebook, Ka: int, CR: float, m_rep: int,
                     rng: np.random.Generator) -> Assignment:
    """Give each active user a codeword, forcing ``round(CR*Ka)`` of them into collisions.

    The colliding users are formed by ``n_join = floor(CR*Ka/2 + 1/2)`` joiners,
    each placed round-robin onto a distinct already-selected host codeword, so
    that ``2*n_join`` users end up sharing.  A host never exceeds ``m_rep`` users.
    """
    if Ka < 0 or Ka > cb.Ktot:
        raise ConfigurationError(f"Ka={Ka} must be in [0, Ktot={cb.Ktot}]")
    if not 0.0 <= CR <= 1.0:
        raise ConfigurationError(f"CR={CR} must be in [0, 1]")
    if m_rep < 1:
        raise ConfigurationError(f"m_rep={m_rep} must be >= 1")

    n_join = int(math.floor(CR * Ka / 2 + 0.5))
    n_base = Ka - n_join
    if n_join > 0 and n_join > n_base * (m_rep - 1):
        raise ConfigurationError(
            f"{n_join} forced collisions exceed capacity {n_base * (m_rep - 1)} at m_rep={m_rep}")

    base = rng.choice(cb.Ktot, size=n_base, replace=False).astype(np.int64)
    joiners = base[np.arange(n_join) % max(n_base, 1)] if n_join else np.zeros(0, dtype=np.int64)
    codewords = np.concatenate([base, joiners])
    # joiners should not sit at the tail of the user list
    order = rng.permutation(Ka)
    codewords = codewords[order]
    collided_cw = np.unique(joiners)
    collided = np.flatnonzero(np.isin(codewords, collided_cw))
    return Assignment(codewords=codewords, cr=float(CR), m_rep=int(m_rep), collided=collided)


def select_uniform(cb: Codebook, Ka: int, rng: np.random.Generator) -> np.ndarray:
    """Each user picks a codeword independently and uniformly (collisions by chance)."""
    return rng.integers(0, cb.Ktot, size=Ka)


def cross_match_expectation(L: int, S: int) -> float:
    """Mean overlap of two independent weight-S supports in ``[0, L)`` (hypergeometric mean)."""
    if not 0 <= S <= L:
        raise ConfigurationError(f"need S <= L (got S={S}, L={L})")
    return S * S / L
