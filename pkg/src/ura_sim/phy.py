"""Transmit chain, MIMO superposition channel and energy bookkeeping.

QPSK is Gray mapped: the bit pair ``(b0, b1)`` goes to
``((1 - 2*b0) + 1j*(1 - 2*b1)) / sqrt(2)``, so b0 rides on the real part and
b1 on the imaginary part.  Noise entries are circular complex Gaussian with
total variance ``noise_var`` (``noise_var/2`` per real dimension).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codebook import Codebook, assign_codewords
from .errors import ConfigurationError
from .fec import LdpcCode, ldpc_encode

_INV_SQRT2 = 1.0 / math.sqrt(2.0)


def qpsk_modulate(bits) -> np.ndarray:
    """Map ``(..., 2S)`` bits to ``(..., S)`` unit-energy QPSK symbols."""
    bits = np.asarray(bits)
    if bits.shape[-1] % 2:
        raise ConfigurationError(f"QPSK needs an even number of bits, got {bits.shape[-1]}")
    b = bits.astype(np.float64)
    return ((1.0 - 2.0 * b[..., 0::2]) + 1j * (1.0 - 2.0 * b[..., 1::2])) * _INV_SQRT2


def qpsk_demod_llr(symbols, noise_var, gain=1.0, clamp: float = 30.0) -> np.ndarray:
    """Exact per-bit LLRs of Gray QPSK observed as ``gain * s + n``.

    With ``z = symbol / gain`` the LLRs are ``2*sqrt(2)*|gain|**2 * Re(z) / noise_var``
    and the same with ``Im(z)``; positive favours bit 0.  ``noise_var`` and
    ``gain`` broadcast against ``symbols`` (per-symbol values are allowed).
    """
    symbols = np.asarray(symbols, dtype=np.complex128)
    gain = np.asarray(gain, dtype=np.complex128)
    noise_var = np.asarray(noise_var, dtype=np.float64)
    if np.any(gain == 0):
        raise ConfigurationError("zero gain: the symbol scale is undefined")
    if np.any(noise_var <= 0):
        raise ConfigurationError("noise_var must be positive")
    # conj(g)*y == |g|^2 * (y/g)
    t = 2.0 * math.sqrt(2.0) * np.conj(gain) * symbols / noise_var
    out = np.empty(t.shape[:-1] + (2 * t.shape[-1],))
    out[..., 0::2] = t.real
    out[..., 1::2] = t.imag
    return np.clip(out, -clamp, clamp)


@dataclass(frozen=True)
class FrameRow:
    values: np.ndarray  # (L,) complex
    support: np.ndarray
    codeword: int


def spread(symbols, cb: Codebook, codeword_index: int) -> FrameRow:
    """Place the k-th symbol at the k-th support position of the codeword; zeros elsewhere."""
    symbols = np.asarray(symbols, dtype=np.complex128)
    if symbols.shape != (cb.S,):
        raise ConfigurationError(f"expected {cb.S} symbols, got shape {symbols.shape}")
    sup = cb.columns[codeword_index]
    row = np.zeros(cb.L, dtype=np.complex128)
    row[sup] = symbols
    return FrameRow(values=row, support=sup, codeword=int(codeword_index))


def spread_rows(symbols: np.ndarray, supports: np.ndarray, L: int) -> np.ndarray:
    """Batch form of :func:`spread`: ``(K, S)`` symbols on ``(K, S)`` supports -> ``(K, L)``."""
    K = symbols.shape[0]
    X = np.zeros((K, L), dtype=np.complex128)
    X[np.arange(K)[:, None], supports] = symbols
    return X


def encode_user(bits, code: LdpcCode, cb: Codebook, codeword_index: int) -> FrameRow:
    """The composite transmit map: LDPC encode, QPSK map, sparse spread."""
    if code.S != cb.S:
        raise ConfigurationError(f"code carries {code.S} symbols but codewords have weight {cb.S}")
    return spread(qpsk_modulate(ldpc_encode(code, bits)), cb, codeword_index)


def encode_users(bits: np.ndarray, code: LdpcCode, cb: Codebook, codewords: np.ndarray) -> np.ndarray:
    """Row-stacked :func:`encode_user` for a ``(K, B)`` bit matrix."""
    if code.S != cb.S:
        raise ConfigurationError(f"code carries {code.S} symbols but codewords have weight {cb.S}")
    syms = qpsk_modulate(ldpc_encode(code, bits))
    return spread_rows(syms, cb.columns[np.asarray(codewords)], cb.L)


@dataclass(frozen=True, eq=False)
class Scene:
    """Ground truth of one trial."""

    users: np.ndarray      # (Ka,) active user ids in [0, Ktot)
    bits: np.ndarray       # (Ka, B) messages
    codewords: np.ndarray  # (Ka,) codeword index per user
    h: np.ndarray          # (M, Ka) unit-variance Rayleigh channels
    rho: np.ndarray        # (Ka,) received power per symbol
    noise_var: float
    collided: np.ndarray | None = None

    @property
    def Ka(self) -> int:
        return len(self.codewords)

    @property
    def M(self) -> int:
        return self.h.shape[0]

    @property
    def G(self) -> np.ndarray:
        return self.h * np.sqrt(self.rho)[None, :]

    @property
    def rho_bar(self) -> float:
        return float(np.mean(self.rho)) if self.Ka else 0.0

    @property
    def rho_min(self) -> float:
        return float(np.min(self.rho)) if self.Ka else 0.0


@dataclass(frozen=True, eq=False)
class ReceivedBlock:
    Y: np.ndarray  # (M, L)
    seed: int | None = None

    def dump(self, path) -> None:
        """Row-major, interleaved re/im, little-endian float64."""
        np.ascontiguousarray(self.Y, dtype="<c16").tofile(path)

    @classmethod
    def load(cls, path, M: int, L: int, seed: int | None = None) -> ReceivedBlock:
        Y = np.fromfile(Path(path), dtype="<c16")
        if Y.size != M * L:
            raise ConfigurationError(f"{path}: {Y.size} samples, expected {M}x{L}")
        return cls(Y=Y.reshape(M, L).astype(np.complex128), seed=seed)


def complex_gaussian(shape, rng: np.random.Generator, var: float = 1.0) -> np.ndarray:
    """i.i.d. CN(0, var) samples."""
    z = rng.standard_normal(shape + (2,) if isinstance(shape, tuple) else (shape, 2))
    return (z[..., 0] + 1j * z[..., 1]) * math.sqrt(var / 2.0)


def draw_scene(cb: Codebook, Ka: int, M: int, B: int, rho, noise_var: float, *,
               CR: float = 0.0, m_rep: int = 2, Ktot_users: int | None = None,
               rng_assign: np.random.Generator, rng_bits: np.random.Generator,
               rng_channel: np.random.Generator) -> Scene:
    """Draw active users, their codewords, messages and channels from separate streams."""
    n_users = cb.Ktot if Ktot_users is None else Ktot_users
    asg = assign_codewords(cb, Ka, CR, m_rep, rng_assign)
    users = np.sort(rng_assign.choice(n_users, size=Ka, replace=False))
    bits = rng_bits.integers(0, 2, size=(Ka, B), dtype=np.uint8)
    h = complex_gaussian((M, Ka), rng_channel)
    rho = np.broadcast_to(np.asarray(rho, dtype=np.float64), (Ka,)).copy()
    return Scene(users=users, bits=bits, codewords=asg.codewords, h=h, rho=rho,
                 noise_var=float(noise_var), collided=asg.collided)


def channel_apply(scene: Scene, rows, rng: np.random.Generator, seed: int | None = None) -> ReceivedBlock:
    """``Y = sum_u sqrt(rho_u) h_u f(x_u) + N``.

    The noise draw always consumes ``M*L`` complex samples from ``rng`` so the
    stream position does not depend on ``noise_var``.
    """
    if len(rows) and isinstance(rows[0], FrameRow):
        X = np.asarray([r.values for r in rows])
    else:
        X = np.asarray(rows, dtype=np.complex128)
    M = scene.M
    if X.ndim != 2:
        raise ConfigurationError("frame rows must form a (Ka, L) array; pass np.zeros((0, L)) when Ka=0")
    if X.shape[0] != scene.Ka:
        raise ConfigurationError(f"{X.shape[0]} frame rows for {scene.Ka} active users")
    N = complex_gaussian((M, X.shape[1]), rng, scene.noise_var)
    return ReceivedBlock(Y=scene.G @ X + N, seed=seed)


def eb_n0(rho_bar: float, S: int, L: int, noise_var: float = 1.0) -> tuple[float, float]:
    """Energy per bit over noise density, ``rho_bar*S/(2*L*noise_var)``; returns (linear, dB)."""
    if min(rho_bar, S, L, noise_var) <= 0:
        raise ConfigurationError("eb_n0 needs positive arguments")
    lin = rho_bar * S / (2.0 * L * noise_var)
    return lin, 10.0 * math.log10(lin)


def rho_for_eb_n0(ebn0_db: float, S: int, L: int, noise_var: float = 1.0) -> float:
    """Inverse of :func:`eb_n0`: average symbol power reaching a target Eb/n0 in dB."""
    return 10.0 ** (ebn0_db / 10.0) * 2.0 * L * noise_var / S
