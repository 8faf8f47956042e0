"""Complex-baseband channel simulation.

Complex vectors are stored interleaved as flat real arrays of length 2n:
(re0, im0, re1, im1, ...).  A fading realization h holds one independent
complex coefficient per channel use and stays constant for an entire
sequence (block fading); successive sequences are correlated through an
AR(1) process h_i = rho*h_{i-1} + sqrt(1-rho^2)*h'.

SNR convention: Es/N0 per complex channel use against unit average transmit
power.  sigma2 = 10^(-snr_db/10) is the total complex noise variance per
use; each real component is drawn with variance sigma2/2.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class NoiseModel:
    sigma2: float

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be >= 0")


def snr_to_sigma2(snr_db: float) -> float:
    return float(10.0 ** (-snr_db / 10.0))


def cmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise complex product of interleaved (..., 2n) arrays."""
    ar, ai = a[..., 0::2], a[..., 1::2]
    br, bi = b[..., 0::2], b[..., 1::2]
    shape = np.broadcast_shapes(a.shape, b.shape)
    out = np.empty(shape, dtype=np.result_type(a, b))
    out[..., 0::2] = ar * br - ai * bi
    out[..., 1::2] = ar * bi + ai * br
    return out


def cmul_conj(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """conj(a) * b for interleaved arrays; the adjoint of y = a*x w.r.t. x."""
    ar, ai = a[..., 0::2], a[..., 1::2]
    br, bi = b[..., 0::2], b[..., 1::2]
    shape = np.broadcast_shapes(a.shape, b.shape)
    out = np.empty(shape, dtype=np.result_type(a, b))
    out[..., 0::2] = ar * br + ai * bi
    out[..., 1::2] = ar * bi - ai * br
    return out


def to_complex(block: np.ndarray) -> np.ndarray:
    """Interleaved (..., 2n) reals -> (..., n) complex view (copy)."""
    return block[..., 0::2] + 1j * block[..., 1::2]


def rayleigh_sample(rng: np.random.Generator, n: int, dtype=np.float64) -> np.ndarray:
    """n i.i.d. CN(0, 1) coefficients: each real component ~ N(0, 1/2)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return rng.normal(0.0, np.sqrt(0.5), size=2 * n).astype(dtype, copy=False)


def awgn(rng: np.random.Generator, n: int, sigma2: float, size=None,
         dtype=np.float64) -> np.ndarray:
    """Complex AWGN draws of shape (*size, 2n) with total variance sigma2 per use."""
    shape = (2 * n,) if size is None else tuple(np.atleast_1d(size)) + (2 * n,)
    return rng.normal(0.0, np.sqrt(sigma2 / 2.0), size=shape).astype(dtype, copy=False)


class FadingProcess:
    """AR(1) Rayleigh block-fading process; one coefficient per channel use.

    The first step() draws a fresh Rayleigh realization; subsequent steps
    apply h <- rho*h + sqrt(1-rho^2)*h' with a fresh Rayleigh innovation h'.
    Single-owner mutable state: one process per experiment replica.
    """

    def __init__(self, rho: float, n: int, rng: np.random.Generator,
                 dtype=np.float64):
        if not 0.0 <= rho <= 1.0:
            raise ValueError("rho must be in [0, 1]")
        self.rho = float(rho)
        self.n = int(n)
        self.rng = rng
        self.dtype = dtype
        self.current_h = None

    def step(self) -> np.ndarray:
        innovation = rayleigh_sample(self.rng, self.n, dtype=self.dtype)
        if self.current_h is None:
            self.current_h = innovation
        else:
            self.current_h = (self.rho * self.current_h
                              + np.sqrt(1.0 - self.rho ** 2) * innovation)
        return self.current_h.copy()


def ar_step(process: FadingProcess) -> np.ndarray:
    return process.step()


def apply_channel(h: np.ndarray, x: np.ndarray, noise: NoiseModel,
                  rng: np.random.Generator):
    """y = h*x + n per channel use.  Returns (y, noise_draw) so the realized
    noise can be stored and replayed during adaptation."""
    if h.shape[-1] != x.shape[-1]:
        raise ValueError(f"length mismatch: h {h.shape} vs x {x.shape}")
    n_uses = x.shape[-1] // 2
    size = x.shape[:-1] if x.ndim > 1 else None
    noise_draw = awgn(rng, n_uses, noise.sigma2, size=size, dtype=x.dtype)
    y = cmul(h, x) + noise_draw
    return y, noise_draw


def apply_channel_fixed(h: np.ndarray, x: np.ndarray,
                        noise_draw: np.ndarray) -> np.ndarray:
    """Replay the channel with a stored noise realization (bitwise reproducible)."""
    return cmul(h, x) + noise_draw
