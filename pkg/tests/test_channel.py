"""Unit tests for the complex-baseband channel simulation."""

import numpy as np
import pytest

from omlcae import rng as rngmod
from omlcae.channel import (FadingProcess, NoiseModel, apply_channel,
                            apply_channel_fixed, ar_step, awgn, cmul, cmul_conj,
                            rayleigh_sample, snr_to_sigma2, to_complex)


def test_snr_to_sigma2_values():
    assert snr_to_sigma2(0.0) == 1.0
    assert np.isclose(snr_to_sigma2(10.0), 0.1)
    assert np.isclose(snr_to_sigma2(5.0), 0.31623, atol=1e-5)


def test_cmul_matches_complex_arithmetic():
    rng = rngmod.substream(0, "cmul")
    a = rng.normal(size=(5, 6))
    b = rng.normal(size=(5, 6))
    got = to_complex(cmul(a, b))
    assert np.allclose(got, to_complex(a) * to_complex(b), atol=1e-12)
    got = to_complex(cmul_conj(a, b))
    assert np.allclose(got, to_complex(a).conj() * to_complex(b), atol=1e-12)


def test_cmul_unit_rotations():
    one = np.array([1.0, 0.0])
    j = np.array([0.0, 1.0])
    assert np.allclose(cmul(one, j), j)
    assert np.allclose(cmul(j, one), j)
    assert np.allclose(cmul(j, j), [-1.0, 0.0])


def test_cmul_conj_is_adjoint_of_cmul():
    # <a*x, y> = <x, conj(a)*y> in the underlying real inner product
    rng = rngmod.substream(1, "adj")
    a, x, y = rng.normal(size=(3, 8))
    assert np.isclose(np.dot(cmul(a, x), y), np.dot(x, cmul_conj(a, y)),
                      atol=1e-12)


def test_rayleigh_sample_statistics():
    rng = rngmod.substream(2, "ray")
    draws = np.stack([rayleigh_sample(rng, 1) for _ in range(100000)])
    hc = to_complex(draws)[:, 0]
    assert abs(np.mean(np.abs(hc) ** 2) - 1.0) < 0.02
    # E[h] ~ 0 within 3 sigma per real component (component var 1/2)
    sigma = np.sqrt(0.5 / len(hc))
    assert abs(hc.real.mean()) < 3 * sigma and abs(hc.imag.mean()) < 3 * sigma


def test_rayleigh_sample_validation():
    with pytest.raises(ValueError):
        rayleigh_sample(rngmod.substream(0, "x"), 0)


def test_ar_step_rho_one_and_zero():
    proc = FadingProcess(1.0, 2, rngmod.substream(3, "ar1"))
    h1, h2 = proc.step(), proc.step()
    assert np.array_equal(h1, h2)
    proc = FadingProcess(0.0, 2, rngmod.substream(3, "ar0"))
    h1, h2 = ar_step(proc), ar_step(proc)
    assert not np.array_equal(h1, h2)


def test_ar_step_stationary_variance_across_rho():
    # high correlation shrinks the effective sample count by (1-rho^2)/(1+rho^2)
    for rho, steps, tol in ((0.0, 20000, 0.03), (0.5, 20000, 0.04),
                            (0.99, 100000, 0.1)):
        proc = FadingProcess(rho, 1, rngmod.substream(4, "arv", rho))
        hs = np.stack([proc.step() for _ in range(steps)])
        power = np.mean(np.abs(to_complex(hs)) ** 2)
        assert abs(power - 1.0) < tol, (rho, power)


def test_fading_process_validation():
    with pytest.raises(ValueError):
        FadingProcess(1.5, 1, rngmod.substream(0, "x"))
    with pytest.raises(ValueError):
        NoiseModel(-0.1)


def test_awgn_shape_and_variance():
    rng = rngmod.substream(5, "awgn")
    n = awgn(rng, 2, 0.5, size=50000)
    assert n.shape == (50000, 4)
    per_use = n[:, 0] ** 2 + n[:, 1] ** 2
    assert abs(per_use.mean() - 0.5) < 0.01
    assert awgn(rng, 3, 1.0).shape == (6,)


def test_apply_channel_noiseless_cases():
    x = np.array([1.0, 0.0, 0.5, -0.5])
    rng = rngmod.substream(6, "ac")
    y, nd = apply_channel(np.array([1.0, 0.0, 1.0, 0.0]), x,
                          NoiseModel(0.0), rng)
    assert np.allclose(y, x) and np.all(nd == 0.0)
    y, _ = apply_channel(np.array([0.0, 1.0]), np.array([1.0, 0.0]),
                         NoiseModel(0.0), rng)
    assert np.allclose(y, [0.0, 1.0])


def test_apply_channel_noise_variance():
    rng = rngmod.substream(7, "acv")
    h = rayleigh_sample(rng, 1)
    x = np.tile(np.array([1.0, 0.0]), (100000, 1))
    y, _ = apply_channel(h, x, NoiseModel(0.25), rng)
    resid = y - cmul(h, x)
    per_use = np.sum(resid ** 2, axis=-1)
    assert abs(per_use.mean() - 0.25) < 0.005


def test_apply_channel_replay_bitwise_and_linearity():
    rng = rngmod.substream(8, "rep")
    h = rayleigh_sample(rng, 2)
    x1, x2 = rng.normal(size=(2, 4))
    _, nd = apply_channel(h, x1, NoiseModel(0.1), rng)
    assert np.array_equal(apply_channel_fixed(h, x1, nd),
                          apply_channel_fixed(h, x1, nd))
    a, b = 2.0, -0.5
    lhs = apply_channel_fixed(h, a * x1 + b * x2, nd)
    rhs = a * cmul(h, x1) + b * cmul(h, x2) + nd
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_apply_channel_length_mismatch():
    with pytest.raises(ValueError):
        apply_channel(np.zeros(2), np.zeros(4), NoiseModel(0.0),
                      rngmod.substream(0, "x"))
