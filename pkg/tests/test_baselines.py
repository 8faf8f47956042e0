"""Unit tests for the QPSK+MLE, scratch-CAE, and joint-CAE baselines."""

import numpy as np
import pytest

from omlcae import rng as rngmod
from omlcae.baselines import (JointTrainState, QPSK_POINTS, QpskConfig,
                              baseline_cae_sequence, mle_channel_estimate,
                              qpsk_mle_ser, run_qpsk_mle, run_scratch_cae)
from omlcae.cae import CaeModel, evaluate_ser
from omlcae.channel import NoiseModel, awgn, cmul, rayleigh_sample
from omlcae.metalearn import MetaConfig, RunConfig, make_pilot_task


def test_qpsk_gray_map_unit_energy_and_adjacency():
    assert np.allclose(np.sum(QPSK_POINTS ** 2, axis=-1), 1.0)
    # adjacent points (min nonzero distance) differ in exactly one bit
    bits = [(0, 0), (0, 1), (1, 0), (1, 1)]
    d = np.linalg.norm(QPSK_POINTS[:, None] - QPSK_POINTS[None, :], axis=-1)
    dmin = np.min(d[d > 0])
    for i in range(4):
        for j in range(4):
            if 0 < d[i, j] <= dmin + 1e-9:
                flips = sum(a != b for a, b in zip(bits[i], bits[j]))
                assert flips == 1


def test_qpsk_config_requires_even_k():
    assert QpskConfig(4).n_ch == 2
    with pytest.raises(ValueError):
        QpskConfig(3)


def test_mle_estimate_exact_on_noiseless_pilots():
    rng = rngmod.substream(0, "mle")
    h = rayleigh_sample(rng, 2)
    tx = rng.normal(size=(5, 4))
    rx = cmul(h, tx)
    assert np.allclose(mle_channel_estimate(tx, rx), h, atol=1e-12)


def test_mle_estimate_single_pilot_and_errors():
    got = mle_channel_estimate(np.array([[1.0, 0.0]]), np.array([[2.0, 2.0]]))
    assert np.allclose(got, [2.0, 2.0])
    with pytest.raises(ValueError):
        mle_channel_estimate(np.zeros((0, 2)), np.zeros((0, 2)))
    with pytest.raises(ValueError):
        mle_channel_estimate(np.zeros((1, 2)), np.zeros((1, 2)))


def test_mle_estimate_scale_equivariance():
    rng = rngmod.substream(1, "mle-eq")
    h = rayleigh_sample(rng, 1)
    tx = rng.normal(size=(4, 2))
    rx = cmul(h, tx) + awgn(rng, 1, 0.1, size=4)
    c = np.array([0.7, -1.2])  # complex scalar as interleaved pair
    h1 = mle_channel_estimate(tx, rx)
    h2 = mle_channel_estimate(tx, cmul(c, rx))
    assert np.allclose(h2, cmul(c, h1), atol=1e-12)


def test_mle_error_shrinks_with_pilots():
    rng = rngmod.substream(2, "mle-var")
    sigma2 = 0.5
    errs = {}
    for p in (1, 4, 16):
        sq = []
        for _ in range(400):
            h = rayleigh_sample(rng, 1)
            tx = np.tile(np.array([1.0, 0.0]), (p, 1))
            rx = cmul(h, tx) + awgn(rng, 1, sigma2, size=p)
            sq.append(np.sum((mle_channel_estimate(tx, rx) - h) ** 2))
        errs[p] = np.mean(sq)
    # variance ~ sigma2/p: each 4x pilot increase shrinks error ~4x
    assert errs[1] / errs[4] > 2.5
    assert errs[4] / errs[16] > 2.5


def test_qpsk_ser_noiseless_and_perfect_csi_oracle():
    rng = rngmod.substream(3, "qpsk0")
    h = rayleigh_sample(rng, 2)
    assert qpsk_mle_ser(h, NoiseModel(0.0), 1, 4, 2000, rng) == 0.0
    # perfect CSI, h=1, Es/N0=10dB: per-message error 1-(1-Q(sqrt(10)))^k
    q = 7.827011290012763e-4
    k = 4
    want = 1.0 - (1.0 - q) ** k
    n_eval = 200000
    h1 = np.array([1.0, 0.0, 1.0, 0.0])
    ser = qpsk_mle_ser(h1, NoiseModel(0.1), 1, k, n_eval,
                       rngmod.substream(3, "qpsk-csi"), perfect_csi=True)
    sigma = np.sqrt(want * (1 - want) / n_eval)
    assert abs(ser - want) < 3 * sigma


def test_qpsk_ser_improves_with_pilots():
    # paired means over many channels: 100-shot estimation beats 1-shot
    nm = NoiseModel(10 ** (-0.5))
    rng = rngmod.substream(4, "qpsk-sh")
    s1, s100 = [], []
    for i in range(200):
        h = rayleigh_sample(rng, 1)
        s1.append(qpsk_mle_ser(h, nm, 1, 2, 500,
                               rngmod.substream(5, "a", i)))
        s100.append(qpsk_mle_ser(h, nm, 100, 2, 500,
                                 rngmod.substream(5, "a", i)))
    assert np.mean(s1) >= np.mean(s100)


def test_scratch_baseline_noiseless_fit():
    model = CaeModel.build(2, 1, rngmod.substream(6, "sb"), hidden=32)
    rng = rngmod.substream(6, "sb-task")
    h = rayleigh_sample(rng, 1)
    task = make_pilot_task(model, h, 0.0, 1, rng)
    ser, _ = baseline_cae_sequence(model, "scratch", None, task, 300, 0.05,
                                   rngmod.substream(6, "sb-init"),
                                   1000, rngmod.substream(6, "sb-eval"))
    assert ser <= 0.001


def test_scratch_baseline_untrained_is_random_guess():
    model = CaeModel.build(2, 1, rngmod.substream(7, "sb0"), hidden=8)
    rng = rngmod.substream(7, "t")
    h = rayleigh_sample(rng, 1)
    task = make_pilot_task(model, h, 0.1, 1, rng)
    ser, _ = baseline_cae_sequence(model, "scratch", None, task, 0, 0.05,
                                   rngmod.substream(7, "i"), 4000,
                                   rngmod.substream(7, "e"))
    # untrained net still errs at roughly the random-guess rate
    assert ser > 0.5


def test_joint_baseline_carries_state_and_improves_over_random():
    model = CaeModel.build(2, 1, rngmod.substream(8, "jb"), hidden=16)
    state = JointTrainState(theta=model.params.copy())
    rng = rngmod.substream(8, "jt")
    sers = []
    for i in range(3):
        h = rayleigh_sample(rng, 1)
        task = make_pilot_task(model, h, 0.05, 2, rng)
        ser, state = baseline_cae_sequence(
            model, "joint", state, task, 50, 0.05,
            rngmod.substream(8, "js"), 2000, rngmod.substream(8, "je", i),
            joint_iters=100)
        sers.append(ser)
    assert len(state.pilot_store) == 3
    assert not np.array_equal(state.theta, model.params)
    assert sers[-1] < 0.75


def test_joint_store_capacity_bound():
    state = JointTrainState(theta=np.zeros(2), capacity=2)
    for i in range(4):
        state.push(i)
    assert state.pilot_store == [2, 3]


def test_baseline_mode_validation():
    model = CaeModel.build(2, 1, rngmod.substream(9, "m"), hidden=8)
    rng = rngmod.substream(9, "t")
    task = make_pilot_task(model, rayleigh_sample(rng, 1), 0.1, 1, rng)
    with pytest.raises(ValueError):
        baseline_cae_sequence(model, "bogus", None, task, 1, 0.05, rng, 10, rng)


def test_run_qpsk_requires_matching_dims():
    cfg = RunConfig(k=3, n_ch=1, n_sequences=1, n_eval=10, hidden=8)
    with pytest.raises(ValueError):
        run_qpsk_mle(cfg)


def test_runners_share_the_channel_sequence():
    meta = MetaConfig(outer_iters=2, finetune_iters=5)
    cfg = RunConfig(k=2, n_ch=1, snr_db=5.0, shots=1, n_sequences=3,
                    n_eval=100, seed=2, meta=meta, hidden=8)
    r_cae = run_scratch_cae(cfg)
    r_qpsk = run_qpsk_mle(cfg)
    assert [i for i, _ in r_cae] == [i for i, _ in r_qpsk] == [1, 2, 3]
    assert all(0.0 <= s <= 1.0 for _, s in r_cae + r_qpsk)
