"""Comparison systems: QPSK + maximum-likelihood channel estimation, a
scratch-trained CAE, and a jointly-trained CAE.

All CAE baselines consume the exact same Task objects (channels and pilot
noise) as the meta-learned system, so comparisons are paired per sequence.
"""

from dataclasses import dataclass, field

import numpy as np

from .cae import CaeModel, evaluate_ser, one_hot_batch, pipeline_loss_grads
from .channel import NoiseModel, awgn, cmul
from .metalearn import RunConfig, Task, inner_adapt, task_sequence

# Gray map: bit pair (b0, b1) -> unit-energy QPSK point, indexed by 2*b0+b1.
# 00 -> (+1+j)/sqrt2, 01 -> (-1+j)/sqrt2, 10 -> (+1-j)/sqrt2, 11 -> (-1-j)/sqrt2.
QPSK_POINTS = np.array([[1.0, 1.0],
                        [-1.0, 1.0],
                        [1.0, -1.0],
                        [-1.0, -1.0]]) / np.sqrt(2.0)


@dataclass
class QpskConfig:
    k: int

    def __post_init__(self):
        if self.k % 2 != 0:
            raise ValueError("QPSK requires an even number of bits (k = 2*n_ch)")

    @property
    def n_ch(self) -> int:
        return self.k // 2


def mle_channel_estimate(pilot_tx, pilot_rx) -> np.ndarray:
    """Per-use ML (least-squares under AWGN) channel estimate.

    h_hat_u = sum_p conj(x_pu) * y_pu / sum_p |x_pu|^2
    """
    tx = np.atleast_2d(np.asarray(pilot_tx))
    rx = np.atleast_2d(np.asarray(pilot_rx))
    if tx.shape != rx.shape or tx.shape[0] == 0:
        raise ValueError("pilot_tx and pilot_rx must be matched nonempty lists")
    tr, ti = tx[:, 0::2], tx[:, 1::2]
    rr, ri = rx[:, 0::2], rx[:, 1::2]
    num_re = np.sum(tr * rr + ti * ri, axis=0)
    num_im = np.sum(tr * ri - ti * rr, axis=0)
    den = np.sum(tr * tr + ti * ti, axis=0)
    if np.any(den == 0):
        raise ValueError("zero pilot energy on some channel use")
    h_hat = np.empty(tx.shape[1], dtype=tx.dtype)
    h_hat[0::2] = num_re / den
    h_hat[1::2] = num_im / den
    return h_hat


def qpsk_mle_ser(h: np.ndarray, noise: NoiseModel, shots: int, k: int,
                 n_eval: int, rng: np.random.Generator,
                 perfect_csi: bool = False) -> float:
    """Message error rate of Gray-coded QPSK with MLE channel estimation.

    Each message carries k bits, two per channel use; a message errs if any
    bit is demodulated incorrectly.  The pilot is the all-ones QPSK point
    repeated `shots` times per use (any fixed known pilot is ML-equivalent).
    """
    qc = QpskConfig(k)
    n = qc.n_ch
    if h.shape[-1] != 2 * n:
        raise ValueError(f"h length {h.shape[-1]} != {2 * n}")

    if perfect_csi:
        h_hat = h
    else:
        if shots < 1:
            raise ValueError("shots must be >= 1")
        pilot_tx = np.full((shots, 2 * n), 1.0 / np.sqrt(2.0))
        pilot_noise = awgn(rng, n, noise.sigma2, size=shots)
        pilot_rx = cmul(h, pilot_tx) + pilot_noise
        h_hat = mle_channel_estimate(pilot_tx, pilot_rx)

    bits = rng.integers(0, 2, size=(n_eval, n, 2))
    point_idx = 2 * bits[..., 0] + bits[..., 1]
    x = QPSK_POINTS[point_idx].reshape(n_eval, 2 * n)
    y = cmul(h, x) + awgn(rng, n, noise.sigma2, size=n_eval)

    # matched filter z = y * conj(h_hat); per-component sign decides each bit
    hr, hi = h_hat[0::2], h_hat[1::2]
    yr, yi = y[:, 0::2], y[:, 1::2]
    z_re = yr * hr + yi * hi
    z_im = -yr * hi + yi * hr
    b1_hat = (z_re <= 0).astype(np.int64)
    b0_hat = (z_im <= 0).astype(np.int64)
    bit_errors = (b0_hat != bits[..., 0]) | (b1_hat != bits[..., 1])
    return float(np.mean(np.any(bit_errors, axis=-1)))


@dataclass
class JointTrainState:
    """Warm-started parameters plus the stored pilot tasks."""

    theta: np.ndarray
    pilot_store: list = field(default_factory=list)
    capacity: int = None  # None = keep everything

    def push(self, task: Task):
        self.pilot_store.append(task)
        if self.capacity is not None and len(self.pilot_store) > self.capacity:
            self.pilot_store.pop(0)


def _joint_train(model: CaeModel, state: JointTrainState, iters: int, lr: float,
                 tasks_per_batch: int, rng: np.random.Generator) -> np.ndarray:
    """SGD on mixed batches drawn across stored tasks, each sample carrying
    its own task's channel."""
    theta = state.theta
    store = state.pilot_store
    dtype = theta.dtype
    for _ in range(iters):
        n_pick = min(tasks_per_batch, len(store))
        idx = rng.choice(len(store), size=n_pick, replace=False)
        onehots, noises, hs = [], [], []
        for i in idx:
            t = store[i]
            for ps in (t.support, t.query):
                onehots.append(one_hot_batch(ps.messages, model.n_messages,
                                             dtype=dtype))
                noises.append(ps.noise.astype(dtype, copy=False))
                hs.append(np.broadcast_to(t.h, ps.noise.shape))
        onehot = np.concatenate(onehots)
        noise = np.concatenate(noises)
        h = np.concatenate(hs).astype(dtype, copy=False)
        _, grads = pipeline_loss_grads(model, theta, onehot, noise, h)
        theta = theta - lr * grads
    return theta


def baseline_cae_sequence(model: CaeModel, mode: str, state, task: Task,
                          train_iters: int, lr: float, rng: np.random.Generator,
                          n_eval: int, eval_rng: np.random.Generator,
                          joint_iters: int = 0, tasks_per_batch: int = 5):
    """One sequence of the scratch or joint CAE baseline; returns (ser, state).

    scratch: fresh init, train_iters SGD steps on the support set, evaluate.
    joint:   push the task, train the warm-started parameters on mixed
             batches over all stored pilots, fine-tune a copy on the current
             support, evaluate; the jointly trained parameters carry forward.
    """
    noise = NoiseModel(task.sigma2)
    if mode == "scratch":
        theta = model.init_like(rng)
        theta = inner_adapt(model, theta, task, train_iters, lr)
        ser = evaluate_ser(model, task.h, noise, n_eval, eval_rng, theta=theta)
        return ser, state
    if mode == "joint":
        state.push(task)
        state.theta = _joint_train(model, state, joint_iters, lr,
                                   tasks_per_batch, rng)
        theta_ft = inner_adapt(model, state.theta, task, train_iters, lr)
        ser = evaluate_ser(model, task.h, noise, n_eval, eval_rng, theta=theta_ft)
        return ser, state
    raise ValueError(f"unknown baseline mode {mode!r}")


def run_scratch_cae(cfg: RunConfig, model: CaeModel = None):
    """Scratch-CAE over the shared task sequence; returns [(sequence, ser)]."""
    if model is None:
        model = cfg.build_model()
    results = []
    for i, h, task in task_sequence(cfg, model):
        ser, _ = baseline_cae_sequence(
            model, "scratch", None, task, cfg.meta.finetune_iters,
            cfg.meta.inner_lr, cfg.substream("scratch-init", cfg.snr_db,
                                             cfg.shots, i),
            cfg.n_eval, cfg.cell_substream("eval", i))
        results.append((i, ser))
    return results


def run_joint_cae(cfg: RunConfig, model: CaeModel = None,
                  store_capacity: int = None, joint_iters: int = None):
    """Joint-CAE over the shared task sequence; returns [(sequence, ser)]."""
    if model is None:
        model = cfg.build_model()
    if joint_iters is None:
        joint_iters = cfg.meta.outer_iters  # compute parity with meta-training
    state = JointTrainState(theta=model.params.copy(), capacity=store_capacity)
    sample_rng = cfg.cell_substream("joint-sample")
    results = []
    for i, h, task in task_sequence(cfg, model):
        ser, state = baseline_cae_sequence(
            model, "joint", state, task, cfg.meta.finetune_iters,
            cfg.meta.inner_lr, sample_rng, cfg.n_eval,
            cfg.cell_substream("eval", i), joint_iters=joint_iters,
            tasks_per_batch=cfg.meta.tasks_per_update)
        results.append((i, ser))
    return results


def run_qpsk_mle(cfg: RunConfig, model: CaeModel = None):
    """QPSK+MLE over the same channel sequence; returns [(sequence, ser)]."""
    if cfg.k != 2 * cfg.n_ch:
        raise ValueError("qpsk_mle requires k = 2 * n_ch")
    if model is None:
        model = cfg.build_model()
    noise = NoiseModel(cfg.sigma2)
    results = []
    for i, h, task in task_sequence(cfg, model):
        ser = qpsk_mle_ser(h.astype(np.float64), noise, cfg.shots, cfg.k,
                           cfg.n_eval, cfg.cell_substream("qpsk-pilots", i))
        results.append((i, ser))
    return results
