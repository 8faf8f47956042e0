"""MAML inner/outer loops, the FIFO task buffer, and the online sequence
protocol.

One task = one channel realization's pilot data (balanced support and query
sets).  Meta-training is first-order MAML: the outer gradient is the
query-set gradient evaluated at the task-adapted parameters, second-order
terms dropped.  The online loop, per sequence i:

    1. draw channel h_i from the AR(1) fading process
    2. transmit pilots -> task (support + query noise realizations)
    3. fine-tune the current meta-initialization on the support set
    4. measure SER of the fine-tuned model under h_i
    5. push the task into the FIFO buffer
    6. meta-train on buffered tasks to produce the next initialization

The buffer push precedes meta-training, so meta-training runs from the very
first sequence (on a one-task buffer).  Step 6 spends that sequence's slice
of the run's total outer-iteration budget; optimizer state and the learning
rate schedule continue across sequences.
"""

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from .cae import CaeModel, PilotSet, evaluate_ser, one_hot_batch, pipeline_loss_grads
from .channel import FadingProcess, NoiseModel, awgn
from .numerics import AdamState, adam_step_inplace, step_lr


@dataclass
class Task:
    """Pilot data for one channel realization."""

    h: np.ndarray           # (2*n_ch,)
    support: PilotSet
    query: PilotSet
    sigma2: float


class TaskBuffer:
    """Bounded FIFO of tasks; pushing past capacity evicts the oldest."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.entries = []

    def push(self, task: Task) -> "TaskBuffer":
        self.entries.append(task)
        if len(self.entries) > self.capacity:
            self.entries.pop(0)
        return self

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i):
        return self.entries[i]


def buffer_push(buffer: TaskBuffer, task: Task) -> TaskBuffer:
    return buffer.push(task)


@dataclass
class MetaConfig:
    inner_lr: float = 0.05
    outer_lr: float = 1e-4
    adapt_steps: int = 1
    outer_iters: int = 6000
    tasks_per_update: int = 5
    lr_step_size: int = 300
    lr_gamma: float = 0.9
    finetune_iters: int = 1000
    buffer_capacity: int = 15

    def validate(self):
        for name in ("inner_lr", "outer_lr", "adapt_steps", "outer_iters",
                     "tasks_per_update", "lr_step_size", "finetune_iters",
                     "buffer_capacity"):
            if getattr(self, name) < 0:
                raise ValueError(f"MetaConfig.{name} must be non-negative")


def make_pilot_task(model: CaeModel, h: np.ndarray, sigma2: float, shots: int,
                    rng: np.random.Generator, query_shots: int = None) -> Task:
    """Draw support and query pilot noise for every message.

    Support noise is drawn first, then query noise, so the task is fully
    determined by the rng stream state.  Only the noise is stored: adaptation
    re-encodes the pilots under the evolving encoder with the noise replayed.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    query_shots = shots if query_shots is None else query_shots
    m = model.n_messages
    dtype = model.params.dtype

    def draw(n_shots):
        messages = np.repeat(np.arange(1, m + 1), n_shots)
        noise = awgn(rng, model.n_ch, sigma2, size=len(messages), dtype=dtype)
        return PilotSet(messages=messages, noise=noise)

    return Task(h=np.asarray(h, dtype=dtype), support=draw(shots),
                query=draw(query_shots), sigma2=float(sigma2))


def _pilot_batch(messages: np.ndarray, n_messages: int, dtype):
    """One-hot inputs for a pilot batch, deduplicated when possible.

    Returns (onehot, repeats).  When the messages are the canonical pattern
    (every message repeated a fixed number of times, grouped), the one-hots
    cover the distinct messages only and repeats carries the multiplicity, so
    the encoder runs on 2^k rows instead of 2^k * shots.
    """
    b = len(messages)
    if b % n_messages == 0:
        r = b // n_messages
        canonical = np.repeat(np.arange(1, n_messages + 1), r)
        if np.array_equal(messages, canonical):
            return np.eye(n_messages, dtype=dtype), r
    return one_hot_batch(messages, n_messages, dtype=dtype), 1


def _stack_tasks(model: CaeModel, tasks, which: str, dtype):
    """Stack same-shape task pilot sets into batched arrays for stacked grads.

    Returns (onehot, noise, h, repeats) with noise (T, B, 2n), h (T, 1, 2n)
    and onehot shared across tasks when every task carries the canonical
    repeated-message pilot pattern.
    """
    sets = [getattr(t, which) for t in tasks]
    first = sets[0].messages
    if all(np.array_equal(s.messages, first) for s in sets[1:]):
        onehot, repeats = _pilot_batch(first, model.n_messages, dtype)
    else:
        onehot = np.stack([one_hot_batch(s.messages, model.n_messages, dtype=dtype)
                           for s in sets])
        repeats = 1
    noise = np.stack([s.noise.astype(dtype, copy=False) for s in sets])
    h = np.stack([t.h.astype(dtype, copy=False) for t in tasks])[:, None, :]
    return onehot, noise, h, repeats


def inner_adapt(model: CaeModel, theta: np.ndarray, task: Task, steps: int,
                alpha: float) -> np.ndarray:
    """Full-batch SGD on the task's support loss; returns a new vector."""
    theta = theta.copy()
    onehot, repeats = _pilot_batch(task.support.messages, model.n_messages,
                                   theta.dtype)
    noise = task.support.noise.astype(theta.dtype, copy=False)
    alpha = theta.dtype.type(alpha)
    for _ in range(steps):
        _, grads = pipeline_loss_grads(model, theta, onehot, noise, task.h,
                                       want_loss=False, repeats=repeats)
        grads *= -alpha
        grads += theta
        theta = grads
    return theta


def _outer_step_stacked(model: CaeModel, theta: np.ndarray, support,
                        query, config: MetaConfig,
                        adam_state: AdamState, lr: float, buffers=None):
    """First-order MAML update from pre-stacked task batches.

    support and query are (onehot, noise, h, repeats) tuples as produced by
    _stack_tasks: adapt theta per task on the support set, take query-set
    gradients at the adapted parameters, Adam-update theta on their mean.
    buffers, when given, is a dict of reusable gradient arrays keyed by
    shape (hot-loop allocation reuse; contents are overwritten).
    """
    dtype = theta.dtype
    sup_onehot, sup_noise, sup_h, sup_rep = support
    qry_onehot, qry_noise, qry_h, qry_rep = query
    buffers = {} if buffers is None else buffers

    def buf(key, shape):
        arr = buffers.get(key)
        if arr is None:
            arr = buffers[key] = np.empty(shape, dtype=dtype)
        return arr

    adapted = theta
    if config.inner_lr != 0:  # alpha = 0 adapts to theta itself, exactly
        for step in range(config.adapt_steps):
            # two rotating buffers: never write grads into the array that
            # currently holds the adapted parameters being differentiated
            grads = buf(("sup", step % 2),
                        (len(sup_noise), theta.shape[-1]))
            _, grads = pipeline_loss_grads(model, adapted, sup_onehot, sup_noise,
                                           sup_h, want_loss=False,
                                           repeats=sup_rep, grads_out=grads)
            grads *= dtype.type(-config.inner_lr)
            grads += adapted  # broadcasts theta to (T, P)
            adapted = grads

    _, meta_grad = pipeline_loss_grads(model, adapted, qry_onehot, qry_noise,
                                       qry_h, want_loss=False, repeats=qry_rep,
                                       mean_grads=True,
                                       grads_out=buf(("meta",), (theta.shape[-1],)))
    theta_out = buffers.pop("theta_out", None)
    return adam_step_inplace(adam_state, theta, meta_grad, lr, out=theta_out)


def outer_meta_step(model: CaeModel, theta: np.ndarray, tasks, config: MetaConfig,
                    adam_state: AdamState, lr: float):
    """One first-order MAML update from a batch of tasks.

    Per task: adapt theta on the support set (adapt_steps SGD steps at
    inner_lr), then take the query-set gradient at the adapted parameters.
    The meta-gradient is the mean of those query gradients; theta is updated
    with Adam at the scheduler-provided lr.
    """
    if not tasks:
        raise ValueError("outer_meta_step needs at least one task")
    dtype = theta.dtype
    support = _stack_tasks(model, tasks, "support", dtype)
    query = _stack_tasks(model, tasks, "query", dtype)
    return _outer_step_stacked(model, theta, support, query,
                               config, adam_state, lr)


def meta_train(model: CaeModel, theta: np.ndarray, buffer: TaskBuffer,
               config: MetaConfig, rng: np.random.Generator,
               iter_offset: int = 0, adam: AdamState = None) -> np.ndarray:
    """Run config.outer_iters meta-updates over tasks sampled from the buffer.

    Tasks are sampled uniformly, without replacement when the buffer holds at
    least tasks_per_update tasks, with replacement otherwise.  Adam state and
    the step-decay schedule start fresh by default; callers that split one
    meta-training budget across calls pass iter_offset (schedule continuation)
    and their own adam state (updated in place).
    """
    if len(buffer) == 0:
        raise ValueError("meta_train requires a nonempty buffer")
    n = len(buffer)
    k = config.tasks_per_update
    if adam is None:
        adam = AdamState.fresh(theta.shape[-1], dtype=theta.dtype)
    # the buffer is fixed for the whole call, so stack every task once and
    # index the stacks per iteration instead of restacking
    tasks = [buffer[i] for i in range(n)]
    sup_onehot, sup_noise, sup_h, sup_rep = _stack_tasks(model, tasks,
                                                         "support", theta.dtype)
    qry_onehot, qry_noise, qry_h, qry_rep = _stack_tasks(model, tasks,
                                                         "query", theta.dtype)
    sup_shared = sup_onehot.ndim == 2  # one-hot batch shared across tasks
    qry_shared = qry_onehot.ndim == 2
    buffers = {}
    # ping-pong output buffers so the updated theta never aliases the current;
    # the caller's array is never written to
    original = theta
    prev = None
    for it in range(config.outer_iters):
        idx = rng.choice(n, size=k, replace=n < k)
        support = (sup_onehot if sup_shared else sup_onehot[idx],
                   sup_noise[idx], sup_h[idx], sup_rep)
        query = (qry_onehot if qry_shared else qry_onehot[idx],
                 qry_noise[idx], qry_h[idx], qry_rep)
        lr = step_lr(config.outer_lr, iter_offset + it,
                     config.lr_step_size, config.lr_gamma)
        if prev is not None and prev is not theta and prev is not original:
            buffers["theta_out"] = prev
        prev = theta
        adam, theta = _outer_step_stacked(model, theta, support, query,
                                          config, adam, lr, buffers=buffers)
    return theta


@dataclass
class RunConfig:
    """One online run: a single (method-agnostic) experiment cell."""

    k: int = 4
    n_ch: int = 2
    snr_db: float = 5.0
    shots: int = 1
    n_sequences: int = 300
    rho: float = 0.99
    n_eval: int = 10000
    seed: int = 0
    meta: MetaConfig = field(default_factory=MetaConfig)
    hidden: int = 256
    dtype: type = np.float64
    query_shots: int = None

    @property
    def sigma2(self) -> float:
        return float(10.0 ** (-self.snr_db / 10.0))

    def substream(self, *labels) -> np.random.Generator:
        return rngmod.substream(self.seed, *labels)

    def cell_substream(self, purpose, *extra) -> np.random.Generator:
        # keyed by (seed, purpose, snr, shots, ...), never by method
        return self.substream(purpose, self.snr_db, self.shots, *extra)

    def build_model(self) -> CaeModel:
        return CaeModel.build(self.k, self.n_ch, self.cell_substream("init"),
                              hidden=self.hidden, dtype=self.dtype)


def task_sequence(cfg: RunConfig, model: CaeModel):
    """Yield (sequence_index, h, task) with draws keyed only by
    (seed, snr, shots, sequence) so every method sees the same channels and
    pilot noise."""
    fading = FadingProcess(cfg.rho, cfg.n_ch, cfg.cell_substream("channel"),
                           dtype=cfg.dtype)
    for i in range(1, cfg.n_sequences + 1):
        h = fading.step()
        task = make_pilot_task(model, h, cfg.sigma2, cfg.shots,
                               cfg.cell_substream("pilots", i),
                               query_shots=cfg.query_shots)
        yield i, h, task


def theta_hash(theta: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(theta).tobytes()).hexdigest()


@dataclass
class SequenceResult:
    sequence: int
    ser_after_adapt: float
    theta_snapshot_hash: str


def _chunk_schedule(outer_iters: int, n_sequences: int):
    """Split a total outer-iteration budget uniformly over the sequences.

    Returns per-sequence chunk sizes summing to outer_iters; any remainder
    goes to the earliest sequences so the freshest buffer states get it."""
    base, extra = divmod(outer_iters, n_sequences)
    return [base + (1 if i < extra else 0) for i in range(n_sequences)]


def online_run(cfg: RunConfig, model: CaeModel = None,
               return_final_theta: bool = False):
    """Run the full online meta-learning protocol; returns per-sequence results.

    config.meta.outer_iters is the total meta-training budget for the whole
    run: it is split uniformly over the sequences, and the Adam state plus the
    step-decay schedule carry across sequences, so the updates interleaved
    with the sequence loop form one continuous meta-training run over the
    evolving buffer.

    With return_final_theta=True also returns the last sequence's fine-tuned
    parameter vector (for constellation export)."""
    cfg.meta.validate()
    if model is None:
        model = cfg.build_model()
    theta = model.params
    theta_star = theta
    buffer = TaskBuffer(cfg.meta.buffer_capacity)
    sample_rng = cfg.cell_substream("task-sampling")
    noise = NoiseModel(cfg.sigma2)
    adam = AdamState.fresh(theta.shape[-1], dtype=theta.dtype)
    chunks = _chunk_schedule(cfg.meta.outer_iters, cfg.n_sequences)
    done = 0
    results = []
    for i, h, task in task_sequence(cfg, model):
        theta_star = inner_adapt(model, theta, task, cfg.meta.finetune_iters,
                                 cfg.meta.inner_lr)
        ser = evaluate_ser(model, h, noise, cfg.n_eval,
                           cfg.cell_substream("eval", i), theta=theta_star)
        buffer.push(task)
        chunk = chunks[i - 1]
        if chunk > 0:
            per_call = replace(cfg.meta, outer_iters=chunk)
            theta = meta_train(model, theta, buffer, per_call, sample_rng,
                               iter_offset=done, adam=adam)
            done += chunk
        results.append(SequenceResult(i, ser, theta_hash(theta_star)))
    if return_final_theta:
        return results, theta_star
    return results
