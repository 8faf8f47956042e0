"""Channel autoencoder: one-hot messages in, power-normalized codewords out,
decoding to message probabilities, end-to-end loss/gradient through the
simulated channel, and Monte-Carlo SER evaluation.

Backbone architecture (hidden width 256 by default):
    encoder: 2^k -> 256 -> 256 -> 2*n_ch
    decoder: 2*n_ch -> 256 -> 256 -> 256 -> 2^k (softmax)

Messages are 1-based symbols m in {1, ..., 2^k}.  Encoder and decoder
parameters are concatenated into one flat vector with a fixed split point so
the whole system trains as a single parameter vector.
"""

from dataclasses import dataclass

import numpy as np

from .channel import NoiseModel, awgn, cmul, cmul_conj
from .numerics import (ACT_LEAKY, ACT_LINEAR, ACT_SOFTMAX, MlpSpec, init_params,
                       mlp_backward, mlp_forward, softmax)

NORM_BATCH = "batch"
NORM_EXAMPLE = "example"
# guards the power-normalization sqrt at all-zero output; small enough that
# the relative power error eps/energy stays below 1e-9 for any realistic
# batch, yet still a normal number in float32
NORM_EPS = 1e-30


@dataclass
class PilotSample:
    """One labeled pilot: the message sent and the realized channel noise.

    The noise (not the received signal) is stored so the pilot can be
    re-encoded under evolving encoder parameters with the noise replayed.
    """

    message: int
    noise_draw: np.ndarray


@dataclass
class PilotSet:
    """Column-oriented batch of pilot samples."""

    messages: np.ndarray    # (B,) ints, 1-based
    noise: np.ndarray       # (B, 2*n_ch)

    def __len__(self):
        return len(self.messages)

    @classmethod
    def from_samples(cls, samples) -> "PilotSet":
        return cls(messages=np.array([s.message for s in samples], dtype=np.int64),
                   noise=np.stack([s.noise_draw for s in samples]))


@dataclass
class CaeModel:
    k: int
    n_ch: int
    encoder_spec: MlpSpec
    decoder_spec: MlpSpec
    params: np.ndarray
    norm: str = NORM_BATCH

    @classmethod
    def build(cls, k: int, n_ch: int, rng: np.random.Generator, hidden: int = 256,
              dtype=np.float64, norm: str = NORM_BATCH,
              encoder_output: str = ACT_LINEAR) -> "CaeModel":
        m = 2 ** k
        enc = MlpSpec((m, hidden, hidden, 2 * n_ch), output_activation=encoder_output)
        dec = MlpSpec((2 * n_ch, hidden, hidden, hidden, m),
                      output_activation=ACT_SOFTMAX)
        theta = np.concatenate([init_params(enc, rng, dtype=dtype),
                                init_params(dec, rng, dtype=dtype)])
        return cls(k=k, n_ch=n_ch, encoder_spec=enc, decoder_spec=dec,
                   params=theta, norm=norm)

    @property
    def n_messages(self) -> int:
        return 2 ** self.k

    @property
    def split(self) -> int:
        return self.encoder_spec.n_params

    @property
    def n_params(self) -> int:
        return self.encoder_spec.n_params + self.decoder_spec.n_params

    def with_params(self, theta: np.ndarray) -> "CaeModel":
        return CaeModel(k=self.k, n_ch=self.n_ch, encoder_spec=self.encoder_spec,
                        decoder_spec=self.decoder_spec, params=theta, norm=self.norm)

    def init_like(self, rng: np.random.Generator) -> np.ndarray:
        dtype = self.params.dtype
        return np.concatenate([init_params(self.encoder_spec, rng, dtype=dtype),
                               init_params(self.decoder_spec, rng, dtype=dtype)])


def one_hot(m: int, k: int) -> np.ndarray:
    """One-hot vector of message m in {1, ..., 2^k}."""
    n = 2 ** k
    if not 1 <= m <= n:
        raise ValueError(f"message {m} out of range 1..{n}")
    v = np.zeros(n)
    v[m - 1] = 1.0
    return v


def one_hot_batch(messages: np.ndarray, n_messages: int, dtype=np.float64) -> np.ndarray:
    idx = np.asarray(messages) - 1
    if idx.min() < 0 or idx.max() >= n_messages:
        raise ValueError("message out of range")
    return np.eye(n_messages, dtype=dtype)[idx]


def normalize_power(raw: np.ndarray, n_ch: int, norm: str = NORM_BATCH,
                    repeats: int = 1):
    """Scale raw encoder outputs so mean power per complex use is 1.

    Batch mode uses a single scalar over the whole batch (the default,
    matching an average-power constraint); example mode normalizes each
    codeword individually.  repeats > 1 means each row is transmitted that
    many times, so the batch energy counts each row repeats times.
    Returns (x, scale, energy) for the backward pass.
    """
    if norm == NORM_BATCH:
        energy = repeats * np.sum(raw * raw, axis=(-1, -2), keepdims=True) + NORM_EPS
        batch = raw.shape[-2] * repeats
        scale = np.sqrt(batch * n_ch / energy)
    elif norm == NORM_EXAMPLE:
        energy = np.sum(raw * raw, axis=-1, keepdims=True) + NORM_EPS
        scale = np.sqrt(n_ch / energy)
    else:
        raise ValueError(f"unknown norm mode {norm!r}")
    return raw * scale, scale, energy


def _normalize_backward(g_x, raw, scale, energy, norm, repeats: int = 1):
    # x = c(raw) * raw with c = sqrt(K / E); dL/draw = c*g - (c/E)*raw*sum(g*raw)
    # with repeats > 1, g_x must already be summed over the repeat groups; in
    # batch mode the global energy-correction term then recurs once per
    # duplicate row, hence the extra repeats factor
    if norm == NORM_BATCH:
        inner = np.sum(g_x * raw, axis=(-1, -2), keepdims=True)
        return scale * g_x - (repeats * scale / energy) * raw * inner
    inner = np.sum(g_x * raw, axis=-1, keepdims=True)
    return scale * g_x - (scale / energy) * raw * inner


def encode(model: CaeModel, messages, theta: np.ndarray = None) -> np.ndarray:
    """Encode a batch of messages into power-normalized codewords (B, 2*n_ch)."""
    theta = model.params if theta is None else theta
    msgs = np.atleast_1d(np.asarray(messages, dtype=np.int64))
    if msgs.size == 0:
        raise ValueError("empty message batch")
    onehot = one_hot_batch(msgs, model.n_messages, dtype=theta.dtype)
    raw, _ = mlp_forward(model.encoder_spec, theta[..., :model.split], onehot)
    x, _, _ = normalize_power(raw, model.n_ch, model.norm)
    return x


def decode(model: CaeModel, y: np.ndarray, theta: np.ndarray = None) -> np.ndarray:
    """Decode received signal(s) into message probability vectors."""
    theta = model.params if theta is None else theta
    if y.shape[-1] != 2 * model.n_ch:
        raise ValueError(f"received length {y.shape[-1]} != {2 * model.n_ch}")
    probs, _ = mlp_forward(model.decoder_spec, theta[..., model.split:], y)
    return probs


def codebook(model: CaeModel, theta: np.ndarray = None) -> np.ndarray:
    """Fixed per-message codewords: encode of the full 2^k-message batch.

    The normalization scalar is frozen from this batch, so each message has a
    deterministic codeword during SER evaluation and constellation export.
    """
    return encode(model, np.arange(1, model.n_messages + 1), theta=theta)


def _as_pilot_set(pilots) -> PilotSet:
    if isinstance(pilots, PilotSet):
        return pilots
    return PilotSet.from_samples(list(pilots))


def pipeline_loss_grads(model: CaeModel, theta: np.ndarray, onehot: np.ndarray,
                        noise: np.ndarray, h: np.ndarray, want_loss: bool = True,
                        repeats: int = 1, mean_grads: bool = False,
                        grads_out: np.ndarray = None):
    """End-to-end loss and exact parameter gradient, batched.

    theta: (P,) or (T, P); onehot: (..., B, 2^k) doubling as the label
    one-hots; noise: (..., B*repeats, 2n); h: broadcastable to the received
    signal.  repeats > 1 declares that row i of onehot is transmitted repeats
    times, received under noise rows i*repeats..(i+1)*repeats-1; the encoder
    then runs on the distinct rows only.  The loss is the mean cross-entropy
    over all receptions; gradients flow through the power normalization and
    the complex channel product (h and noise held fixed).  want_loss=False
    skips the loss value (returned as None) on gradient-only hot paths.
    mean_grads=True returns the gradient averaged over the leading (stacked
    task) axes as one flat vector, summed inside the layer matrix products.
    grads_out supplies a preallocated gradient buffer for hot loops.
    """
    split = model.split
    enc_spec, dec_spec = model.encoder_spec, model.decoder_spec
    batch = onehot.shape[-2] * repeats
    d = 2 * model.n_ch

    raw, enc_cache = mlp_forward(enc_spec, theta[..., :split], onehot)
    x, scale, energy = normalize_power(raw, model.n_ch, model.norm,
                                       repeats=repeats)
    if repeats > 1:
        x_full = np.repeat(x, repeats, axis=-2)
        labels = np.repeat(onehot, repeats, axis=-2)
    else:
        x_full, labels = x, onehot
    y = cmul(h, x_full) + noise
    # decoder forward up to logits (softmax is fused into the loss)
    probs, dec_cache = mlp_forward(dec_spec, theta[..., split:], y)
    logits = dec_cache[2][-1]  # pre-activations of the final (softmax) layer

    if want_loss:
        m = logits.max(axis=-1, keepdims=True)
        lse = m[..., 0] + np.log(np.exp(logits - m).sum(axis=-1))
        true_logit = np.sum(logits * labels, axis=-1)
        loss = np.mean(lse - true_logit, axis=-1)
    else:
        loss = None

    g_logits = probs - labels
    lead = np.broadcast_shapes(theta.shape[:-1], g_logits.shape[:-2])
    reduce = mean_grads and len(lead) > 0
    # the mean over stacked tasks folds into the loss normalizer, since the
    # parameter gradient is linear in the output gradient
    denom = batch * int(np.prod(lead)) if reduce else batch
    g_logits /= labels.dtype.type(denom)
    grad_lead = () if reduce else lead
    if grads_out is not None and grads_out.shape == grad_lead + (model.n_params,):
        grads = grads_out
    else:
        grads = np.empty(grad_lead + (model.n_params,), dtype=probs.dtype)
    _, g_y = mlp_backward(dec_spec, theta[..., split:], dec_cache,
                          g_logits, grad_wrt="logits", out=grads[..., split:],
                          reduce_lead=reduce)
    g_x = cmul_conj(h, g_y)
    if repeats > 1:
        # collapse the repeat groups; the encoder saw each row once
        g_x = g_x.reshape(g_x.shape[:-2] + (-1, repeats, d)).sum(axis=-2)
    g_raw = _normalize_backward(g_x, raw, scale, energy, model.norm,
                                repeats=repeats)
    mlp_backward(enc_spec, theta[..., :split], enc_cache, g_raw,
                 out=grads[..., :split], reduce_lead=reduce)
    return loss, grads


def loss_and_grads(model: CaeModel, pilots, h: np.ndarray,
                   theta: np.ndarray = None):
    """Mean cross-entropy over pilot samples and its exact gradient.

    pilots may be a PilotSet or a list of PilotSample; h is the (fixed)
    channel realization of length 2*n_ch, or per-sample (B, 2*n_ch).
    """
    theta = model.params if theta is None else theta
    ps = _as_pilot_set(pilots)
    if len(ps) == 0:
        raise ValueError("pilot set is empty")
    onehot = one_hot_batch(ps.messages, model.n_messages, dtype=theta.dtype)
    loss, grads = pipeline_loss_grads(model, theta, onehot,
                                      ps.noise.astype(theta.dtype, copy=False), h)
    return float(loss), grads


def evaluate_ser(model: CaeModel, h: np.ndarray, noise: NoiseModel, n_eval: int,
                 rng: np.random.Generator, theta: np.ndarray = None) -> float:
    """Fraction of uniformly drawn messages decoded incorrectly (argmax rule,
    ties broken by lowest index)."""
    if n_eval < 1:
        raise ValueError("n_eval must be >= 1")
    theta = model.params if theta is None else theta
    book = codebook(model, theta=theta)
    idx = rng.integers(0, model.n_messages, size=n_eval)
    x = book[idx]
    noise_draw = awgn(rng, model.n_ch, noise.sigma2, size=n_eval, dtype=x.dtype)
    y = cmul(h, x) + noise_draw
    probs = decode(model, y, theta=theta)
    predicted = np.argmax(probs, axis=-1)
    return float(np.mean(predicted != idx))
