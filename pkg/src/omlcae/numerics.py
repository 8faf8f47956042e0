"""Minimal dense-network engine: forward, exact backprop, optimizers.

Parameters live in a single flat vector ("ParamVector") with a fixed layout:
for each layer, the weight matrix (row-major, shape out x in) followed by the
bias vector.  Flat storage keeps parameter arithmetic (SGD / Adam / MAML
updates) trivial and layout-stable.

All core routines accept arbitrary leading axes on both the parameter vector
and the inputs, so a stack of T task-adapted parameter vectors of shape (T, P)
can be pushed through the network against inputs of shape (T, B, d) in one
call.  This is what makes meta-training tractable in pure NumPy.
"""

from dataclasses import dataclass, field

import numpy as np

LEAKY_SLOPE = 0.01  # negative slope of the leaky rectifier

ACT_LINEAR = "linear"
ACT_SOFTMAX = "softmax"
ACT_LEAKY = "leaky_relu"
_OUTPUT_ACTS = (ACT_LINEAR, ACT_SOFTMAX, ACT_LEAKY)


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a dense network with leaky-ReLU hidden layers."""

    layer_dims: tuple
    output_activation: str = ACT_LINEAR

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise ValueError("MlpSpec needs at least 2 layer_dims")
        if any(d < 1 for d in dims):
            raise ValueError(f"layer_dims must be >= 1, got {dims}")
        if self.output_activation not in _OUTPUT_ACTS:
            raise ValueError(
                f"output_activation must be one of {_OUTPUT_ACTS}, "
                f"got {self.output_activation!r}"
            )

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def n_params(self) -> int:
        dims = self.layer_dims
        return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(self.n_layers))

    def layout(self):
        """Per-layer (weight_slice, bias_slice, out_dim, in_dim) tuples."""
        out = []
        offset = 0
        dims = self.layer_dims
        for i in range(self.n_layers):
            d_in, d_out = dims[i], dims[i + 1]
            w_sl = slice(offset, offset + d_out * d_in)
            offset += d_out * d_in
            b_sl = slice(offset, offset + d_out)
            offset += d_out
            out.append((w_sl, b_sl, d_out, d_in))
        return out


def unpack_params(spec: MlpSpec, theta: np.ndarray):
    """Split a flat ParamVector (..., P) into [(W (..., out, in), b (..., out))]."""
    if theta.shape[-1] != spec.n_params:
        raise ValueError(
            f"param vector length {theta.shape[-1]} != expected {spec.n_params}"
        )
    lead = theta.shape[:-1]
    layers = []
    for w_sl, b_sl, d_out, d_in in spec.layout():
        w = theta[..., w_sl].reshape(lead + (d_out, d_in))
        b = theta[..., b_sl]
        layers.append((w, b))
    return layers


def init_params(spec: MlpSpec, rng: np.random.Generator,
                dtype=np.float64) -> np.ndarray:
    """Uniform fan-in init: W ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)], b = 0."""
    theta = np.zeros(spec.n_params, dtype=dtype)
    for w_sl, b_sl, d_out, d_in in spec.layout():
        bound = 1.0 / np.sqrt(d_in)
        theta[w_sl] = rng.uniform(-bound, bound, size=d_out * d_in)
    return theta


def leaky_relu(z: np.ndarray) -> np.ndarray:
    # equivalent to where(z > 0, z, slope*z) since 0 < slope < 1
    return np.maximum(z, np.asarray(z).dtype.type(LEAKY_SLOPE) * z)


def _leaky_grad(z: np.ndarray, dtype) -> np.ndarray:
    f = np.greater(z, 0).astype(dtype)
    f *= dtype.type(1.0 - LEAKY_SLOPE)
    f += dtype.type(LEAKY_SLOPE)
    return f


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _matmul(a: np.ndarray, b: np.ndarray, out: np.ndarray = None) -> np.ndarray:
    """matmul that prefers flat 2-D BLAS calls over strided batched kernels.

    Stacked operands with a small leading axis go through a per-slice dot
    loop, and a stack against a plain matrix is flattened into one call;
    both are markedly faster than np.matmul's batched path at these sizes.
    """
    if a.ndim == 3 and b.ndim == 2:
        flat = np.matmul(a.reshape(-1, a.shape[-1]), b)
        res = flat.reshape(a.shape[:-1] + (b.shape[-1],))
        if out is not None:
            out[...] = res
            return out
        return res
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] == b.shape[0] <= 8:
        if out is None:
            out = np.empty(a.shape[:-1] + (b.shape[-1],),
                           dtype=np.result_type(a, b))
        for i in range(a.shape[0]):
            np.dot(a[i], b[i], out=out[i])
        return out
    return np.matmul(a, b, out=out) if out is not None else np.matmul(a, b)


def mlp_forward(spec: MlpSpec, theta: np.ndarray, x: np.ndarray):
    """Forward pass.

    x may be a single vector (d0,) or carry leading batch/task axes
    (..., B, d0).  Returns (output, cache); the cache holds the unpacked
    layers, per-layer inputs and pre-activations, and is consumed by
    mlp_backward.
    """
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[-1] != spec.layer_dims[0]:
        raise ValueError(
            f"input dim {a.shape[-1]} != layer_dims[0]={spec.layer_dims[0]}"
        )
    layers = unpack_params(spec, theta)
    inputs = []   # activation feeding each layer
    preacts = []  # z = a @ W^T + b per layer
    n = spec.n_layers
    for i, (w, b) in enumerate(layers):
        inputs.append(a)
        z = _matmul(a, np.swapaxes(w, -1, -2)) + b[..., None, :]
        preacts.append(z)
        if i < n - 1:
            a = leaky_relu(z)
        else:
            if spec.output_activation == ACT_SOFTMAX:
                a = softmax(z)
            elif spec.output_activation == ACT_LEAKY:
                a = leaky_relu(z)
            else:
                a = z
    cache = (layers, inputs, preacts, single)
    out = a[0] if single else a
    return out, cache


def mlp_backward(spec: MlpSpec, theta: np.ndarray, cache, output_grad: np.ndarray,
                 grad_wrt: str = "output", out: np.ndarray = None,
                 reduce_lead: bool = False):
    """Exact reverse-mode gradient through the network.

    output_grad is dL/d(output) by default; pass grad_wrt="logits" to start
    from dL/d(pre-activation of the last layer), which is what a fused
    softmax+cross-entropy loss produces.  Returns (param_grad, input_grad)
    with the same leading axes as the forward inputs.  A preallocated
    param-gradient array (or view) may be supplied via ``out``.

    reduce_lead=True sums the parameter gradient over the leading (stacked
    task) axes into a single flat vector, which folds the per-task weight
    gradients into one flat matrix product; input_grad stays per-task.
    """
    layers, inputs, preacts, single = cache
    g = output_grad[None, :] if single else output_grad
    n = spec.n_layers
    dtype = np.dtype(g.dtype)

    lead = np.broadcast_shapes(theta.shape[:-1], g.shape[:-2])
    grad_lead = () if reduce_lead else lead
    if out is None:
        param_grad = np.empty(grad_lead + (spec.n_params,), dtype=dtype)
    else:
        if out.shape != grad_lead + (spec.n_params,):
            raise ValueError("out array has wrong shape")
        param_grad = out
    layout = spec.layout()

    # gradient w.r.t. the last layer's pre-activation
    if grad_wrt == "logits":
        delta = g
    else:
        z = preacts[-1]
        if spec.output_activation == ACT_SOFTMAX:
            p = softmax(z)
            delta = p * (g - np.sum(g * p, axis=-1, keepdims=True))
        elif spec.output_activation == ACT_LEAKY:
            delta = g * _leaky_grad(z, dtype)
        else:
            delta = g

    for i in range(n - 1, -1, -1):
        w, _ = layers[i]
        a_in = inputs[i]
        w_sl, b_sl, d_out, d_in = layout[i]
        dw = param_grad[..., w_sl].reshape(grad_lead + (d_out, d_in))
        if reduce_lead:
            d2 = delta.reshape(-1, d_out)
            if a_in.ndim == delta.ndim:
                np.dot(d2.T, a_in.reshape(-1, d_in), out=dw)
            else:
                # input shared across the stacked axes: sum deltas first
                np.dot(delta.sum(axis=tuple(range(delta.ndim - 2))).T,
                       a_in, out=dw)
            np.sum(d2, axis=0, out=param_grad[b_sl])
        else:
            _matmul(np.swapaxes(delta, -1, -2), a_in, out=dw)
            np.sum(delta, axis=-2, out=param_grad[..., b_sl])
        g_prev = _matmul(delta, w)
        if i > 0:
            g_prev *= _leaky_grad(preacts[i - 1], dtype)  # freshly owned
            delta = g_prev
    input_grad = g_prev[0] if single else g_prev
    if single and not reduce_lead:
        param_grad = param_grad.reshape(spec.n_params)
    return param_grad, input_grad


def softmax_cross_entropy(logits: np.ndarray, label: int):
    """Stable -log softmax(logits)[label] and its gradient w.r.t. logits."""
    logits = np.asarray(logits)
    if not 0 <= label < logits.shape[-1]:
        raise ValueError(f"label {label} out of range for {logits.shape[-1]} classes")
    m = logits.max()
    lse = m + np.log(np.exp(logits - m).sum())
    loss = lse - logits[label]
    grad = softmax(logits)
    grad[label] -= 1.0
    return float(loss), grad


def sgd_step(params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    if params.shape != grad.shape:
        raise ValueError(f"shape mismatch: {params.shape} vs {grad.shape}")
    return params - lr * grad


@dataclass
class AdamState:
    """Moment estimates for Adam; create with AdamState.fresh(n)."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    scratch: np.ndarray = field(default=None, repr=False, compare=False)

    @classmethod
    def fresh(cls, n_params: int, dtype=np.float64, **kwargs) -> "AdamState":
        return cls(m=np.zeros(n_params, dtype=dtype),
                   v=np.zeros(n_params, dtype=dtype), **kwargs)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray, lr: float):
    """One Adam step with bias correction.  Pure: returns (new_state, new_params)."""
    if params.shape != grad.shape or state.m.shape != params.shape:
        raise ValueError("adam_step: shape mismatch")
    t = state.t + 1
    dtype = params.dtype
    # elementwise work with out= to keep temporaries off the hot path
    m = np.multiply(state.m, dtype.type(state.beta1))
    m += dtype.type(1.0 - state.beta1) * grad
    v = np.multiply(state.v, dtype.type(state.beta2))
    v += dtype.type(1.0 - state.beta2) * grad * grad
    update = np.sqrt(v / dtype.type(1.0 - state.beta2 ** t))
    update += dtype.type(state.epsilon)
    np.divide(m, update, out=update)
    update *= dtype.type(lr / (1.0 - state.beta1 ** t))
    new_params = params - update
    new_state = AdamState(m=m, v=v, t=t, beta1=state.beta1,
                          beta2=state.beta2, epsilon=state.epsilon)
    return new_state, new_params


def adam_step_inplace(state: AdamState, params: np.ndarray, grad: np.ndarray,
                      lr: float, out: np.ndarray = None):
    """Adam step that mutates the moment state in place (hot-loop variant).

    Produces bitwise the same result as adam_step but reuses a scratch
    buffer instead of allocating temporaries; returns (state, new_params)
    for signature parity.  out, when given, receives the new parameters
    and must not alias params.
    """
    if params.shape != grad.shape or state.m.shape != params.shape:
        raise ValueError("adam_step_inplace: shape mismatch")
    dtype = params.dtype
    state.t += 1
    t = state.t
    tmp = state.scratch
    if tmp is None or tmp.shape != params.shape:
        tmp = state.scratch = np.empty_like(params)
    state.m *= dtype.type(state.beta1)
    state.m += dtype.type(1.0 - state.beta1) * grad
    state.v *= dtype.type(state.beta2)
    np.multiply(dtype.type(1.0 - state.beta2), grad, out=tmp)
    tmp *= grad
    state.v += tmp
    np.divide(state.v, dtype.type(1.0 - state.beta2 ** t), out=tmp)
    np.sqrt(tmp, out=tmp)
    tmp += dtype.type(state.epsilon)
    np.divide(state.m, tmp, out=tmp)
    tmp *= dtype.type(lr / (1.0 - state.beta1 ** t))
    if out is None:
        return state, params - tmp
    np.subtract(params, tmp, out=out)
    return state, out


def step_lr(base_lr: float, iteration: int, step_size: int, gamma: float) -> float:
    if step_size < 1:
        raise ValueError("step_size must be >= 1")
    return base_lr * gamma ** (iteration // step_size)


def finite_diff_grad(loss_fn, params: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient, the independent oracle for backprop."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    grad = np.zeros_like(params, dtype=np.float64)
    for i in range(params.size):
        bump = np.zeros_like(params)
        bump[i] = eps
        grad[i] = (loss_fn(params + bump) - loss_fn(params - bump)) / (2.0 * eps)
    return grad
