"""Fixed-topology MLPs with analytic backprop, categorical helpers and Adam

Parameters live in one flat float64 vector per network. The layout is every
trunk layer's (W, b) followed by every head's (W, b), in declaration order,
with W stored row-major as (fan_in, fan_out).
"""
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "tanh")
INIT_SCHEMES = ("orthogonal", "uniform")


@dataclass(frozen=True)
class NetSpec:
    """Shape of an MLP with a shared trunk and one or more linear heads

    Args:
        input_dim (int): observation size
        hidden_widths (tuple): trunk layer widths, at least one
        heads (tuple): ((name, output_dim), ...)
        activation (str): 'relu' or 'tanh'
        init_scheme (str): 'orthogonal' or 'uniform'
        head_gains (tuple): ((name, gain), ...) used by orthogonal init;
            heads not listed use 1.0
    """

    input_dim: int
    hidden_widths: tuple
    heads: tuple
    activation: str = "relu"
    init_scheme: str = "orthogonal"
    head_gains: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        object.__setattr__(self, "heads", tuple((str(n), int(d)) for n, d in self.heads))
        object.__setattr__(self, "head_gains", tuple((str(n), float(g)) for n, g in self.head_gains))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1. Got {self.input_dim}")
        if not self.hidden_widths or min(self.hidden_widths) < 1:
            raise ValueError(f"Need at least one hidden layer of width >= 1. Got {self.hidden_widths}")
        if not self.heads or min(d for _, d in self.heads) < 1:
            raise ValueError(f"Need at least one head with dim >= 1. Got {self.heads}")
        names = [n for n, _ in self.heads]
        if len(set(names)) != len(names):
            raise ValueError(f"Head names must be unique. Got {names}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}. Got {self.activation}")
        if self.init_scheme not in INIT_SCHEMES:
            raise ValueError(f"init_scheme must be one of {INIT_SCHEMES}. Got {self.init_scheme}")

    @property
    def head_names(self):
        return [n for n, _ in self.heads]

    def head_dim(self, name):
        return dict(self.heads)[name]

    def layer_shapes(self):
        """[(kind, name, fan_in, fan_out)] in parameter order"""
        shapes = []
        fan_in = self.input_dim
        for i, width in enumerate(self.hidden_widths):
            shapes.append(("trunk", f"h{i}", fan_in, width))
            fan_in = width
        for name, dim in self.heads:
            shapes.append(("head", name, fan_in, dim))
        return shapes


def param_count(spec):
    return sum(fi * fo + fo for _, _, fi, fo in spec.layer_shapes())


def _layers(spec, params):
    """Yield (kind, name, W, b) views into the flat ``params`` vector"""
    offset = 0
    for kind, name, fan_in, fan_out in spec.layer_shapes():
        w = params[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = params[offset : offset + fan_out]
        offset += fan_out
        yield kind, name, w, b


def _orthogonal(rng, fan_in, fan_out, gain):
    a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if fan_in < fan_out:
        q = q.T
    return gain * q[:fan_in, :fan_out]


def init_params(spec, rng):
    """Return a freshly initialized flat parameter vector

    Orthogonal: trunk gain sqrt(2), head gains from ``spec.head_gains``,
    zero biases. Uniform: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for W and b.
    """
    params = np.zeros(param_count(spec), dtype=np.float64)
    gains = dict(spec.head_gains)
    for kind, name, w, b in _layers(spec, params):
        fan_in, fan_out = w.shape
        if spec.init_scheme == "orthogonal":
            gain = np.sqrt(2.0) if kind == "trunk" else gains.get(name, 1.0)
            w[...] = _orthogonal(rng, fan_in, fan_out, gain)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            w[...] = rng.uniform(-bound, bound, size=w.shape)
            b[...] = rng.uniform(-bound, bound, size=b.shape)
            if name in gains:
                w *= gains[name]
                b *= gains[name]
    return params


def _activate(spec, z):
    if spec.activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(spec, z, h):
    if spec.activation == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - h * h


def _check_obs(spec, obs):
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim == 1:
        obs = obs[None, :]
    if obs.ndim != 2 or obs.shape[1] != spec.input_dim:
        raise ValueError(f"obs_batch must have shape (n, {spec.input_dim}). Got {obs.shape}")
    return obs


def forward_with_cache(spec, params, obs_batch):
    """Forward pass keeping trunk activations for ``backward``"""
    x = _check_obs(spec, obs_batch)
    cache = {"inputs": [], "pre": [], "post": []}
    outputs = {}
    h = x
    for kind, name, w, b in _layers(spec, params):
        if kind == "trunk":
            z = h @ w + b
            cache["inputs"].append(h)
            cache["pre"].append(z)
            h = _activate(spec, z)
            cache["post"].append(h)
        else:
            outputs[name] = h @ w + b
    cache["features"] = h
    return outputs, cache


def forward(spec, params, obs_batch):
    """Return {head_name: (n, head_dim) array}

    Raises:
        ValueError: obs_batch does not match ``spec.input_dim``
    """
    outputs, _ = forward_with_cache(spec, params, obs_batch)
    return outputs


def backward(spec, params, obs_batch, head_output_grads, cache=None):
    """Gradient of sum_i sum_heads <outputs_i, head_output_grads_i> wrt params

    Heads missing from ``head_output_grads`` contribute nothing. Losses
    already fold their 1/n reduction into the head gradients.
    """
    if cache is None:
        _, cache = forward_with_cache(spec, params, obs_batch)
    grads = np.zeros_like(params)
    grad_layers = list(_layers(spec, grads))
    param_layers = list(_layers(spec, params))
    n_trunk = len(spec.hidden_widths)

    features = cache["features"]
    d_h = np.zeros_like(features)
    for (kind, name, w, _), (_, _, gw, gb) in zip(param_layers[n_trunk:], grad_layers[n_trunk:]):
        g = head_output_grads.get(name)
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64).reshape(features.shape[0], w.shape[1])
        gw += features.T @ g
        gb += g.sum(axis=0)
        d_h += g @ w.T

    for i in range(n_trunk - 1, -1, -1):
        _, _, w, _ = param_layers[i]
        _, _, gw, gb = grad_layers[i]
        d_z = d_h * _activate_grad(spec, cache["pre"][i], cache["post"][i])
        gw += cache["inputs"][i].T @ d_z
        gb += d_z.sum(axis=0)
        if i > 0:
            d_h = d_z @ w.T
    return grads


# Categorical policy helpers; all operate on the last axis


def log_softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def sample_action(logits, rng):
    """Draw a ~ softmax(logits)

    Args:
        logits (np.ndarray): (n_actions,) or (n, n_actions)
        rng (np.random.Generator): source of randomness

    Returns:
        (action, log_prob): ints / floats, batched if ``logits`` is 2d
    """
    logp = log_softmax(logits)
    probs = np.exp(logp)
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(size=probs.shape[:-1] + (1,))
    actions = np.minimum((u > cdf).sum(axis=-1), probs.shape[-1] - 1)
    chosen = np.take_along_axis(logp, np.asarray(actions)[..., None], axis=-1)[..., 0]
    if np.ndim(actions) == 0:
        return int(actions), float(chosen)
    return actions.astype(np.int64), chosen


def greedy_action(logits):
    logits = np.asarray(logits, dtype=np.float64)
    actions = np.argmax(logits, axis=-1)
    if np.ndim(actions) == 0:
        return int(actions)
    return actions.astype(np.int64)


def action_log_prob(logits, actions):
    logp = log_softmax(logits)
    return np.take_along_axis(logp, np.asarray(actions, dtype=np.int64)[..., None], axis=-1)[..., 0]


def entropy(logits):
    """Entropy in nats, per row for 2d input"""
    logp = log_softmax(logits)
    p = np.exp(logp)
    ent = -(p * logp).sum(axis=-1)
    return float(ent) if np.ndim(ent) == 0 else ent


def kl_categorical(p_logits, q_logits):
    """KL(p || q) for categorical distributions, per row for 2d input

    Raises:
        ValueError: mismatched action counts
    """
    p_logits = np.asarray(p_logits, dtype=np.float64)
    q_logits = np.asarray(q_logits, dtype=np.float64)
    if p_logits.shape != q_logits.shape:
        raise ValueError(f"Logit shapes differ: {p_logits.shape} vs {q_logits.shape}")
    logp = log_softmax(p_logits)
    logq = log_softmax(q_logits)
    kl = (np.exp(logp) * (logp - logq)).sum(axis=-1)
    kl = np.maximum(kl, 0.0)
    return float(kl) if np.ndim(kl) == 0 else kl


# Optimization


@dataclass
class ParameterBlock:
    """Flat parameters, gradients and Adam moments for one optimizer

    Args:
        params (np.ndarray): parameter vector (may be shared with other blocks)
        grads (np.ndarray): gradient buffer
        adam_m (np.ndarray): first moment
        adam_v (np.ndarray): second moment
        step_count (int): Adam steps taken
    """

    params: np.ndarray
    grads: np.ndarray = None
    adam_m: np.ndarray = None
    adam_v: np.ndarray = None
    step_count: int = 0

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        n = self.params.shape[0]
        for name in ("grads", "adam_m", "adam_v"):
            value = getattr(self, name)
            if value is None:
                setattr(self, name, np.zeros(n, dtype=np.float64))
            elif np.shape(value) != (n,):
                raise ValueError(f"{name} must have shape ({n},). Got {np.shape(value)}")

    @classmethod
    def sharing(cls, other):
        """A block over ``other.params`` (same array) with fresh Adam state"""
        return cls(params=other.params)

    def __len__(self):
        return self.params.shape[0]


def adam_step(block, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update of ``block.params`` in place using ``block.grads``"""
    g = block.grads
    block.step_count += 1
    block.adam_m *= beta1
    block.adam_m += (1.0 - beta1) * g
    block.adam_v *= beta2
    block.adam_v += (1.0 - beta2) * g * g
    m_hat = block.adam_m / (1.0 - beta1**block.step_count)
    v_hat = block.adam_v / (1.0 - beta2**block.step_count)
    block.params -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return block


def global_norm(grads):
    grads = np.asarray(grads, dtype=np.float64)
    return float(np.sqrt(np.dot(grads, grads)))


def clip_global_grad_norm(grads, max_norm=5.0):
    """Rescale ``grads`` to have L2 norm ``max_norm`` if it is larger"""
    grads = np.asarray(grads, dtype=np.float64)
    norm = global_norm(grads)
    if norm > max_norm:
        return grads * (max_norm / norm)
    return grads


def snapshot_params(block):
    """Frozen copy of the block's parameters (pi_old)"""
    snap = np.array(block.params, dtype=np.float64, copy=True)
    snap.flags.writeable = False
    return snap


def restore_params(block, snapshot):
    """Copy ``snapshot`` back into ``block.params`` in place"""
    block.params[:] = snapshot
    return block
