import logging
import os

import numpy as np
from scipy.special import log_softmax, softmax

from . import misc
from .errors import InvalidArgument, NumericalAbort, StorageError

log = logging.getLogger('nn')

CHECKPOINT_FORMAT = 'codail-ckpt/1'
HIDDEN = (128, 128)
ACTIVATIONS = ('tanh', 'identity')

# callables notified with the model whenever its parameters are read
observers = []


class Mlp:
    """Two-hidden-layer perceptron over 64-bit floats with hand-written reverse mode.

    Parameters live in one flat vector laid out W1, b1, W2, b2, W3, b3 with every
    weight matrix stored row-major as (fan_in, fan_out); `index_map` gives the slices.
    """

    def __init__(self, in_size, out_size, hidden=HIDDEN, activation='tanh', rng=None, owner=None):
        if activation not in ACTIVATIONS:
            raise InvalidArgument(f"unknown activation {activation!r}, expected one of {ACTIVATIONS}")
        if len(hidden) != 2 or min(hidden) < 1 or in_size < 1 or out_size < 1:
            raise InvalidArgument(f"invalid layer widths in={in_size} hidden={hidden} out={out_size}")
        self.in_size = int(in_size)
        self.out_size = int(out_size)
        self.hidden = tuple(int(h) for h in hidden)
        self.activation = activation
        self.owner = owner
        self._layout = self._build_layout()
        self._params = np.zeros(self.parameter_count(self.in_size, self.out_size, self.hidden))
        if rng is not None:
            self._initialize(rng)

    @staticmethod
    def parameter_count(in_size, out_size, hidden=HIDDEN):
        h1, h2 = hidden
        return (in_size + 1) * h1 + (h1 + 1) * h2 + (h2 + 1) * out_size

    def _build_layout(self):
        widths = [self.in_size, *self.hidden, self.out_size]
        layout, start = [], 0
        for layer, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:]), start=1):
            layout.append((f'W{layer}', start, start + fan_in * fan_out, (fan_in, fan_out)))
            start += fan_in * fan_out
            layout.append((f'b{layer}', start, start + fan_out, (fan_out,)))
            start += fan_out
        return layout

    def index_map(self):
        return {name: (start, stop, shape) for name, start, stop, shape in self._layout}

    def _initialize(self, rng):
        for name, start, stop, shape in self._layout:
            if name.startswith('W'):
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                self._params[start:stop] = rng.uniform(-limit, limit, size=stop - start)

    @property
    def params(self):
        for observer in observers:
            observer(self)
        return self._params

    @params.setter
    def params(self, value):
        value = np.array(value, dtype=np.float64)
        if value.shape != self._params.shape:
            raise InvalidArgument(f"parameter vector has shape {value.shape}, model expects {self._params.shape}")
        if not np.all(np.isfinite(value)):
            raise NumericalAbort("refusing to load non-finite parameters")
        self._params = value

    def layer(self, name):
        start, stop, shape = self.index_map()[name]
        return self.params[start:stop].reshape(shape)

    def copy(self):
        clone = Mlp(self.in_size, self.out_size, self.hidden, self.activation, owner=self.owner)
        clone._params = self._params.copy()
        return clone

    def _act(self, z):
        return np.tanh(z) if self.activation == 'tanh' else z

    def _act_grad(self, a):
        return 1.0 - a * a if self.activation == 'tanh' else np.ones_like(a)

    def _inputs(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.in_size:
            raise InvalidArgument(f"input width {x.shape[1]} does not match model input width {self.in_size}")
        return x, single

    def _forward(self, x, params):
        w = {name: params[start:stop].reshape(shape) for name, start, stop, shape in self._layout}
        h1 = self._act(x @ w['W1'] + w['b1'])
        h2 = self._act(h1 @ w['W2'] + w['b2'])
        return h2 @ w['W3'] + w['b3'], (w, h1, h2)

    def forward(self, x):
        x, single = self._inputs(x)
        out, _ = self._forward(x, self.params)
        return out[0] if single else out

    def backward(self, x, upstream):
        """Gradient of sum(upstream * forward(x)) with respect to the flat parameters."""
        x, _ = self._inputs(x)
        upstream = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
        if upstream.shape != (x.shape[0], self.out_size):
            raise InvalidArgument(f"upstream gradient shape {upstream.shape} != {(x.shape[0], self.out_size)}")
        _, (w, h1, h2) = self._forward(x, self.params)

        grads = {'W3': h2.T @ upstream, 'b3': upstream.sum(axis=0)}
        dz2 = (upstream @ w['W3'].T) * self._act_grad(h2)
        grads['W2'], grads['b2'] = h1.T @ dz2, dz2.sum(axis=0)
        dz1 = (dz2 @ w['W2'].T) * self._act_grad(h1)
        grads['W1'], grads['b1'] = x.T @ dz1, dz1.sum(axis=0)

        flat = np.zeros_like(self._params)
        for name, start, stop, _ in self._layout:
            flat[start:stop] = grads[name].ravel()
        return flat

    def evaluate_with(self, params, x):
        """Forward pass under an explicit parameter vector (finite differences)."""
        x, single = self._inputs(x)
        out, _ = self._forward(x, np.asarray(params, dtype=np.float64))
        return out[0] if single else out

    def describe(self):
        return {'in': self.in_size, 'out': self.out_size, 'hidden': list(self.hidden), 'activation': self.activation}


class Adam:
    """Adaptive first-moment/second-moment optimizer; one instance per model."""

    def __init__(self, size, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise InvalidArgument(f"learning rate must be positive, got {lr}")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, model, gradient):
        gradient = np.asarray(gradient, dtype=np.float64)
        if gradient.shape != self.m.shape:
            raise InvalidArgument(f"gradient shape {gradient.shape} != optimizer state {self.m.shape}")
        if not np.all(np.isfinite(gradient)):
            raise NumericalAbort(f"non-finite gradient entering optimizer step {self.t + 1}")
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * gradient
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * gradient * gradient
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        model.params = model.params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return model


def apply_update(optimizer, model, gradient):
    return optimizer.step(model, gradient)


############################################################
# CATEGORICAL HEADS
############################################################

def probabilities(logits):
    return softmax(np.asarray(logits, dtype=np.float64), axis=-1)


def log_probabilities(logits):
    return log_softmax(np.asarray(logits, dtype=np.float64), axis=-1)


def entropy(logits):
    logp = log_probabilities(logits)
    return -np.sum(np.exp(logp) * logp, axis=-1)


def entropy_logit_gradient(logits):
    """d H / d logits for a softmax head: -p * (log p + H)."""
    logp = log_probabilities(logits)
    p = np.exp(logp)
    h = -np.sum(p * logp, axis=-1, keepdims=True)
    return -p * (logp + h)


def one_hot(indices, size):
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros(indices.shape + (size,))
    np.put_along_axis(out, indices[..., None], 1.0, axis=-1)
    return out


############################################################
# GRADIENT CHECKS
############################################################

def finite_difference_check(fn, params, analytic, h=1e-5, coordinates=None, rng=None):
    """Norm-relative error between an analytic gradient and central differences.

    `coordinates` limits the check to that many randomly chosen parameters.
    """
    params = np.asarray(params, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64)
    if coordinates is None or coordinates >= params.size:
        chosen = np.arange(params.size)
    else:
        chosen = (rng or np.random.default_rng(0)).choice(params.size, size=coordinates, replace=False)
    numeric = np.zeros(chosen.size)
    for k, index in enumerate(chosen):
        bump = np.zeros_like(params)
        bump[index] = h
        numeric[k] = (fn(params + bump) - fn(params - bump)) / (2.0 * h)
    selected = analytic[chosen]
    scale = np.linalg.norm(selected) + np.linalg.norm(numeric)
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(selected - numeric) / scale)


############################################################
# CHECKPOINTS
############################################################

def save_checkpoint(path, models, metadata=None):
    """Write {role: Mlp} as line-delimited records headed by the format tag."""
    lines = [misc.encode_record({'format': CHECKPOINT_FORMAT, **(metadata or {})})]
    for role in sorted(models):
        model = models[role]
        lines.append(misc.encode_record({'role': role, **model.describe(), 'params': model._params}))
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='\n') as fp:
            fp.write('\n'.join(lines) + '\n')
    except OSError as e:
        raise StorageError(f"cannot write checkpoint {path}: {e}") from e
    return path


def load_checkpoint(path):
    try:
        with open(path, 'r', encoding='utf-8') as fp:
            records = [misc.decode_record(line) for line in fp.read().split('\n') if line]
    except (OSError, ValueError) as e:
        raise StorageError(f"cannot read checkpoint {path}: {e}") from e
    if not records or records[0].get('format') != CHECKPOINT_FORMAT:
        raise StorageError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    metadata = {k: v for k, v in records[0].items() if k != 'format'}
    models = {}
    for record in records[1:]:
        model = Mlp(record['in'], record['out'], tuple(record['hidden']), record['activation'])
        model.params = np.array(record['params'], dtype=np.float64)
        models[record['role']] = model
    return metadata, models
