"""Neural residual model: three parallel two-hidden-layer MLPs whose
outputs are summed, with tanh after the first hidden layer only.

The model maps the 6-d state to a 6-d state-derivative correction.
Parameters live in a flat float64 vector (layout documented in
``_kernels``); evaluation, the analytic state Jacobian, and the
reverse-mode parameter gradient are backed by the active kernel backend.
"""

import struct

import numpy as np

from . import backend

NUM_SUBNETS = backend.NUM_SUBNETS
DEFAULT_HIDDEN = 16

_SNAPSHOT_MAGIC = b"NCBF"
_SNAPSHOT_VERSION = 1


def subnet_param_count(hidden):
    return hidden * hidden + 14 * hidden + 6


def param_count(hidden):
    return NUM_SUBNETS * subnet_param_count(hidden)


class ResidualNet:
    """Immutable parameter container for the residual ensemble."""

    def __init__(self, params, hidden=DEFAULT_HIDDEN, seed=0):
        params = np.ascontiguousarray(params, dtype=np.float64)
        if params.shape != (param_count(hidden),):
            raise ValueError(
                f"expected {param_count(hidden)} parameters for hidden={hidden}, "
                f"got {params.shape}"
            )
        if not np.all(np.isfinite(params)):
            raise ValueError("parameters must be finite")
        params = params.copy()
        params.setflags(write=False)
        self.params = params
        self.hidden = int(hidden)
        self.seed = int(seed)

    @staticmethod
    def zeros(hidden=DEFAULT_HIDDEN):
        return ResidualNet(np.zeros(param_count(hidden)), hidden)

    @staticmethod
    def initialize(hidden=DEFAULT_HIDDEN, seed=0):
        """Uniform(-s, s) weights with s = 1/sqrt(fan_in), zero biases."""
        rng = np.random.default_rng(seed)
        blocks = []
        for _ in range(NUM_SUBNETS):
            for rows, cols in ((hidden, 6), (hidden, hidden), (6, hidden)):
                s = 1.0 / np.sqrt(cols)
                blocks.append(rng.uniform(-s, s, size=rows * cols))
                blocks.append(np.zeros(rows))
        return ResidualNet(np.concatenate(blocks), hidden, seed=seed)

    def with_params(self, params):
        return ResidualNet(params, self.hidden, seed=self.seed)

    def layers(self, idx):
        """Weight/bias views (W1, b1, W2, b2, W3, b3) of sub-network idx."""
        return _unpack_py(self.params, self.hidden, idx)

    def __eq__(self, other):
        return (
            isinstance(other, ResidualNet)
            and self.hidden == other.hidden
            and np.array_equal(self.params, other.params)
        )


def _unpack_py(params, hidden, idx):
    o = idx * subnet_param_count(hidden)
    w1 = params[o : o + 6 * hidden].reshape(hidden, 6)
    o += 6 * hidden
    b1 = params[o : o + hidden]
    o += hidden
    w2 = params[o : o + hidden * hidden].reshape(hidden, hidden)
    o += hidden * hidden
    b2 = params[o : o + hidden]
    o += hidden
    w3 = params[o : o + 6 * hidden].reshape(6, hidden)
    o += 6 * hidden
    b3 = params[o : o + 6]
    return w1, b1, w2, b2, w3, b3


def net_forward(net, x):
    """Residual state-derivative estimate at state x."""
    return backend.mlp_forward(net.params, net.hidden, np.asarray(x, dtype=float))


def net_forward_batch(net, xs):
    return backend.mlp_forward_batch(
        net.params, net.hidden, np.ascontiguousarray(xs, dtype=float)
    )


def net_jacobian(net, x):
    """Analytic 6x6 Jacobian of the residual with respect to the state."""
    return backend.mlp_jacobian(net.params, net.hidden, np.asarray(x, dtype=float))


def net_value_and_jacobian(net, x):
    return backend.mlp_value_and_jacobian(
        net.params, net.hidden, np.asarray(x, dtype=float)
    )


def net_param_gradient(net, x, upstream):
    """Gradient of upstream . net(x) with respect to the flat parameters."""
    grad, _ = backend.mlp_vjp(
        net.params,
        net.hidden,
        np.asarray(x, dtype=float),
        np.asarray(upstream, dtype=float),
    )
    return grad


def flatten(net):
    return net.params.copy()


def unflatten(params, hidden=DEFAULT_HIDDEN, seed=0):
    return ResidualNet(params, hidden, seed=seed)


def save_model(path, net):
    """Write a model file: magic, format version, hidden width, seed,
    parameter count, then raw little-endian float64 parameters."""
    header = _SNAPSHOT_MAGIC + struct.pack(
        "<iiiq", _SNAPSHOT_VERSION, net.hidden, net.seed, net.params.size
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(net.params, dtype="<f8").tobytes())


def load_model(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a model file")
    version, hidden, seed, n = struct.unpack("<iiiq", blob[4:24])
    if version != _SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    params = np.frombuffer(blob[24:], dtype="<f8")
    if params.size != n:
        raise ValueError(f"{path}: truncated parameter vector")
    return ResidualNet(params.astype(np.float64), hidden, seed=seed)
