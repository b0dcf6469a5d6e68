"""Backend selection for the hot numeric kernels.

By default every kernel in ``_kernels`` is compiled with numba's
``@njit``.  Set ``NODECBF_DISABLE_NUMBA=1`` to run the identical source
as plain numpy (also the automatic fallback when numba is missing).
Compiled kernels are cached on disk, so the JIT cost is paid once per
environment.
"""

import os

from . import _kernels as _impl

# leaves first so eager compilation would also work; with lazy
# compilation the order only matters for readability
_KERNEL_NAMES = [
    "unpack_subnet",
    "mlp_forward",
    "mlp_forward_batch",
    "mlp_value_and_jacobian",
    "mlp_jacobian",
    "mlp_vjp",
    "mlp_vjp_batch",
    "hybrid_deriv_batch",
    "hybrid_vjp_batch",
    "rk4_hybrid_step_batch",
    "rk4_hybrid_vjp_batch",
    "knode_loss_value",
    "knode_loss_grad",
    "true_field_accel",
    "true_deriv",
    "sim_true_step",
]


def _numba_disabled():
    return os.environ.get("NODECBF_DISABLE_NUMBA", "").strip().lower() in (
        "1",
        "true",
        "yes",
        "on",
    )


BACKEND = "numpy"
if not _numba_disabled():
    try:
        from numba import njit

        for _name in _KERNEL_NAMES:
            setattr(_impl, _name, njit(cache=True)(getattr(_impl, _name)))
        BACKEND = "numba"
    except ImportError:
        BACKEND = "numpy"

STATE_DIM = _impl.STATE_DIM
POS_DIM = _impl.POS_DIM
NUM_SUBNETS = _impl.NUM_SUBNETS
FIELD_NONE = _impl.FIELD_NONE
FIELD_ATTRACTIVE = _impl.FIELD_ATTRACTIVE
FIELD_REPULSIVE = _impl.FIELD_REPULSIVE
FIELD_TIME_VARYING = _impl.FIELD_TIME_VARYING

mlp_forward = _impl.mlp_forward
mlp_forward_batch = _impl.mlp_forward_batch
mlp_value_and_jacobian = _impl.mlp_value_and_jacobian
mlp_jacobian = _impl.mlp_jacobian
mlp_vjp = _impl.mlp_vjp
mlp_vjp_batch = _impl.mlp_vjp_batch
hybrid_deriv_batch = _impl.hybrid_deriv_batch
hybrid_vjp_batch = _impl.hybrid_vjp_batch
rk4_hybrid_step_batch = _impl.rk4_hybrid_step_batch
rk4_hybrid_vjp_batch = _impl.rk4_hybrid_vjp_batch
knode_loss_value = _impl.knode_loss_value
knode_loss_grad = _impl.knode_loss_grad
sim_true_step = _impl.sim_true_step
