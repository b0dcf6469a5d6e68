"""Numeric kernels shared by the JIT and plain-numpy backends.

Everything here is written against the numba nopython subset: float64
arrays in, arrays out, no Python objects.  ``backend`` decides whether
these run JIT-compiled (the default) or as plain numpy, selected with
``NODECBF_DISABLE_NUMBA=1``.

Residual-net parameter layout (flat float64 vector): for each of the
three parallel sub-networks, blocks ``[W1 (H,6), b1 (H), W2 (H,H),
b2 (H), W3 (6,H), b3 (6)]`` in row-major order.  tanh is applied after
the first hidden layer only; the second hidden layer and the output
layer are affine.
"""

import numpy as np

STATE_DIM = 6
POS_DIM = 3
NUM_SUBNETS = 3

# ground-truth disturbance field codes
FIELD_NONE = 0
FIELD_ATTRACTIVE = 1
FIELD_REPULSIVE = 2
FIELD_TIME_VARYING = 3


def subnet_span(hidden):
    return hidden * hidden + 14 * hidden + 6


def unpack_subnet(params, hidden, idx):
    o = idx * (hidden * hidden + 14 * hidden + 6)
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


def mlp_forward(params, hidden, x):
    out = np.zeros(STATE_DIM)
    for i in range(NUM_SUBNETS):
        w1, b1, w2, b2, w3, b3 = unpack_subnet(params, hidden, i)
        t1 = np.tanh(np.dot(w1, x) + b1)
        z2 = np.dot(w2, t1) + b2
        out += np.dot(w3, z2) + b3
    return out


def mlp_forward_batch(params, hidden, xs):
    m = xs.shape[0]
    out = np.zeros((m, STATE_DIM))
    for i in range(NUM_SUBNETS):
        w1, b1, w2, b2, w3, b3 = unpack_subnet(params, hidden, i)
        t1 = np.tanh(np.dot(xs, np.ascontiguousarray(w1.T)) + b1)
        z2 = np.dot(t1, np.ascontiguousarray(w2.T)) + b2
        out += np.dot(z2, np.ascontiguousarray(w3.T)) + b3
    return out


def mlp_value_and_jacobian(params, hidden, x):
    """Residual value and its 6x6 state Jacobian in one pass."""
    val = np.zeros(STATE_DIM)
    jac = np.zeros((STATE_DIM, STATE_DIM))
    for i in range(NUM_SUBNETS):
        w1, b1, w2, b2, w3, b3 = unpack_subnet(params, hidden, i)
        t1 = np.tanh(np.dot(w1, x) + b1)
        z2 = np.dot(w2, t1) + b2
        val += np.dot(w3, z2) + b3
        # d tanh(z1)/dz1 = 1 - tanh^2; scales the columns of W2
        s = 1.0 - t1 * t1
        jac += np.dot(w3, np.dot(w2 * s, w1))
    return val, jac


def mlp_jacobian(params, hidden, x):
    _, jac = mlp_value_and_jacobian(params, hidden, x)
    return jac


def mlp_vjp(params, hidden, x, upstream):
    """Reverse-mode pass for a single input.

    Returns (d(upstream . net(x))/dparams, d(upstream . net(x))/dx).
    """
    grad = np.zeros(params.shape[0])
    gx = np.zeros(STATE_DIM)
    n1 = 6 * hidden
    for i in range(NUM_SUBNETS):
        w1, b1, w2, b2, w3, b3 = unpack_subnet(params, hidden, i)
        t1 = np.tanh(np.dot(w1, x) + b1)
        z2 = np.dot(w2, t1) + b2
        o = i * (hidden * hidden + 14 * hidden + 6)
        gz2 = np.dot(upstream, w3)
        gt1 = np.dot(gz2, w2)
        gz1 = gt1 * (1.0 - t1 * t1)
        grad[o : o + n1] = (gz1.reshape(hidden, 1) * x.reshape(1, 6)).ravel()
        grad[o + n1 : o + n1 + hidden] = gz1
        o2 = o + n1 + hidden
        grad[o2 : o2 + hidden * hidden] = (
            gz2.reshape(hidden, 1) * t1.reshape(1, hidden)
        ).ravel()
        grad[o2 + hidden * hidden : o2 + hidden * hidden + hidden] = gz2
        o3 = o2 + hidden * hidden + hidden
        grad[o3 : o3 + 6 * hidden] = (
            upstream.reshape(6, 1) * z2.reshape(1, hidden)
        ).ravel()
        grad[o3 + 6 * hidden : o3 + 6 * hidden + 6] = upstream
        gx += np.dot(gz1, w1)
    return grad, gx


def mlp_vjp_batch(params, hidden, xs, upstream, grad_accum):
    """Batched reverse-mode pass; accumulates the parameter gradient
    into grad_accum and returns the VJP with respect to the inputs."""
    m = xs.shape[0]
    gxs = np.zeros((m, STATE_DIM))
    n1 = 6 * hidden
    for i in range(NUM_SUBNETS):
        w1, b1, w2, b2, w3, b3 = unpack_subnet(params, hidden, i)
        t1 = np.tanh(np.dot(xs, np.ascontiguousarray(w1.T)) + b1)
        z2 = np.dot(t1, np.ascontiguousarray(w2.T)) + b2
        o = i * (hidden * hidden + 14 * hidden + 6)
        gz2 = np.dot(upstream, w3)
        gt1 = np.dot(gz2, w2)
        gz1 = gt1 * (1.0 - t1 * t1)
        grad_accum[o : o + n1] += np.dot(
            np.ascontiguousarray(gz1.T), xs
        ).ravel()
        grad_accum[o + n1 : o + n1 + hidden] += np.sum(gz1, axis=0)
        o2 = o + n1 + hidden
        grad_accum[o2 : o2 + hidden * hidden] += np.dot(
            np.ascontiguousarray(gz2.T), t1
        ).ravel()
        grad_accum[o2 + hidden * hidden : o2 + hidden * hidden + hidden] += np.sum(
            gz2, axis=0
        )
        o3 = o2 + hidden * hidden + hidden
        grad_accum[o3 : o3 + 6 * hidden] += np.dot(
            np.ascontiguousarray(upstream.T), z2
        ).ravel()
        grad_accum[o3 + 6 * hidden : o3 + 6 * hidden + 6] += np.sum(upstream, axis=0)
        gxs += np.dot(gz1, w1)
    return gxs


def hybrid_deriv_batch(params, hidden, xs, us):
    """dx/dt of the hybrid model: double integrator + learned residual."""
    k = mlp_forward_batch(params, hidden, xs)
    k[:, 0:POS_DIM] += xs[:, POS_DIM:STATE_DIM]
    k[:, POS_DIM:STATE_DIM] += us
    return k


def hybrid_vjp_batch(params, hidden, xs, upstream, grad_accum):
    # A^T w routes the position adjoint into the velocity slot
    gxs = mlp_vjp_batch(params, hidden, xs, upstream, grad_accum)
    gxs[:, POS_DIM:STATE_DIM] += upstream[:, 0:POS_DIM]
    return gxs


def rk4_hybrid_step_batch(params, hidden, xs, us, dts):
    half = (0.5 * dts).reshape(-1, 1)
    full = dts.reshape(-1, 1)
    k1 = hybrid_deriv_batch(params, hidden, xs, us)
    k2 = hybrid_deriv_batch(params, hidden, xs + half * k1, us)
    k3 = hybrid_deriv_batch(params, hidden, xs + half * k2, us)
    k4 = hybrid_deriv_batch(params, hidden, xs + full * k3, us)
    return xs + (full / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_hybrid_vjp_batch(params, hidden, xs, us, dts, gout, grad_accum):
    """Adjoint of one batched RK4 step; recomputes the forward stages."""
    half = (0.5 * dts).reshape(-1, 1)
    full = dts.reshape(-1, 1)
    sixth = full / 6.0
    k1 = hybrid_deriv_batch(params, hidden, xs, us)
    s2 = xs + half * k1
    k2 = hybrid_deriv_batch(params, hidden, s2, us)
    s3 = xs + half * k2
    k3 = hybrid_deriv_batch(params, hidden, s3, us)
    s4 = xs + full * k3

    ak4 = sixth * gout
    as4 = hybrid_vjp_batch(params, hidden, s4, ak4, grad_accum)
    ak3 = 2.0 * sixth * gout + full * as4
    as3 = hybrid_vjp_batch(params, hidden, s3, ak3, grad_accum)
    ak2 = 2.0 * sixth * gout + half * as3
    as2 = hybrid_vjp_batch(params, hidden, s2, ak2, grad_accum)
    ak1 = sixth * gout + half * as2
    as1 = hybrid_vjp_batch(params, hidden, xs, ak1, grad_accum)
    return gout + as4 + as3 + as2 + as1


def knode_loss_value(params, hidden, ts, xs, us, horizon, lam):
    """Prediction loss over all length-``horizon`` windows of the queue."""
    m = xs.shape[0]
    n = m - horizon
    pred = xs[0:n].copy()
    total = 0.0
    for j in range(horizon):
        dts = ts[j + 1 : j + 1 + n] - ts[j : j + n]
        pred = rk4_hybrid_step_batch(params, hidden, pred, us[j : j + n], dts)
        r = pred - xs[j + 1 : j + 1 + n]
        total += np.sum(r * r)
    return total / (n * horizon) + lam * np.dot(params, params)


def knode_loss_grad(params, hidden, ts, xs, us, horizon, lam):
    """Loss and its parameter gradient via reverse mode through the
    unrolled RK4 predictions."""
    m = xs.shape[0]
    n = m - horizon
    chain = np.empty((horizon + 1, n, STATE_DIM))
    chain[0] = xs[0:n]
    total = 0.0
    for j in range(horizon):
        dts = ts[j + 1 : j + 1 + n] - ts[j : j + n]
        chain[j + 1] = rk4_hybrid_step_batch(
            params, hidden, chain[j], us[j : j + n], dts
        )
        r = chain[j + 1] - xs[j + 1 : j + 1 + n]
        total += np.sum(r * r)
    scale = 2.0 / (n * horizon)
    grad = np.zeros(params.shape[0])
    gstate = np.zeros((n, STATE_DIM))
    for j in range(horizon - 1, -1, -1):
        dts = ts[j + 1 : j + 1 + n] - ts[j : j + n]
        gout = gstate + scale * (chain[j + 1] - xs[j + 1 : j + 1 + n])
        gstate = rk4_hybrid_vjp_batch(
            params, hidden, chain[j], us[j : j + n], dts, gout, grad
        )
    grad += 2.0 * lam * params
    return total / (n * horizon) + lam * np.dot(params, params), grad


def true_field_accel(x, t, kind, k):
    """Velocity-channel acceleration of the ground-truth disturbance."""
    r = x[0:POS_DIM]
    if kind == FIELD_ATTRACTIVE:
        return -k * r
    elif kind == FIELD_REPULSIVE:
        return k * r
    elif kind == FIELD_TIME_VARYING:
        return (k * np.sin(t)) * r
    return 0.0 * r


def true_deriv(x, u, t, kind, k):
    d = np.empty(STATE_DIM)
    d[0:POS_DIM] = x[POS_DIM:STATE_DIM]
    d[POS_DIM:STATE_DIM] = u + true_field_accel(x, t, kind, k)
    return d


def sim_true_step(x, u, t, dt, kind, k):
    """RK4 step of the perturbed plant; the field is evaluated at the
    intermediate stage states and times."""
    k1 = true_deriv(x, u, t, kind, k)
    k2 = true_deriv(x + 0.5 * dt * k1, u, t + 0.5 * dt, kind, k)
    k3 = true_deriv(x + 0.5 * dt * k2, u, t + 0.5 * dt, kind, k)
    k4 = true_deriv(x + dt * k3, u, t + dt, kind, k)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
