"""Fused jet activation kernels.

Jets are stored channel-major as ``(C, width, N)``: channel 0 is the value,
channels ``1..ng`` are first derivatives and the remaining channels are
Hessian entries whose factor channels are given by ``pa``/``pb``.
``S`` holds the activation and its first three derivatives at the value
channel, shape ``(4, width, N)``.

The numba versions are used at runtime; the numpy versions are kept as an
independent reference for the test-suite.
"""

import math

import numba as nb
import numpy as np

# activation ids shared with autodiff.ACTIVATIONS order
SIGMOID, TANH, GAUSSIAN, SWISH, ARCTAN, MISH, SOFTPLUS, RELU = range(8)


@nb.njit(cache=True, inline="always")
def _sig(z):
    return 0.5 * (1.0 + math.tanh(0.5 * z))


@nb.njit(cache=True)
def _derivs(kind, z, S):
    """Fill ``S[0..3]`` with the activation and its first three derivatives."""
    n, N = z.shape
    for k in range(n):
        for i in range(N):
            x = z[k, i]
            if kind == TANH:
                t = math.tanh(x)
                d1 = 1.0 - t * t
                d2 = -2.0 * t * d1
                S[0, k, i] = t
                S[1, k, i] = d1
                S[2, k, i] = d2
                S[3, k, i] = -2.0 * (d1 * d1 + t * d2)
            elif kind == SIGMOID:
                s = _sig(x)
                d1 = s * (1.0 - s)
                d2 = d1 * (1.0 - 2.0 * s)
                S[0, k, i] = s
                S[1, k, i] = d1
                S[2, k, i] = d2
                S[3, k, i] = d2 * (1.0 - 2.0 * s) - 2.0 * d1 * d1
            elif kind == GAUSSIAN:
                g = math.exp(-x * x)
                S[0, k, i] = g
                S[1, k, i] = -2.0 * x * g
                S[2, k, i] = (4.0 * x * x - 2.0) * g
                S[3, k, i] = (12.0 * x - 8.0 * x * x * x) * g
            elif kind == ARCTAN:
                r = 1.0 / (1.0 + x * x)
                S[0, k, i] = math.atan(x)
                S[1, k, i] = r
                S[2, k, i] = -2.0 * x * r * r
                S[3, k, i] = (6.0 * x * x - 2.0) * r * r * r
            elif kind == SOFTPLUS:
                s = _sig(x)
                d2 = s * (1.0 - s)
                S[0, k, i] = max(x, 0.0) + math.log1p(math.exp(-abs(x)))
                S[1, k, i] = s
                S[2, k, i] = d2
                S[3, k, i] = d2 * (1.0 - 2.0 * s)
            elif kind == SWISH:
                s = _sig(x)
                s1 = s * (1.0 - s)
                s2 = s1 * (1.0 - 2.0 * s)
                s3 = s2 * (1.0 - 2.0 * s) - 2.0 * s1 * s1
                S[0, k, i] = x * s
                S[1, k, i] = s + x * s1
                S[2, k, i] = 2.0 * s1 + x * s2
                S[3, k, i] = 3.0 * s2 + x * s3
            elif kind == MISH:
                s = _sig(x)
                s1 = s * (1.0 - s)
                s2 = s1 * (1.0 - 2.0 * s)
                g = math.tanh(max(x, 0.0) + math.log1p(math.exp(-abs(x))))
                q = 1.0 - g * g
                g1 = q * s
                g2 = -2.0 * g * g1 * s + q * s1
                g3 = -2.0 * s * g1 * g1 - 4.0 * g * s1 * g1 - 2.0 * g * s * g2 + q * s2
                S[0, k, i] = x * g
                S[1, k, i] = g + x * g1
                S[2, k, i] = 2.0 * g1 + x * g2
                S[3, k, i] = 3.0 * g2 + x * g3
            else:
                pos = 1.0 if x > 0.0 else 0.0
                S[0, k, i] = x * pos
                S[1, k, i] = pos
                S[2, k, i] = 0.0
                S[3, k, i] = 0.0


def derivatives(kind_id: int, z: np.ndarray) -> np.ndarray:
    S = np.empty((4,) + z.shape)
    _derivs(kind_id, np.ascontiguousarray(z), S)
    return S


@nb.njit(cache=True)
def _activate_forward(Z, S, ng, pa, pb, Y):
    C, n, N = Z.shape
    nh = pa.shape[0]
    for k in range(n):
        for i in range(N):
            Y[0, k, i] = S[0, k, i]
        for c in range(1, 1 + ng):
            for i in range(N):
                Y[c, k, i] = S[1, k, i] * Z[c, k, i]
        for h in range(nh):
            c = 1 + ng + h
            a = pa[h]
            b = pb[h]
            for i in range(N):
                Y[c, k, i] = S[1, k, i] * Z[c, k, i] + S[2, k, i] * Z[a, k, i] * Z[b, k, i]


@nb.njit(cache=True)
def _activate_backward(Z, S, ng, pa, pb, dY, dZ):
    C, n, N = Z.shape
    nh = pa.shape[0]
    ds1 = np.empty(N)
    ds2 = np.empty(N)
    for k in range(n):
        for i in range(N):
            ds1[i] = 0.0
            ds2[i] = 0.0
        for c in range(1, C):
            for i in range(N):
                ds1[i] += dY[c, k, i] * Z[c, k, i]
                dZ[c, k, i] = S[1, k, i] * dY[c, k, i]
        for h in range(nh):
            c = 1 + ng + h
            a = pa[h]
            b = pb[h]
            for i in range(N):
                d = dY[c, k, i]
                za = Z[a, k, i]
                zb = Z[b, k, i]
                t = S[2, k, i] * d
                ds2[i] += d * za * zb
                dZ[a, k, i] += t * zb
                dZ[b, k, i] += t * za
        for i in range(N):
            dZ[0, k, i] = dY[0, k, i] * S[1, k, i] + ds1[i] * S[2, k, i] + ds2[i] * S[3, k, i]


def activate_forward(Z, S, ng, pa, pb):
    Y = np.empty_like(Z)
    _activate_forward(Z, S, ng, pa, pb, Y)
    return Y


def activate_backward(Z, S, ng, pa, pb, dY):
    dZ = np.empty_like(Z)
    _activate_backward(Z, S, ng, pa, pb, np.ascontiguousarray(dY), dZ)
    return dZ


def activate_forward_reference(Z, S, ng, pa, pb):
    Y = np.empty_like(Z)
    Y[0] = S[0]
    Y[1:] = S[1] * Z[1:]
    for h in range(len(pa)):
        Y[1 + ng + h] += S[2] * Z[pa[h]] * Z[pb[h]]
    return Y


def activate_backward_reference(Z, S, ng, pa, pb, dY):
    dZ = np.empty_like(Z)
    dZ[1:] = S[1] * dY[1:]
    ds1 = (dY[1:] * Z[1:]).sum(axis=0)
    ds2 = np.zeros_like(S[0])
    for h in range(len(pa)):
        c = 1 + ng + h
        dZ[pa[h]] += S[2] * dY[c] * Z[pb[h]]
        dZ[pb[h]] += S[2] * dY[c] * Z[pa[h]]
        ds2 += dY[c] * Z[pa[h]] * Z[pb[h]]
    dZ[0] = dY[0] * S[1] + ds1 * S[2] + ds2 * S[3]
    return dZ
