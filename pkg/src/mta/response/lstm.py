"""Non-peephole LSTM cell: batched forward pass and full backpropagation
through time, in either time direction.

Gate order inside the stacked 4H axis is [input, forget, candidate, output].
Hidden and cell states start at zero. The input-to-hidden product for all
timesteps is hoisted into one GEMM; only the hidden-to-hidden recurrence
runs stepwise.
"""

from __future__ import annotations

import numpy as np

from .base import sigmoid


def lstm_forward(
    x: np.ndarray,
    wx: np.ndarray,
    wh: np.ndarray,
    b: np.ndarray,
    reverse: bool = False,
    want_cache: bool = False,
):
    """Run the cell over (n, T, D) inputs; returns hidden states (n, T, H).

    With ``reverse=True`` the recurrence runs from the last day backwards,
    which is how the backward-recurrence layer consumes the sequence.
    """
    n, T, _ = x.shape
    H = wh.shape[0]
    pre_x = x @ wx + b
    hs = np.zeros((n, T, H), dtype=np.float64)
    h = np.zeros((n, H), dtype=np.float64)
    c = np.zeros((n, H), dtype=np.float64)
    steps = range(T - 1, -1, -1) if reverse else range(T)
    cache: list = [None] * T if want_cache else None
    for t in steps:
        pre = pre_x[:, t] + h @ wh
        i = sigmoid(pre[:, 0:H])
        f = sigmoid(pre[:, H : 2 * H])
        g = np.tanh(pre[:, 2 * H : 3 * H])
        o = sigmoid(pre[:, 3 * H : 4 * H])
        c_prev = c
        h_prev = h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, t] = h
        if want_cache:
            cache[t] = (i, f, g, o, c_prev, tc, h_prev)
    return hs, cache


def lstm_backward(
    dhs: np.ndarray,
    x: np.ndarray,
    cache: list,
    wx: np.ndarray,
    wh: np.ndarray,
    reverse: bool = False,
):
    """BPTT given upstream gradients on every emitted hidden state.

    Returns (dwx, dwh, db). Gradients w.r.t. the inputs are not needed by any
    caller (inputs are data, not parameters) and are not computed.
    """
    n, T, _ = x.shape
    H = wh.shape[0]
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros_like(b_like(wx))
    dh_carry = np.zeros((n, H), dtype=np.float64)
    dc = np.zeros((n, H), dtype=np.float64)
    steps = list(range(T - 1, -1, -1)) if reverse else list(range(T))
    for t in reversed(steps):
        i, f, g, o, c_prev, tc, h_prev = cache[t]
        dh = dhs[:, t] + dh_carry
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dpre = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)],
            axis=1,
        )
        dwx += x[:, t].T @ dpre
        dwh += h_prev.T @ dpre
        db += dpre.sum(axis=0)
        dh_carry = dpre @ wh.T
        dc = dc * f
    return dwx, dwh, db


def b_like(wx: np.ndarray) -> np.ndarray:
    return np.zeros(wx.shape[1], dtype=np.float64)
