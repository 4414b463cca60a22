"""Layer implementations with explicit forward and backward passes.

All layers work on padded batches shaped ``(T, B, D)`` together with a
``lengths`` vector. Padding always sits at the end of each sequence (also for
the backward direction of a BLSTM, which reverses every sequence within its own
length), so padded steps can never influence valid ones and receive exactly
zero gradient when the cost is masked.

The first layer of a network may receive integer index sequences ``(T, B)``
instead of vectors; this is a 1-of-N input realised as a column lookup of the
input weight matrix.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

GATES = ("i", "f", "c", "o")


def sigmoid(x):
    return expit(x)


def reverse_padded(x: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Reverse each sequence along axis 0 within its own length."""
    t_max = x.shape[0]
    t = np.arange(t_max)[:, None]
    idx = np.where(t < lengths[None, :], lengths[None, :] - 1 - t, t)
    cols = np.broadcast_to(np.arange(x.shape[1])[None, :], idx.shape)
    return x[idx, cols]


def _input_projection(W: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``x @ W.T`` for dense input or a column lookup for index input."""
    if np.issubdtype(x.dtype, np.integer):
        return W.T[x]
    return x @ W.T


def _input_weight_grad(dz: np.ndarray, x: np.ndarray, shape) -> np.ndarray:
    if np.issubdtype(x.dtype, np.integer):
        grad_t = np.zeros((shape[1], shape[0]))
        np.add.at(grad_t, x.ravel(), dz.reshape(-1, shape[0]))
        return grad_t.T
    return dz.reshape(-1, shape[0]).T @ x.reshape(-1, shape[1])


class Layer:
    kind = "layer"
    input_dim: int
    output_dim: int

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        raise NotImplementedError

    def init_params(self, params: dict, rng: np.random.Generator, scale: float):
        for name, arr in params.items():
            arr[...] = rng.uniform(-scale, scale, arr.shape)

    def forward(self, params, x, lengths):
        raise NotImplementedError

    def backward(self, params, cache, dy):
        """Return ``(dx, grads)``; ``dx`` is None for index input."""
        raise NotImplementedError

    def config(self) -> dict:
        return {"kind": self.kind, "input_dim": self.input_dim, "output_dim": self.output_dim}


class FeedForwardLayer(Layer):
    """Framewise affine map followed by tanh (or nothing for ``linear``)."""

    def __init__(self, input_dim: int, output_dim: int, activation: str = "tanh"):
        if activation not in ("tanh", "linear"):
            raise ValueError(f"unknown activation {activation!r}")
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.activation = activation
        self.kind = "ff" if activation == "tanh" else "linear"

    def param_shapes(self):
        return [("W", (self.output_dim, self.input_dim)), ("b", (self.output_dim,))]

    def forward(self, params, x, lengths):
        a = _input_projection(params["W"], x) + params["b"]
        y = np.tanh(a) if self.activation == "tanh" else a
        return y, (x, y)

    def backward(self, params, cache, dy):
        x, y = cache
        da = dy * (1.0 - y * y) if self.activation == "tanh" else dy
        grads = {
            "W": _input_weight_grad(da, x, params["W"].shape),
            "b": da.reshape(-1, self.output_dim).sum(axis=0),
        }
        dx = None if np.issubdtype(x.dtype, np.integer) else da @ params["W"]
        return dx, grads


class LstmLayer(Layer):
    """Peephole LSTM.

    Gate pre-activations are stacked in the order input, forget, cell, output.
    Peepholes are diagonal: the input and forget gates see ``c[t-1]``, the
    output gate sees ``c[t]``.
    """

    kind = "lstm"

    def __init__(self, input_dim: int, hidden_dim: int, forget_bias: float = 1.0):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.output_dim = hidden_dim
        self.forget_bias = forget_bias

    def param_shapes(self):
        h, d = self.hidden_dim, self.input_dim
        return [("Wx", (4 * h, d)), ("Wh", (4 * h, h)), ("peep", (3, h)), ("b", (4 * h,))]

    def init_params(self, params, rng, scale):
        super().init_params(params, rng, scale)
        h = self.hidden_dim
        params["b"][h:2 * h] = self.forget_bias

    def config(self):
        return {**super().config(), "hidden_dim": self.hidden_dim}

    def forward(self, params, x, lengths, h0=None, c0=None):
        Wh, peep = params["Wh"], params["peep"]
        H = self.hidden_dim
        zx = _input_projection(params["Wx"], x) + params["b"]
        T, B = zx.shape[:2]
        h_prev = np.zeros((B, H)) if h0 is None else np.broadcast_to(h0, (B, H))
        c_prev = np.zeros((B, H)) if c0 is None else np.broadcast_to(c0, (B, H))
        gates = np.empty((T, B, 4 * H))
        c_all = np.empty((T + 1, B, H))
        h_all = np.empty((T + 1, B, H))
        tanh_c = np.empty((T, B, H))
        c_all[0], h_all[0] = c_prev, h_prev
        for t in range(T):
            z = zx[t] + h_all[t] @ Wh.T
            c_prev = c_all[t]
            i = sigmoid(z[:, :H] + peep[0] * c_prev)
            f = sigmoid(z[:, H:2 * H] + peep[1] * c_prev)
            g = np.tanh(z[:, 2 * H:3 * H])
            c = f * c_prev + i * g
            o = sigmoid(z[:, 3 * H:] + peep[2] * c)
            tc = np.tanh(c)
            gates[t, :, :H], gates[t, :, H:2 * H] = i, f
            gates[t, :, 2 * H:3 * H], gates[t, :, 3 * H:] = g, o
            c_all[t + 1] = c
            tanh_c[t] = tc
            h_all[t + 1] = o * tc
        return h_all[1:], (x, gates, c_all, h_all, tanh_c)

    def backward(self, params, cache, dy):
        x, gates, c_all, h_all, tanh_c = cache
        Wh, peep = params["Wh"], params["peep"]
        H = self.hidden_dim
        T, B = dy.shape[:2]
        dz = np.empty((T, B, 4 * H))
        dpeep = np.zeros((3, H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in reversed(range(T)):
            i, f = gates[t, :, :H], gates[t, :, H:2 * H]
            g, o = gates[t, :, 2 * H:3 * H], gates[t, :, 3 * H:]
            c, c_prev, tc = c_all[t + 1], c_all[t], tanh_c[t]
            dh = dy[t] + dh_next
            dzo = dh * tc * o * (1.0 - o)
            dc = dh * o * (1.0 - tc * tc) + dc_next + dzo * peep[2]
            dzi = dc * g * i * (1.0 - i)
            dzf = dc * c_prev * f * (1.0 - f)
            dzc = dc * i * (1.0 - g * g)
            dc_next = dc * f + dzi * peep[0] + dzf * peep[1]
            dz[t, :, :H], dz[t, :, H:2 * H] = dzi, dzf
            dz[t, :, 2 * H:3 * H], dz[t, :, 3 * H:] = dzc, dzo
            dh_next = dz[t] @ Wh
            dpeep[0] += np.sum(dzi * c_prev, axis=0)
            dpeep[1] += np.sum(dzf * c_prev, axis=0)
            dpeep[2] += np.sum(dzo * c, axis=0)
        flat = dz.reshape(-1, 4 * H)
        grads = {
            "Wx": _input_weight_grad(dz, x, params["Wx"].shape),
            "Wh": flat.T @ h_all[:-1].reshape(-1, H),
            "peep": dpeep,
            "b": flat.sum(axis=0),
        }
        dx = None if np.issubdtype(x.dtype, np.integer) else dz @ params["Wx"]
        return dx, grads


class BlstmLayer(Layer):
    """Forward and time-reversed LSTMs whose outputs are concatenated per frame."""

    kind = "blstm"

    def __init__(self, input_dim: int, hidden_dim: int, forget_bias: float = 1.0):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.output_dim = 2 * hidden_dim
        self.fwd = LstmLayer(input_dim, hidden_dim, forget_bias)
        self.bwd = LstmLayer(input_dim, hidden_dim, forget_bias)

    def param_shapes(self):
        return ([("fwd." + n, s) for n, s in self.fwd.param_shapes()]
                + [("bwd." + n, s) for n, s in self.bwd.param_shapes()])

    @staticmethod
    def _split(params):
        fwd = {k[4:]: v for k, v in params.items() if k.startswith("fwd.")}
        bwd = {k[4:]: v for k, v in params.items() if k.startswith("bwd.")}
        return fwd, bwd

    def init_params(self, params, rng, scale):
        fwd, bwd = self._split(params)
        self.fwd.init_params(fwd, rng, scale)
        self.bwd.init_params(bwd, rng, scale)

    def config(self):
        return {**super().config(), "hidden_dim": self.hidden_dim}

    def forward(self, params, x, lengths):
        fwd, bwd = self._split(params)
        hf, cache_f = self.fwd.forward(fwd, x, lengths)
        hb_rev, cache_b = self.bwd.forward(bwd, reverse_padded(x, lengths), lengths)
        hb = reverse_padded(hb_rev, lengths)
        return np.concatenate([hf, hb], axis=-1), (cache_f, cache_b, lengths, x)

    def backward(self, params, cache, dy):
        cache_f, cache_b, lengths, x = cache
        fwd, bwd = self._split(params)
        H = self.hidden_dim
        dxf, gf = self.fwd.backward(fwd, cache_f, dy[..., :H])
        dxb_rev, gb = self.bwd.backward(bwd, cache_b, reverse_padded(dy[..., H:], lengths))
        grads = {"fwd." + k: v for k, v in gf.items()}
        grads.update({"bwd." + k: v for k, v in gb.items()})
        dx = None if dxf is None else dxf + reverse_padded(dxb_rev, lengths)
        return dx, grads


def make_layer(kind: str, input_dim: int, size: int, **kwargs) -> Layer:
    if kind == "lstm":
        return LstmLayer(input_dim, size, **kwargs)
    if kind == "blstm":
        return BlstmLayer(input_dim, size, **kwargs)
    if kind == "ff":
        return FeedForwardLayer(input_dim, size, "tanh")
    if kind == "linear":
        return FeedForwardLayer(input_dim, size, "linear")
    raise ValueError(f"unknown layer kind {kind!r}")
