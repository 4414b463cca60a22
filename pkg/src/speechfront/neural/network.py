"""Layered sequence networks over a single flat parameter vector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from ..errors import ConfigError
from .layers import BlstmLayer, Layer, LstmLayer, make_layer

COSTS = ("sse", "xent")


@dataclass
class LstmLayerParams:
    """Named view of one LSTM direction's parameters.

    The arrays are the stacked matrices used by :class:`LstmLayer`; the
    ``W_x*``/``W_h*``/``w_c*``/``b_*`` properties expose per-gate slices.
    """

    Wx: np.ndarray
    Wh: np.ndarray
    peep: np.ndarray
    b: np.ndarray

    @property
    def input_dim(self):
        return self.Wx.shape[1]

    @property
    def hidden_dim(self):
        return self.Wh.shape[1]

    def _gate(self, arr, k):
        h = self.hidden_dim
        return arr[k * h:(k + 1) * h]

    W_xi = property(lambda s: s._gate(s.Wx, 0))
    W_xf = property(lambda s: s._gate(s.Wx, 1))
    W_xc = property(lambda s: s._gate(s.Wx, 2))
    W_xo = property(lambda s: s._gate(s.Wx, 3))
    W_hi = property(lambda s: s._gate(s.Wh, 0))
    W_hf = property(lambda s: s._gate(s.Wh, 1))
    W_hc = property(lambda s: s._gate(s.Wh, 2))
    W_ho = property(lambda s: s._gate(s.Wh, 3))
    w_ci = property(lambda s: s.peep[0])
    w_cf = property(lambda s: s.peep[1])
    w_co = property(lambda s: s.peep[2])
    b_i = property(lambda s: s._gate(s.b, 0))
    b_f = property(lambda s: s._gate(s.b, 1))
    b_c = property(lambda s: s._gate(s.b, 2))
    b_o = property(lambda s: s._gate(s.b, 3))

    @classmethod
    def zeros(cls, input_dim, hidden_dim):
        h = hidden_dim
        return cls(np.zeros((4 * h, input_dim)), np.zeros((4 * h, h)), np.zeros((3, h)),
                   np.zeros(4 * h))

    @classmethod
    def random(cls, input_dim, hidden_dim, rng, scale=0.1):
        p = cls.zeros(input_dim, hidden_dim)
        for arr in (p.Wx, p.Wh, p.peep, p.b):
            arr[...] = rng.uniform(-scale, scale, arr.shape)
        return p

    def as_dict(self):
        return {"Wx": self.Wx, "Wh": self.Wh, "peep": self.peep, "b": self.b}

    def validate(self):
        h, d = self.hidden_dim, self.input_dim
        expected = {"Wx": (4 * h, d), "Wh": (4 * h, h), "peep": (3, h), "b": (4 * h,)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")


def pad_batch(seqs) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length sequences into ``(T_max, B, ...)`` with zero padding."""
    seqs = [np.asarray(s) for s in seqs]
    lengths = np.array([len(s) for s in seqs])
    t_max = int(lengths.max())
    out = np.zeros((t_max, len(seqs)) + seqs[0].shape[1:], dtype=seqs[0].dtype)
    for b, s in enumerate(seqs):
        out[:len(s), b] = s
    return out, lengths


def _as_sequence(x, input_dim=None):
    x = np.asarray(x)
    if np.issubdtype(x.dtype, np.integer):
        if x.ndim != 1:
            raise ValueError("index sequences must be 1-D")
        return x
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or (input_dim is not None and x.shape[1] != input_dim):
        raise ValueError(f"expected a (T, {input_dim}) sequence, got shape {x.shape}")
    return x


def lstm_forward(params: LstmLayerParams, x, h0=None, c0=None):
    """Run one LSTM direction over a ``(T, D)`` sequence; returns ``(h, c)``."""
    params.validate()
    x = _as_sequence(x, params.input_dim)
    layer = LstmLayer(params.input_dim, params.hidden_dim)
    h, cache = layer.forward(params.as_dict(), x[:, None], np.array([len(x)]), h0, c0)
    return h[:, 0], cache[2][1:, 0]


def blstm_forward(fwd: LstmLayerParams, bwd: LstmLayerParams, x):
    """Concatenate ``[h_fwd[t], h_bwd[t]]`` where the backward pass runs on reversed input."""
    if fwd.input_dim != bwd.input_dim or fwd.hidden_dim != bwd.hidden_dim:
        raise ValueError("forward and backward parameters must share dimensions")
    x = _as_sequence(x, fwd.input_dim)
    layer = BlstmLayer(fwd.input_dim, fwd.hidden_dim)
    params = {"fwd." + k: v for k, v in fwd.as_dict().items()}
    params.update({"bwd." + k: v for k, v in bwd.as_dict().items()})
    y, _ = layer.forward(params, x[:, None], np.array([len(x)]))
    return y[:, 0]


class SequenceNetwork:
    """Stack of LSTM/BLSTM/feed-forward layers ending in a linear layer.

    ``topology`` is a list of ``(kind, size)`` pairs, e.g.
    ``[("blstm", 128), ("ff", 64), ("linear", 40)]``; for BLSTM layers ``size``
    is the per-direction unit count.
    """

    def __init__(self, input_dim: int, topology, theta=None, forget_bias: float = 1.0):
        if not topology:
            raise ConfigError("a network needs at least one layer")
        self.input_dim = int(input_dim)
        self.topology = [(str(k), int(s)) for k, s in topology]
        self.forget_bias = forget_bias
        self.layers: list[Layer] = []
        dim = self.input_dim
        for kind, size in self.topology:
            try:
                layer = make_layer(kind, dim, size, **({"forget_bias": forget_bias}
                                                       if kind in ("lstm", "blstm") else {}))
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            self.layers.append(layer)
            dim = layer.output_dim
        self.output_dim = dim

        self._slices = []
        offset = 0
        for layer in self.layers:
            entries = []
            for name, shape in layer.param_shapes():
                size = int(np.prod(shape))
                entries.append((name, offset, shape))
                offset += size
            self._slices.append(entries)
        self.n_params = offset
        if theta is None:
            theta = np.zeros(offset)
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (offset,):
            raise ConfigError(f"expected {offset} parameters, got {theta.shape}")
        self.theta = theta.copy()

    def layer_params(self, index: int, theta=None) -> dict:
        theta = self.theta if theta is None else theta
        return {name: theta[off:off + int(np.prod(shape))].reshape(shape)
                for name, off, shape in self._slices[index]}

    def initialize(self, rng: np.random.Generator, scale: float = 0.1) -> "SequenceNetwork":
        for k, layer in enumerate(self.layers):
            layer.init_params(self.layer_params(k), rng, scale)
        return self

    @classmethod
    def random(cls, input_dim, topology, seed=0, scale=0.1, forget_bias=1.0):
        net = cls(input_dim, topology, forget_bias=forget_bias)
        return net.initialize(np.random.default_rng(seed), scale)

    def copy(self, theta=None) -> "SequenceNetwork":
        return SequenceNetwork(self.input_dim, self.topology,
                               self.theta if theta is None else theta, self.forget_bias)

    def config(self) -> dict:
        return {"input_dim": self.input_dim, "topology": [list(t) for t in self.topology],
                "forget_bias": self.forget_bias, "n_params": self.n_params}

    @classmethod
    def from_config(cls, config: dict, theta=None) -> "SequenceNetwork":
        return cls(config["input_dim"], config["topology"], theta, config.get("forget_bias", 1.0))

    def forward_batch(self, x, lengths, theta=None, keep_cache=False):
        caches = []
        h = x
        for k, layer in enumerate(self.layers):
            h, cache = layer.forward(self.layer_params(k, theta), h, lengths)
            if keep_cache:
                caches.append(cache)
        return (h, caches) if keep_cache else h

    def __call__(self, x) -> np.ndarray:
        """Outputs for one ``(T, D)`` sequence (or a 1-D index sequence)."""
        x = _as_sequence(x, None if self._index_input(x) else self.input_dim)
        if len(x) == 0:
            return np.zeros((0, self.output_dim))
        return self.forward_batch(x[:, None], np.array([len(x)]))[:, 0]

    @staticmethod
    def _index_input(x):
        return np.issubdtype(np.asarray(x).dtype, np.integer)

    def gradients(self, inputs, targets, cost: str = "sse", theta=None):
        """Exact BPTT gradient of the summed cost over a batch of sequences.

        Returns ``(grad, cost_value)`` with ``grad`` laid out like ``theta``.
        """
        if cost not in COSTS:
            raise ConfigError(f"unknown cost {cost!r}")
        x, lengths = pad_batch(inputs)
        y, caches = self.forward_batch(x, lengths, theta, keep_cache=True)
        mask = (np.arange(x.shape[0])[:, None] < lengths[None, :]).astype(np.float64)
        if cost == "sse":
            tgt, _ = pad_batch([np.asarray(t, dtype=np.float64) for t in targets])
            if tgt.shape != y.shape:
                raise ValueError(f"targets shaped {tgt.shape[2:]} do not match outputs {y.shape[2:]}")
            err = (y - tgt) * mask[..., None]
            value = float(np.sum(err * err))
            dy = 2.0 * err
        else:
            tgt, _ = pad_batch([np.asarray(t, dtype=np.int64) for t in targets])
            if tgt.shape != y.shape[:2]:
                raise ValueError("each index target sequence must match its input length")
            logp = log_softmax(y, axis=-1)
            picked = np.take_along_axis(logp, tgt[..., None], axis=-1)[..., 0]
            value = float(-np.sum(picked * mask))
            dy = softmax(y, axis=-1)
            np.put_along_axis(dy, tgt[..., None],
                              np.take_along_axis(dy, tgt[..., None], axis=-1) - 1.0, axis=-1)
            dy *= mask[..., None]

        grad = np.zeros(self.n_params)
        for k in reversed(range(len(self.layers))):
            dy, layer_grads = self.layers[k].backward(self.layer_params(k, theta), caches[k], dy)
            for name, off, shape in self._slices[k]:
                grad[off:off + int(np.prod(shape))] = layer_grads[name].ravel()
        return grad, value

    def cost(self, inputs, targets, cost: str = "sse", theta=None) -> float:
        x, lengths = pad_batch(inputs)
        y = self.forward_batch(x, lengths, theta)
        mask = np.arange(x.shape[0])[:, None] < lengths[None, :]
        if cost == "sse":
            tgt, _ = pad_batch([np.asarray(t, dtype=np.float64) for t in targets])
            return float(np.sum(((y - tgt) ** 2)[mask]))
        tgt, _ = pad_batch([np.asarray(t, dtype=np.int64) for t in targets])
        logp = np.take_along_axis(log_softmax(y, axis=-1), tgt[..., None], axis=-1)[..., 0]
        return float(-np.sum(logp[mask]))


def network_forward(net: SequenceNetwork, x) -> np.ndarray:
    return net(x)


def bptt_gradients(net: SequenceNetwork, batch, cost: str = "sse"):
    """Gradient and cost for a list of ``(input_seq, target_seq)`` pairs."""
    inputs = [b[0] for b in batch]
    targets = [b[1] for b in batch]
    for x in inputs:
        if not net._index_input(x):
            _as_sequence(x, net.input_dim)
    return net.gradients(inputs, targets, cost)
