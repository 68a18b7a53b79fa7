"""The restoration U-Net and the 7-layer exposure-fusion network."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import layers as L
from .layers import DimensionError


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 6
    out_channels: int = 3
    depth: int = 3
    base_features: int = 32


@dataclass(frozen=True)
class FusionNetConfig:
    in_channels: int = 6
    features: tuple[int, ...] = (16, 16, 32, 32, 16, 16)
    # initial pre-sigmoid bias: W starts near sigmoid(1) = 0.73, leaning on the long exposure
    output_bias: float = 1.0


def _init_conv(rng, out_c, in_c, k, dtype):
    fan_in = in_c * k * k
    bound = np.sqrt(6.0 / fan_in)
    w = rng.uniform(-bound, bound, size=(out_c, in_c, k, k)).astype(dtype)
    return w, np.zeros(out_c, dtype=dtype)


class Network:
    """Parameters live in ``self.params`` (name -> array); ``backward`` fills a grads dict."""

    kind = ""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self._caches: list = []

    def _add_conv(self, name, rng, out_c, in_c, k, dtype):
        self.params[name + ".w"], self.params[name + ".b"] = _init_conv(rng, out_c, in_c, k, dtype)

    def _conv(self, name, x, relu=True):
        y, c = L.conv2d_forward(x, self.params[name + ".w"], self.params[name + ".b"])
        self._caches.append(("conv", name, c))
        if relu:
            y, m = L.relu_forward(y)
            self._caches.append(("relu", None, m))
        return y

    def _back_conv(self, grads, dout, relu=True):
        if relu:
            _, _, mask = self._caches.pop()
            dout = L.relu_backward(dout, mask)
        _, name, cache = self._caches.pop()
        dx, grads[name + ".w"], grads[name + ".b"] = L.conv2d_backward(dout, cache)
        return dx

    def astype(self, dtype):
        self.params = {k: v.astype(dtype) for k, v in self.params.items()}
        return self

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def zero_final_layer(self):
        name = self.final_layer
        self.params[name + ".w"][...] = 0
        self.params[name + ".b"][...] = 0
        return self

    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


class UNet(Network):
    """Encoder-decoder with skip concatenation; input is short and long stacked (6 channels).

    Each level has two 3x3 conv + ReLU; pooling is 2x2 max, decoding is
    nearest-neighbour x2 followed by a 3x3 conv. The final 1x1 conv is linear.
    """

    kind = "lsd2"
    final_layer = "out"

    def __init__(self, config: UNetConfig = UNetConfig(), seed: int = 0, dtype=np.float32):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(seed)
        f, d = config.base_features, config.depth
        c_in = config.in_channels
        for lvl in range(d):
            c = f * 2 ** lvl
            self._add_conv(f"enc{lvl}.conv1", rng, c, c_in, 3, dtype)
            self._add_conv(f"enc{lvl}.conv2", rng, c, c, 3, dtype)
            c_in = c
        c = f * 2 ** d
        self._add_conv("mid.conv1", rng, c, c_in, 3, dtype)
        self._add_conv("mid.conv2", rng, c, c, 3, dtype)
        for lvl in reversed(range(d)):
            c = f * 2 ** lvl
            self._add_conv(f"dec{lvl}.up", rng, c, 2 * c, 3, dtype)
            self._add_conv(f"dec{lvl}.conv1", rng, c, 2 * c, 3, dtype)
            self._add_conv(f"dec{lvl}.conv2", rng, c, c, 3, dtype)
        self._add_conv("out", rng, config.out_channels, f, 1, dtype)

    @property
    def multiple(self) -> int:
        return 2 ** self.config.depth

    def forward(self, x):
        """Raw (unclamped) output for an (N, 6, H, W) batch."""
        d = self.config.depth
        if x.shape[1] != self.config.in_channels:
            raise DimensionError(f"expected {self.config.in_channels} input channels, got {x.shape[1]}")
        if x.shape[2] % self.multiple or x.shape[3] % self.multiple:
            raise DimensionError(f"spatial size {x.shape[2:]} not divisible by {self.multiple}")
        self._caches = []
        skips = []
        h = x
        for lvl in range(d):
            h = self._conv(f"enc{lvl}.conv1", h)
            h = self._conv(f"enc{lvl}.conv2", h)
            skips.append(h)
            h, c = L.maxpool2x2_forward(h)
            self._caches.append(("pool", None, c))
        h = self._conv("mid.conv1", h)
        h = self._conv("mid.conv2", h)
        for lvl in reversed(range(d)):
            h, c = L.upsample2x_forward(h)
            self._caches.append(("up", None, c))
            h = self._conv(f"dec{lvl}.up", h)
            h = np.concatenate([h, skips[lvl]], axis=1)
            h = self._conv(f"dec{lvl}.conv1", h)
            h = self._conv(f"dec{lvl}.conv2", h)
        return self._conv("out", h, relu=False)

    def backward(self, dout):
        """Gradients of all parameters given d(loss)/d(output); returns (grads, d_input)."""
        d = self.config.depth
        grads = {}
        dh = self._back_conv(grads, dout, relu=False)
        dskips = [None] * d
        for lvl in range(d):
            dh = self._back_conv(grads, dh)
            dh = self._back_conv(grads, dh)
            c = dh.shape[1] // 2
            dskips[lvl] = dh[:, c:]
            dh = self._back_conv(grads, np.ascontiguousarray(dh[:, :c]))
            _, _, shape = self._caches.pop()
            dh = L.upsample2x_backward(dh, shape)
        dh = self._back_conv(grads, dh)
        dh = self._back_conv(grads, dh)
        for lvl in reversed(range(d)):
            _, _, c = self._caches.pop()
            dh = L.maxpool2x2_backward(dh, c) + dskips[lvl]
            dh = self._back_conv(grads, dh)
            dh = self._back_conv(grads, dh)
        assert not self._caches
        return grads, dh


class FusionNet(Network):
    """Seven sequential convs (six 3x3 + ReLU, one 1x1) and a sigmoid weight map."""

    kind = "fusion"
    final_layer = "conv7"
    multiple = 1

    def __init__(self, config: FusionNetConfig = FusionNetConfig(), seed: int = 0, dtype=np.float32):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(seed)
        c_in = config.in_channels
        for i, c in enumerate(config.features, 1):
            self._add_conv(f"conv{i}", rng, c, c_in, 3, dtype)
            c_in = c
        self._add_conv(f"conv{len(config.features) + 1}", rng, 1, c_in, 1, dtype)
        self.params[f"conv{len(config.features) + 1}.b"][:] = config.output_bias

    @property
    def n_layers(self) -> int:
        return len(self.config.features) + 1

    def forward(self, x):
        """Weight map (N, 1, H, W) in [0, 1]."""
        if x.shape[1] != self.config.in_channels:
            raise DimensionError(f"expected {self.config.in_channels} input channels, got {x.shape[1]}")
        self._caches = []
        h = x
        for i in range(1, self.n_layers):
            h = self._conv(f"conv{i}", h)
        h = self._conv(f"conv{self.n_layers}", h, relu=False)
        w, y = L.sigmoid_forward(h)
        self._caches.append(("sigmoid", None, y))
        return w

    def backward(self, dout):
        grads = {}
        _, _, y = self._caches.pop()
        dh = L.sigmoid_backward(dout, y)
        dh = self._back_conv(grads, dh, relu=False)
        for _ in range(1, self.n_layers):
            dh = self._back_conv(grads, dh)
        assert not self._caches
        return grads, dh


def config_dict(model: Network) -> dict:
    d = asdict(model.config)
    if "features" in d:
        d["features"] = list(d["features"])
    return d


def build_model(kind: str, config: dict | None = None, seed: int = 0, dtype=np.float32) -> Network:
    config = dict(config or {})
    if kind == "lsd2":
        return UNet(UNetConfig(**config), seed, dtype)
    if kind == "fusion":
        if "features" in config:
            config["features"] = tuple(config["features"])
        return FusionNet(FusionNetConfig(**config), seed, dtype)
    raise ValueError(f"unknown model kind {kind!r}")
