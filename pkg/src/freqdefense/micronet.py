"""A small reverse-mode differentiable segmentation network.

The network maps an ``(H, W, C)`` image to per-pixel class posteriors of shape
``(H, W, S)``.  It is built from a JSON-like layer list so that the resampling
method used at every down/up-sampling step can be swapped, which is what the
spectral artifact experiments vary.  Only input gradients are needed (the
network is never trained), so layers implement a forward pass returning a
cache and a backward pass mapping an output gradient to an input gradient.

Layer kinds::

    {"kind": "affine", "scale": a, "offset": b}          # a * x + b
    {"kind": "conv2d", "kernel": k, "in": ci, "out": co}  # zero pad, stride 1
    {"kind": "relu"}
    {"kind": "resample", "scale": 2|4, "direction": "up"|"down"}
    {"kind": "softmax"}
    {"kind": "feature_tap", "id": lam}
    {"kind": "branch_sum", "branches": [[...], [...]]}   # parallel paths, summed

A conv layer may carry explicit ``"weights"`` (k, k, ci, co) and ``"bias"``;
otherwise weights are drawn from the net seed, uniform in [-0.5, 0.5] and
scaled by ``1/sqrt(k*k*ci)``, with zero bias.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .errors import CompositionError, ShapeError, SpecError
from .tensor import as_image

RESAMPLE_MODES = ("nearest", "bilinear", "bicubic", "area")
CUBIC_A = -0.5


# --------------------------------------------------------------------------
# resampling as explicit separable linear maps

def _cubic(t: float, a: float = CUBIC_A) -> float:
    t = abs(t)
    if t <= 1:
        return (a + 2) * t**3 - (a + 3) * t**2 + 1
    if t < 2:
        return a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a
    return 0.0


def resample_matrix(n_in: int, n_out: int, mode: str) -> np.ndarray:
    """The ``(n_out, n_in)`` matrix of 1D resampling (align_corners=False)."""
    if mode not in RESAMPLE_MODES:
        raise SpecError(f"unknown interpolation mode {mode!r}")
    A = np.zeros((n_out, n_in))
    ratio = n_in / n_out
    for i in range(n_out):
        if mode == "nearest":
            A[i, min(int(math.floor(i * ratio)), n_in - 1)] = 1.0
        elif mode == "bilinear":
            src = max((i + 0.5) * ratio - 0.5, 0.0)
            i0 = int(math.floor(src))
            i1 = min(i0 + 1, n_in - 1)
            lam = src - i0
            A[i, i0] += 1.0 - lam
            A[i, i1] += lam
        elif mode == "bicubic":
            src = (i + 0.5) * ratio - 0.5
            i0 = int(math.floor(src))
            t = src - i0
            for off in (-1, 0, 1, 2):
                j = min(max(i0 + off, 0), n_in - 1)
                A[i, j] += _cubic(t - off)
        else:  # area, i.e. adaptive average pooling
            start = (i * n_in) // n_out
            end = -((-(i + 1) * n_in) // n_out)
            A[i, start:end] = 1.0 / (end - start)
    return A


def _resample_shape(shape, s: int, direction: str) -> tuple[int, int, int]:
    H, W, C = shape
    if s not in (2, 4):
        raise SpecError(f"scale factor must be 2 or 4, got {s}")
    if direction == "up":
        return H * s, W * s, C
    if direction == "down":
        if H % s or W % s:
            raise ShapeError(f"cannot downsample {H}x{W} by {s}")
        return H // s, W // s, C
    raise SpecError(f"direction must be 'up' or 'down', got {direction!r}")


def resample_matrices(shape, s: int, direction: str, mode: str):
    H, W, _ = shape
    Ho, Wo, _ = _resample_shape(shape, s, direction)
    return resample_matrix(H, Ho, mode), resample_matrix(W, Wo, mode)


def resample(x, s: int, direction: str, mode: str) -> np.ndarray:
    """Resample an image by ``s`` in both spatial axes."""
    x = np.asarray(x, dtype=np.float64)
    Ah, Aw = resample_matrices(x.shape, s, direction, mode)
    return np.einsum("ih,hwc,jw->ijc", Ah, x, Aw, optimize=True)


def resample_adjoint(g, in_shape, s: int, direction: str, mode: str) -> np.ndarray:
    """Exact transpose of :func:`resample` for input geometry ``in_shape``."""
    Ah, Aw = resample_matrices(in_shape, s, direction, mode)
    return np.einsum("ih,ijc,jw->hwc", Ah, np.asarray(g, dtype=np.float64), Aw, optimize=True)


# --------------------------------------------------------------------------
# layers

class Layer:
    kind = "layer"

    def out_shape(self, shape):
        return tuple(shape)

    def forward(self, x, taps):
        raise NotImplementedError

    def backward(self, g, cache, tap_grads):
        raise NotImplementedError

    def tap_ids(self):
        return []


class Affine(Layer):
    kind = "affine"

    def __init__(self, scale: float = 1.0, offset: float = 0.0):
        self.scale = float(scale)
        self.offset = float(offset)

    def forward(self, x, taps):
        return self.scale * x + self.offset, None

    def backward(self, g, cache, tap_grads):
        return self.scale * g


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, weights, bias=None):
        self.weights = np.asarray(weights, dtype=np.float64)
        if self.weights.ndim != 4 or self.weights.shape[0] != self.weights.shape[1]:
            raise SpecError(f"conv weights must be (k, k, in, out), got {self.weights.shape}")
        if self.weights.shape[0] % 2 == 0:
            raise SpecError("conv kernel size must be odd")
        k, _, _, cout = self.weights.shape
        self.bias = np.zeros(cout) if bias is None else np.asarray(bias, dtype=np.float64)
        if self.bias.shape != (cout,):
            raise SpecError(f"conv bias must have shape ({cout},)")
        self.pad = k // 2

    def out_shape(self, shape):
        H, W, C = shape
        if C != self.weights.shape[2]:
            raise CompositionError(f"conv expects {self.weights.shape[2]} channels, got {C}")
        return H, W, self.weights.shape[3]

    def forward(self, x, taps):
        H, W, _ = x.shape
        k, p = self.weights.shape[0], self.pad
        xp = np.pad(x, ((p, p), (p, p), (0, 0)))
        y = np.broadcast_to(self.bias, (H, W, self.bias.size)).copy()
        for a in range(k):
            for b in range(k):
                y += xp[a : a + H, b : b + W, :] @ self.weights[a, b]
        return y, x.shape

    def backward(self, g, cache, tap_grads):
        H, W, C = cache
        k, p = self.weights.shape[0], self.pad
        gxp = np.zeros((H + 2 * p, W + 2 * p, C))
        for a in range(k):
            for b in range(k):
                gxp[a : a + H, b : b + W, :] += g @ self.weights[a, b].T
        return gxp[p : p + H, p : p + W, :]


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, taps):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, g, cache, tap_grads):
        return np.where(cache, g, 0.0)


class Resample(Layer):
    kind = "resample"

    def __init__(self, scale: int, direction: str, mode: str):
        if mode not in RESAMPLE_MODES:
            raise SpecError(f"unknown interpolation mode {mode!r}")
        _resample_shape((4 * scale, 4 * scale, 1), scale, direction)
        self.scale = int(scale)
        self.direction = direction
        self.mode = mode

    def out_shape(self, shape):
        return _resample_shape(shape, self.scale, self.direction)

    def forward(self, x, taps):
        return resample(x, self.scale, self.direction, self.mode), x.shape

    def backward(self, g, cache, tap_grads):
        return resample_adjoint(g, cache, self.scale, self.direction, self.mode)


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, taps):
        z = np.exp(x - x.max(axis=-1, keepdims=True))
        y = z / z.sum(axis=-1, keepdims=True)
        return y, y

    def backward(self, g, cache, tap_grads):
        y = cache
        return y * (g - np.sum(g * y, axis=-1, keepdims=True))


class FeatureTap(Layer):
    kind = "feature_tap"

    def __init__(self, tap_id):
        self.tap_id = tap_id

    def tap_ids(self):
        return [self.tap_id]

    def forward(self, x, taps):
        taps[self.tap_id] = x
        return x, None

    def backward(self, g, cache, tap_grads):
        extra = tap_grads.get(self.tap_id)
        return g if extra is None else g + extra


class BranchSum(Layer):
    kind = "branch_sum"

    def __init__(self, branches: Sequence[Sequence[Layer]]):
        if not branches:
            raise SpecError("branch_sum needs at least one branch")
        self.branches = [list(b) for b in branches]

    def tap_ids(self):
        return [t for br in self.branches for layer in br for t in layer.tap_ids()]

    def out_shape(self, shape):
        outs = {_chain_shape(br, shape) for br in self.branches}
        if len(outs) != 1:
            raise CompositionError(f"branch outputs disagree: {sorted(outs)}")
        return outs.pop()

    def forward(self, x, taps):
        total = None
        caches = []
        for br in self.branches:
            y, c = _run_forward(br, x, taps)
            caches.append(c)
            total = y if total is None else total + y
        return total, caches

    def backward(self, g, cache, tap_grads):
        gx = None
        for br, c in zip(self.branches, cache):
            gb = _run_backward(br, c, g, tap_grads)
            gx = gb if gx is None else gx + gb
        return gx


def _chain_shape(layers, shape):
    shape = tuple(shape)
    for layer in layers:
        shape = tuple(layer.out_shape(shape))
    return shape


def _run_forward(layers, x, taps):
    caches = []
    for layer in layers:
        x, c = layer.forward(x, taps)
        caches.append(c)
    return x, caches


def _run_backward(layers, caches, g, tap_grads):
    for layer, c in zip(reversed(layers), reversed(caches)):
        g = layer.backward(g, c, tap_grads)
    return g


# --------------------------------------------------------------------------
# network

def _build_layers(specs, mode, rng):
    layers = []
    for spec in specs:
        kind = spec.get("kind")
        if kind == "affine":
            layers.append(Affine(spec.get("scale", 1.0), spec.get("offset", 0.0)))
        elif kind == "conv2d":
            stride = spec.get("stride", 1)
            if stride != 1:
                raise SpecError("only stride-1 convolutions are supported")
            if "weights" in spec:
                layers.append(Conv2d(spec["weights"], spec.get("bias")))
                continue
            k, cin, cout = int(spec["kernel"]), int(spec["in"]), int(spec["out"])
            if k % 2 == 0:
                raise SpecError("conv kernel size must be odd")
            w = rng.uniform(-0.5, 0.5, size=(k, k, cin, cout)) / math.sqrt(k * k * cin)
            layers.append(Conv2d(w, spec.get("bias")))
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "resample":
            layers.append(Resample(int(spec["scale"]), spec["direction"], spec.get("mode", mode)))
        elif kind == "softmax":
            layers.append(Softmax())
        elif kind == "feature_tap":
            layers.append(FeatureTap(spec["id"]))
        elif kind == "branch_sum":
            layers.append(BranchSum([_build_layers(b, mode, rng) for b in spec["branches"]]))
        else:
            raise SpecError(f"unknown layer kind {kind!r}")
    return layers


@dataclass(eq=False)
class MicroNet:
    """A built network; treat instances as immutable."""

    layers: list
    input_shape: tuple
    num_classes: int
    interpolation_mode: str
    seed: int
    spec: dict = field(repr=False)

    @classmethod
    def from_spec(cls, spec: dict) -> "MicroNet":
        spec = copy.deepcopy(spec)
        mode = spec.get("interpolation_mode", "bilinear")
        if mode not in RESAMPLE_MODES:
            raise SpecError(f"unknown interpolation mode {mode!r}")
        seed = int(spec.get("seed", 0))
        rng = np.random.default_rng(seed)
        layers = _build_layers(spec.get("layers", []), mode, rng)
        input_shape = tuple(int(n) for n in spec["input_shape"])
        out = _chain_shape(layers, input_shape)
        if out[:2] != input_shape[:2]:
            raise CompositionError(f"output geometry {out[:2]} differs from input {input_shape[:2]}")
        num_classes = int(spec.get("num_classes", out[2]))
        if out[2] != num_classes:
            raise CompositionError(f"net emits {out[2]} channels but num_classes={num_classes}")
        ids = [t for layer in layers for t in layer.tap_ids()]
        if len(ids) != len(set(ids)):
            raise SpecError(f"duplicate feature tap ids in {ids}")
        return cls(layers, input_shape, num_classes, mode, seed, spec)

    @classmethod
    def load(cls, path) -> "MicroNet":
        return cls.from_spec(json.loads(Path(path).read_text()))

    def with_mode(self, mode: str) -> "MicroNet":
        """Same architecture and weights, different interpolation mode."""
        spec = copy.deepcopy(self.spec)
        spec["interpolation_mode"] = mode
        return MicroNet.from_spec(spec)

    @property
    def tap_ids(self) -> list:
        return [t for layer in self.layers for t in layer.tap_ids()]

    def _check_input(self, x):
        x = as_image(x)
        if x.shape != self.input_shape:
            raise CompositionError(f"net expects input {self.input_shape}, got {x.shape}")
        return x

    def forward(self, x):
        """Return ``(y, taps)``: the output tensor and the tap activations."""
        x = self._check_input(x)
        taps: dict = {}
        y, _ = _run_forward(self.layers, x, taps)
        return y, taps

    def predict(self, x) -> np.ndarray:
        """Per-pixel argmax class map."""
        return np.argmax(self.forward(x)[0], axis=-1)

    def value_and_gradient(self, x, loss: "LossSpec", preprocess: Callable | None = None):
        """Loss value and its gradient with respect to the input.

        With ``preprocess`` the forward pass sees ``preprocess(x)`` while the
        backward pass treats the preprocessing as the identity.
        """
        x = self._check_input(x)
        z = x if preprocess is None else as_image(preprocess(x))
        loss.check(self)
        taps: dict = {}
        y, caches = _run_forward(self.layers, z, taps)
        J, gy, tap_grads = loss.evaluate(y, taps)
        if gy is None:
            gy = np.zeros_like(y)
        g = _run_backward(self.layers, caches, gy, tap_grads)
        return J, g

    def input_gradient(self, x, loss: "LossSpec", preprocess: Callable | None = None):
        return self.value_and_gradient(x, loss, preprocess)[1]


def forward(net: MicroNet, x):
    return net.forward(x)


def input_gradient(net: MicroNet, x, loss: "LossSpec", preprocess: Callable | None = None):
    return net.input_gradient(x, loss, preprocess)


# --------------------------------------------------------------------------
# losses

LOSS_KINDS = (
    "l2_class_scores",
    "cross_entropy",
    "negative_log_activation_product",
    "sum",
    "half_squared_norm",
    "linear",
)


@dataclass(eq=False)
class LossSpec:
    """Scalar objective on the network output and/or feature taps."""

    kind: str
    target_class: int | None = None
    target_mask: Any = None
    taps: tuple = ()
    weights: Any = None
    delta: float = 1e-12

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise SpecError(f"unknown loss kind {self.kind!r}")
        self.taps = tuple(self.taps)

    def check(self, net: MicroNet) -> None:
        if self.kind == "l2_class_scores":
            if self.target_class is None or not 0 <= self.target_class < net.num_classes:
                raise SpecError(f"target class {self.target_class} not in 0..{net.num_classes - 1}")
        elif self.kind == "cross_entropy":
            m = np.asarray(self.target_mask)
            if m.shape != net.input_shape[:2]:
                raise SpecError(f"target mask shape {m.shape} != {net.input_shape[:2]}")
            if m.min() < 0 or m.max() >= net.num_classes:
                raise SpecError("target mask holds labels outside the class set")
        elif self.kind == "negative_log_activation_product":
            if not self.taps:
                raise SpecError("activation loss needs at least one tap")
            missing = set(self.taps) - set(net.tap_ids)
            if missing:
                raise SpecError(f"unknown feature taps {sorted(missing, key=str)}")

    def evaluate(self, y, taps):
        """Return ``(J, dJ/dy or None, {tap: dJ/df})``."""
        kind = self.kind
        if kind == "l2_class_scores":
            yt = y[..., self.target_class]
            J = float(np.sqrt(np.sum(yt * yt)))
            gy = np.zeros_like(y)
            if J > 0:
                gy[..., self.target_class] = yt / J
            return J, gy, {}
        if kind == "cross_entropy":
            m = np.asarray(self.target_mask, dtype=np.intp)
            H, W = m.shape
            rows, cols = np.indices((H, W))
            p = np.maximum(y[rows, cols, m], 1e-300)
            J = float(-np.mean(np.log(p)))
            gy = np.zeros_like(y)
            gy[rows, cols, m] = -1.0 / (H * W * p)
            return J, gy, {}
        if kind == "negative_log_activation_product":
            J = 0.0
            grads = {}
            for lam in self.taps:
                f = taps[lam]
                n = float(np.sqrt(np.sum(f * f)))
                J -= math.log(self.delta + n)
                grads[lam] = -f / (n * (self.delta + n)) if n > 0 else np.zeros_like(f)
            return J, None, grads
        if kind == "sum":
            return float(np.sum(y)), np.ones_like(y), {}
        if kind == "half_squared_norm":
            return 0.5 * float(np.sum(y * y)), y.copy(), {}
        w = np.asarray(self.weights, dtype=np.float64)
        return float(np.sum(w * y)), np.broadcast_to(w, y.shape).copy(), {}


# --------------------------------------------------------------------------
# canned architectures

def _stream(cin, hidden, first_tap):
    return [
        {"kind": "conv2d", "kernel": 3, "in": cin, "out": hidden},
        {"kind": "relu"},
        {"kind": "feature_tap", "id": first_tap},
        {"kind": "conv2d", "kernel": 3, "in": hidden, "out": hidden},
        {"kind": "relu"},
        {"kind": "feature_tap", "id": first_tap + 1},
    ]


def desk_net_spec(
    size: int = 32,
    channels: int = 3,
    num_classes: int = 4,
    hidden: int = 8,
    mode: str = "bilinear",
    seed: int = 0,
) -> dict:
    """Three-stream cascade network modelled on ICNet.

    Streams see the input at full, 1/2 and 1/4 resolution, each through two
    3x3 conv + relu layers.  They are fused by summation at 1/2 resolution
    (the full stream is downsampled after its convs, the quarter stream
    upsampled), a 1x1 conv head produces class logits, and the logits are
    upsampled back to full resolution before the softmax.  As in ICNet every
    path to the input crosses at least one resampling step.

    Feature taps are numbered by conv layer: 1-2 full resolution, 3-4 half,
    5-6 quarter.
    """
    def down(s):
        return {"kind": "resample", "scale": s, "direction": "down"}

    def up(s):
        return {"kind": "resample", "scale": s, "direction": "up"}

    return {
        "input_shape": [size, size, channels],
        "num_classes": num_classes,
        "interpolation_mode": mode,
        "seed": seed,
        "layers": [
            {"kind": "affine", "scale": 1 / 127.5, "offset": -1.0},
            {
                "kind": "branch_sum",
                "branches": [
                    _stream(channels, hidden, 1) + [down(2)],
                    [down(2)] + _stream(channels, hidden, 3),
                    [down(4)] + _stream(channels, hidden, 5) + [up(2)],
                ],
            },
            {"kind": "conv2d", "kernel": 1, "in": hidden, "out": num_classes},
            up(2),
            {"kind": "softmax"},
        ],
    }


def desk_net(mode: str = "bilinear", seed: int = 0, **kwargs) -> MicroNet:
    return MicroNet.from_spec(desk_net_spec(mode=mode, seed=seed, **kwargs))


def small_net_spec(size: int = 16, channels: int = 3, num_classes: int = 4, hidden: int = 8,
                   seed: int = 0) -> dict:
    """Three-layer plain net: 3x3 conv, relu, 1x1 conv head, softmax."""
    return {
        "input_shape": [size, size, channels],
        "num_classes": num_classes,
        "seed": seed,
        "layers": [
            {"kind": "affine", "scale": 1 / 127.5, "offset": -1.0},
            {"kind": "conv2d", "kernel": 3, "in": channels, "out": hidden},
            {"kind": "relu"},
            {"kind": "feature_tap", "id": 1},
            {"kind": "conv2d", "kernel": 1, "in": hidden, "out": num_classes},
            {"kind": "softmax"},
        ],
    }
