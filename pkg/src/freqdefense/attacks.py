"""Iterative gradient attacks against a :class:`~freqdefense.micronet.MicroNet`.

All attacks share one update.  With ``grad`` the input gradient of the
attack loss at the current iterate,

    g_{t+1} = mu * g_t + grad / ||grad||_1
    x_{t+1} = x_t - alpha * sign(g_{t+1})          (l_inf)
    x_{t+1} = x_t - alpha * g_{t+1} / ||g_{t+1}||_2  (l2)

with ``alpha = epsilon / T``, followed by projection of ``x_{t+1} - x`` onto
the epsilon ball and clipping of ``x_{t+1}`` to [0, 255] after every step.
Sign and L2-normalised steps are invariant to positive rescaling, so with
``mu = 0`` the L1 normalisation is a no-op and the update is plain signed
gradient descent.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import MaskConstructionError, SpecError
from .micronet import LossSpec, MicroNet
from .tensor import as_image

ATTACK_KINDS = ("mfgsm", "metzen_llm", "iterative_mirror", "mopuri")
NORMS = ("l_inf", "l2")

# Default momentum per attack kind.
_DEFAULT_MOMENTUM = {"mfgsm": 10.0, "metzen_llm": 0.0, "iterative_mirror": 0.0, "mopuri": 1.0}


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    epsilon: float = 10.0
    norm: str = "l_inf"
    iterations: int = 20
    momentum: float | None = None
    target_class: int | None = None
    tap_layers: tuple = ()
    seed: int = 0
    name: str | None = None

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise SpecError(f"unknown attack kind {self.kind!r}")
        if self.norm not in NORMS:
            raise SpecError(f"unknown norm {self.norm!r}")
        if not self.epsilon > 0:
            raise SpecError("epsilon must be positive")
        if int(self.iterations) < 1:
            raise SpecError("iterations must be at least 1")
        if self.momentum is None:
            object.__setattr__(self, "momentum", _DEFAULT_MOMENTUM[self.kind])
        if self.momentum < 0:
            raise SpecError("momentum must be non-negative")
        if self.kind == "mopuri" and not self.tap_layers:
            object.__setattr__(self, "tap_layers", (3,))
        object.__setattr__(self, "tap_layers", tuple(self.tap_layers))
        object.__setattr__(self, "iterations", int(self.iterations))
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def step_size(self) -> float:
        return self.epsilon / self.iterations

    @property
    def label(self) -> str:
        return self.name or self.kind

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tap_layers"] = list(self.tap_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise SpecError(f"unknown attack fields {sorted(extra)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AttackSpec":
        return cls.from_dict(json.loads(text))


@dataclass(eq=False)
class Perturbation:
    r: np.ndarray
    spec: AttackSpec
    degenerate: bool = False
    losses: list = field(default_factory=list, repr=False)

    def norm(self) -> float:
        return perturbation_norm(self.r, self.spec.norm)


def perturbation_norm(r, norm: str) -> float:
    r = np.asarray(r)
    if norm == "l_inf":
        return float(np.max(np.abs(r)))
    return float(np.sqrt(np.sum(r * r)))


def project(r, epsilon: float, norm: str) -> np.ndarray:
    """Project ``r`` onto the ``norm`` ball of radius ``epsilon``."""
    if norm == "l_inf":
        return np.clip(r, -epsilon, epsilon)
    n = float(np.sqrt(np.sum(r * r)))
    return r * (epsilon / n) if n > epsilon else r


def apply_perturbation(x, r) -> np.ndarray:
    """The adversarial image ``x + r`` clipped to the valid pixel range."""
    return np.clip(as_image(x) + as_image(r, "r"), 0.0, 255.0)


def _descend(net: MicroNet, x0, spec: AttackSpec, loss: LossSpec, *,
             preprocess: Callable | None = None, clip: bool = True,
             start=None) -> Perturbation:
    """Shared iterative update; minimises ``loss`` starting at ``start`` (default ``x0``)."""
    x0 = as_image(x0)
    xt = x0.copy() if start is None else as_image(start).copy()
    g = np.zeros_like(x0)
    alpha = spec.step_size
    losses = []
    for t in range(spec.iterations):
        J, grad = net.value_and_gradient(xt, loss, preprocess)
        losses.append(J)
        l1 = float(np.sum(np.abs(grad)))
        if l1 == 0.0 and t == 0:
            return Perturbation(np.zeros_like(x0), spec, degenerate=True, losses=losses)
        g = spec.momentum * g
        if l1 > 0.0:
            g = g + grad / l1
        if spec.norm == "l_inf":
            step = np.sign(g)
        else:
            n2 = float(np.sqrt(np.sum(g * g)))
            step = g / n2 if n2 > 0 else np.zeros_like(g)
        xt = x0 + project(xt - alpha * step - x0, spec.epsilon, spec.norm)
        if clip:
            xt = np.clip(xt, 0.0, 255.0)
    r = xt - x0
    losses.append(net.value_and_gradient(xt, loss, preprocess)[0])
    return Perturbation(r, spec, losses=losses)


def mfgsm(net: MicroNet, x, spec: AttackSpec, loss: LossSpec | None = None,
          preprocess: Callable | None = None) -> Perturbation:
    """Momentum iterative FGSM minimising the L2 norm of one class's scores.

    ``loss`` overrides the default ``||y_tau(x + r)||_2`` objective.
    """
    if loss is None:
        if spec.target_class is None:
            raise SpecError("mfgsm needs a target class")
        loss = LossSpec("l2_class_scores", target_class=spec.target_class)
    return _descend(net, x, spec, loss, preprocess=preprocess)


def nearest_donor_mask(pred, target_class: int) -> np.ndarray:
    """Replace every ``target_class`` pixel by its nearest other-class pixel.

    Distance is 2D Euclidean on the pixel grid; among equidistant donors the
    smallest class index wins.
    """
    pred = np.asarray(pred)
    donors = pred != target_class
    if not donors.any():
        raise MaskConstructionError(f"prediction is entirely class {target_class}")
    out = pred.copy()
    holes = np.argwhere(~donors)
    if holes.size == 0:
        return out
    src = np.argwhere(donors)
    src_cls = pred[donors]  # row-major, same order as argwhere
    big = np.iinfo(np.int64).max
    for start in range(0, len(holes), 2048):
        chunk = holes[start : start + 2048]
        d2 = ((chunk[:, None, :] - src[None, :, :]) ** 2).sum(-1)
        best = d2.min(axis=1, keepdims=True)
        cls = np.where(d2 == best, src_cls[None, :], big).min(axis=1)
        out[chunk[:, 0], chunk[:, 1]] = cls
    return out


def mirror_mask(pred) -> np.ndarray:
    """Horizontal mirror: ``m[h, w] -> m[h, W-1-w]``."""
    return np.asarray(pred)[:, ::-1].copy()


def metzen_llm(net: MicroNet, x, spec: AttackSpec) -> Perturbation:
    """Targeted class-erasing attack towards a nearest-neighbour fake mask."""
    if spec.target_class is None:
        raise SpecError("metzen_llm needs a target class")
    x = as_image(x)
    mask = nearest_donor_mask(net.predict(x), spec.target_class)
    return _descend(net, x, spec, LossSpec("cross_entropy", target_mask=mask))


def iterative_mirror(net: MicroNet, x, spec: AttackSpec) -> Perturbation:
    """Confusion attack steering the prediction to its left-right mirror."""
    x = as_image(x)
    mask = mirror_mask(net.predict(x))
    return _descend(net, x, spec, LossSpec("cross_entropy", target_mask=mask))


def mopuri(net: MicroNet, spec: AttackSpec) -> Perturbation:
    """Data-free, image-agnostic attack maximising feature-tap activations.

    The perturbation itself is fed to the network, starting from a seeded
    uniform draw in [-epsilon, epsilon].
    """
    if not spec.tap_layers:
        raise SpecError("mopuri needs at least one tap layer")
    if spec.norm != "l_inf":
        r0 = np.random.default_rng(spec.seed).standard_normal(net.input_shape)
        r0 *= spec.epsilon / np.sqrt(np.sum(r0 * r0))
    else:
        r0 = np.random.default_rng(spec.seed).uniform(-spec.epsilon, spec.epsilon, net.input_shape)
    loss = LossSpec("negative_log_activation_product", taps=spec.tap_layers)
    zero = np.zeros(net.input_shape)
    return _descend(net, zero, spec, loss, clip=False, start=r0)


def bpda_attack(net: MicroNet, defense: Callable, x, spec: AttackSpec) -> Perturbation:
    """mFGSM through a preprocessing defense, differentiated as the identity."""
    return mfgsm(net, x, spec, preprocess=defense)


def run_attack(net: MicroNet, x, spec: AttackSpec) -> Perturbation:
    """Dispatch on ``spec.kind``."""
    if spec.kind == "mfgsm":
        return mfgsm(net, x, spec)
    if spec.kind == "metzen_llm":
        return metzen_llm(net, x, spec)
    if spec.kind == "iterative_mirror":
        return iterative_mirror(net, x, spec)
    return mopuri(net, spec)
