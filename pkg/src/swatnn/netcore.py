"""Feed-forward networks with per-neuron activation mixtures and soft masks.

A network is a plain container of tensors so every evaluation path stays
differentiable; structural conversions (pruning, hardening) return new
instances instead of mutating.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import Enum

import torch

DEFAULT_DTYPE = torch.float64

# Temperature low enough that a unit logit gap saturates the activation
# softmax to a numerically exact one-hot in double precision.
MIN_TEMPERATURE = 0.01


class ActivationKind(Enum):
    LEAKY_RELU = "leaky_relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"

    @property
    def index(self) -> int:
        return ACTIVATION_ORDER.index(self)


ACTIVATION_ORDER: tuple[ActivationKind, ...] = (
    ActivationKind.LEAKY_RELU,
    ActivationKind.TANH,
    ActivationKind.SIGMOID,
)
NUM_ACTIVATIONS = len(ACTIVATION_ORDER)


class MaskMode(Enum):
    SOFT = "soft"
    HARD = "hard"


@dataclass(frozen=True)
class EvalConfig:
    """How soft quantities are interpreted during a forward pass."""

    temperature: float = 1.0
    leaky_slope: float = 0.01
    mask_mode: MaskMode = MaskMode.SOFT
    mask_sharpness: float = 20.0
    neuron_threshold: float = 0.5

    def __post_init__(self) -> None:
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not 0 < self.leaky_slope < 1:
            raise ValueError(f"leaky_slope must lie in (0, 1), got {self.leaky_slope}")
        if not self.mask_sharpness > 0:
            raise ValueError("mask_sharpness must be positive")

    @classmethod
    def soft(cls, temperature: float = 1.0) -> "EvalConfig":
        return cls(temperature=temperature)

    @classmethod
    def hard(cls) -> "EvalConfig":
        """Discrete semantics: hard neuron gates, saturated activation choice."""
        return cls(temperature=MIN_TEMPERATURE, mask_mode=MaskMode.HARD)


@dataclass(frozen=True)
class HiddenLayer:
    """One hidden layer: weights are (fan_in, n), everything else per-neuron."""

    weights: torch.Tensor
    biases: torch.Tensor
    act_logits: torch.Tensor
    neuron_mask: torch.Tensor

    @property
    def width(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class Mlp:
    """A concrete network. Treated as an immutable value after construction."""

    input_dim: int
    output_dim: int
    layers: tuple[HiddenLayer, ...]
    output_weights: torch.Tensor
    output_biases: torch.Tensor

    def __post_init__(self) -> None:
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be positive")
        fan_in = self.input_dim
        for i, layer in enumerate(self.layers):
            if layer.weights.shape[0] != fan_in:
                raise ValueError(
                    f"layer {i}: expected fan-in {fan_in}, got {layer.weights.shape[0]}"
                )
            n = layer.weights.shape[1]
            if layer.biases.shape != (n,):
                raise ValueError(f"layer {i}: bias shape {tuple(layer.biases.shape)} != ({n},)")
            if layer.act_logits.shape != (n, NUM_ACTIVATIONS):
                raise ValueError(f"layer {i}: act_logits must be ({n}, {NUM_ACTIVATIONS})")
            if layer.neuron_mask.shape != (n,):
                raise ValueError(f"layer {i}: neuron_mask shape mismatch")
            fan_in = n
        if self.output_weights.shape != (fan_in, self.output_dim):
            raise ValueError(
                f"output weights {tuple(self.output_weights.shape)} != ({fan_in}, {self.output_dim})"
            )
        if self.output_biases.shape != (self.output_dim,):
            raise ValueError("output bias shape mismatch")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(layer.width for layer in self.layers)

    def to_dtype(self, dtype: torch.dtype) -> "Mlp":
        layers = tuple(
            HiddenLayer(
                weights=l.weights.to(dtype),
                biases=l.biases.to(dtype),
                act_logits=l.act_logits.to(dtype),
                neuron_mask=l.neuron_mask.to(dtype),
            )
            for l in self.layers
        )
        return replace(
            self,
            layers=layers,
            output_weights=self.output_weights.to(dtype),
            output_biases=self.output_biases.to(dtype),
        )

    def detach(self) -> "Mlp":
        layers = tuple(
            HiddenLayer(
                weights=l.weights.detach(),
                biases=l.biases.detach(),
                act_logits=l.act_logits.detach(),
                neuron_mask=l.neuron_mask.detach(),
            )
            for l in self.layers
        )
        return replace(
            self,
            layers=layers,
            output_weights=self.output_weights.detach(),
            output_biases=self.output_biases.detach(),
        )


def activation_apply(kind: ActivationKind, x: float, slope: float = 0.01) -> float:
    """Evaluate one candidate activation at a scalar."""
    if kind is ActivationKind.LEAKY_RELU:
        return x if x >= 0 else slope * x
    if kind is ActivationKind.TANH:
        return math.tanh(x)
    return 1.0 / (1.0 + math.exp(-x))


def _softmax(values: list[float]) -> list[float]:
    m = max(values)
    exps = [math.exp(v - m) for v in values]
    total = sum(exps)
    return [e / total for e in exps]


def neuron_output(
    pre_activation: float,
    act_logits,
    temperature: float,
    slope: float = 0.01,
) -> float:
    """Mixture of the candidate activations, weighted by a tempered softmax."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    logits = [float(v) for v in act_logits]
    if len(logits) != NUM_ACTIVATIONS:
        raise ValueError(f"expected {NUM_ACTIVATIONS} logits, got {len(logits)}")
    alphas = _softmax([v / temperature for v in logits])
    return sum(
        a * activation_apply(kind, pre_activation, slope)
        for a, kind in zip(alphas, ACTIVATION_ORDER)
    )


def soft_neuron_gate(
    mask_value: float,
    mode: MaskMode = MaskMode.SOFT,
    t_n: float = 0.5,
    sharpness: float = 20.0,
) -> float:
    """Per-neuron multiplier derived from the activity indicator."""
    if mode is MaskMode.HARD:
        return 1.0 if mask_value >= t_n else 0.0
    return 1.0 / (1.0 + math.exp(-sharpness * (mask_value - t_n)))


def _candidate_activations(pre: torch.Tensor, slope: float) -> torch.Tensor:
    # stacked on a trailing axis in ACTIVATION_ORDER
    leaky = torch.where(pre >= 0, pre, slope * pre)
    return torch.stack((leaky, torch.tanh(pre), torch.sigmoid(pre)), dim=-1)


def _gate(mask: torch.Tensor, cfg: EvalConfig) -> torch.Tensor:
    if cfg.mask_mode is MaskMode.HARD:
        return (mask >= cfg.neuron_threshold).to(mask.dtype)
    return torch.sigmoid(cfg.mask_sharpness * (mask - cfg.neuron_threshold))


def eval_mlp(mlp: Mlp, xs: torch.Tensor, cfg: EvalConfig | None = None) -> torch.Tensor:
    """Forward pass over a batch of inputs; the output layer is affine only."""
    if cfg is None:
        cfg = EvalConfig()
    if xs.ndim != 2 or xs.shape[1] != mlp.input_dim:
        raise ValueError(
            f"input batch must be (B, {mlp.input_dim}), got {tuple(xs.shape)}"
        )
    h = xs
    for layer in mlp.layers:
        pre = h @ layer.weights + layer.biases
        mix = torch.softmax(layer.act_logits / cfg.temperature, dim=-1)
        acts = _candidate_activations(pre, cfg.leaky_slope)
        h = (acts * mix).sum(dim=-1) * _gate(layer.neuron_mask, cfg)
    return h @ mlp.output_weights + mlp.output_biases


def prune_inactive(mlp: Mlp, t_n: float = 0.5) -> Mlp:
    """Structurally remove neurons whose mask falls below the threshold.

    A fully emptied layer is kept with width zero; downstream layers then see
    only their biases, which matches hard-gated evaluation.
    """
    layers = []
    keep_prev: torch.Tensor | None = None
    for layer in mlp.layers:
        keep = layer.neuron_mask >= t_n
        weights = layer.weights if keep_prev is None else layer.weights[keep_prev]
        layers.append(
            HiddenLayer(
                weights=weights[:, keep],
                biases=layer.biases[keep],
                act_logits=layer.act_logits[keep],
                neuron_mask=layer.neuron_mask[keep],
            )
        )
        keep_prev = keep
    output_weights = mlp.output_weights
    if keep_prev is not None:
        output_weights = output_weights[keep_prev]
    return Mlp(
        input_dim=mlp.input_dim,
        output_dim=mlp.output_dim,
        layers=tuple(layers),
        output_weights=output_weights,
        output_biases=mlp.output_biases,
    )


def count_nonzero_weights(mlp: Mlp) -> int:
    """Exact nonzero entries across hidden and output weight matrices."""
    total = sum(int((l.weights != 0).sum()) for l in mlp.layers)
    return total + int((mlp.output_weights != 0).sum())


def active_neuron_counts(mlp: Mlp, t_n: float = 0.5) -> tuple[int, ...]:
    return tuple(int((l.neuron_mask >= t_n).sum()) for l in mlp.layers)


def mlp_to_json(mlp: Mlp) -> str:
    doc = {
        "format": "swatnn-mlp",
        "version": 1,
        "input_dim": mlp.input_dim,
        "output_dim": mlp.output_dim,
        "activations": [kind.value for kind in ACTIVATION_ORDER],
        "layers": [
            {
                "weights": layer.weights.tolist(),
                "biases": layer.biases.tolist(),
                "act_logits": layer.act_logits.tolist(),
                "neuron_mask": layer.neuron_mask.tolist(),
            }
            for layer in mlp.layers
        ],
        "output_weights": mlp.output_weights.tolist(),
        "output_biases": mlp.output_biases.tolist(),
    }
    return json.dumps(doc, sort_keys=True)


def mlp_from_json(text: str, dtype: torch.dtype = DEFAULT_DTYPE) -> Mlp:
    doc = json.loads(text)
    if doc.get("format") != "swatnn-mlp":
        raise ValueError("not a network document")
    expected = [kind.value for kind in ACTIVATION_ORDER]
    if doc.get("activations") != expected:
        raise ValueError(f"activation order mismatch: {doc.get('activations')}")
    t = lambda v: torch.tensor(v, dtype=dtype)
    layers = tuple(
        HiddenLayer(
            weights=t(entry["weights"]),
            biases=t(entry["biases"]),
            act_logits=t(entry["act_logits"]),
            neuron_mask=t(entry["neuron_mask"]),
        )
        for entry in doc["layers"]
    )
    return Mlp(
        input_dim=int(doc["input_dim"]),
        output_dim=int(doc["output_dim"]),
        layers=layers,
        output_weights=t(doc["output_weights"]),
        output_biases=t(doc["output_biases"]),
    )
