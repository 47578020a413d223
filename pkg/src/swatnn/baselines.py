"""Comparison methods: direct gradient training and ADMM magnitude pruning.

Both operate on the same network type as the latent search so their result
records are directly comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .netcore import (
    NUM_ACTIVATIONS,
    ActivationKind,
    EvalConfig,
    HiddenLayer,
    Mlp,
    count_nonzero_weights,
    eval_mlp,
)


@dataclass(frozen=True)
class Architecture:
    depth: int
    width: int
    activation: ActivationKind

    def __post_init__(self) -> None:
        if self.depth < 1 or self.width < 1:
            raise ValueError("depth and width must be positive")


@dataclass(frozen=True)
class AdmmConfig:
    rho: float = 2.0
    threshold: float = 0.1
    outer_iters: int = 20
    inner_steps: int = 200
    inner_lr: float = 0.01
    fine_tune_steps: int = 500

    def __post_init__(self) -> None:
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.threshold < 0:
            raise ValueError("threshold must be nonnegative")


def _build_network(arch: Architecture, input_dim: int, output_dim: int, rng) -> Mlp:
    onehot = torch.zeros(arch.width, NUM_ACTIVATIONS, dtype=torch.float64)
    onehot[:, arch.activation.index] = 1.0

    def init(shape):
        return torch.from_numpy(rng.uniform(-0.5, 0.5, size=shape))

    layers = []
    fan_in = input_dim
    for _ in range(arch.depth):
        layers.append(
            HiddenLayer(
                weights=init((fan_in, arch.width)).requires_grad_(True),
                biases=init((arch.width,)).requires_grad_(True),
                act_logits=onehot.clone(),
                neuron_mask=torch.ones(arch.width, dtype=torch.float64),
            )
        )
        fan_in = arch.width
    return Mlp(
        input_dim=input_dim,
        output_dim=output_dim,
        layers=tuple(layers),
        output_weights=init((fan_in, output_dim)).requires_grad_(True),
        output_biases=init((output_dim,)).requires_grad_(True),
    )


def _trainable(mlp: Mlp) -> list[torch.Tensor]:
    params = []
    for layer in mlp.layers:
        params += [layer.weights, layer.biases]
    return params + [mlp.output_weights, mlp.output_biases]


def _mse(mlp: Mlp, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    pred = eval_mlp(mlp, x, EvalConfig.hard())
    return ((pred - y) ** 2).mean()


def train_traditional(
    arch: Architecture,
    dataset,
    epochs: int = 6000,
    lr: float = 0.01,
    seed: int = 0,
) -> tuple[Mlp, dict]:
    """Full-batch gradient descent with one fixed activation network-wide."""
    rng = np.random.default_rng(seed)
    x = torch.as_tensor(dataset.x_train, dtype=torch.float64)
    y = torch.as_tensor(dataset.y_train, dtype=torch.float64)
    mlp = _build_network(arch, x.shape[1], y.shape[1], rng)
    params = _trainable(mlp)

    trajectory = []
    diverged = False
    for _ in range(epochs):
        loss = _mse(mlp, x, y)
        value = float(loss.detach())
        trajectory.append(value)
        if not math.isfinite(value):
            diverged = True
            break
        grads = torch.autograd.grad(loss, params)
        with torch.no_grad():
            for p, g in zip(params, grads):
                p -= lr * g

    final = mlp.detach()
    with torch.no_grad():
        metrics = {
            "train_mse": float(_mse(final, x, y)),
            "test_mse": float(
                _mse(
                    final,
                    torch.as_tensor(dataset.x_test, dtype=torch.float64),
                    torch.as_tensor(dataset.y_test, dtype=torch.float64),
                )
            ),
            "nonzero_weights": count_nonzero_weights(final),
            "trajectory": trajectory,
            "diverged": diverged,
        }
    return final, metrics


def admm_project(w: torch.Tensor, threshold: float) -> torch.Tensor:
    """Magnitude thresholding: entries below the threshold drop to zero."""
    return w * (w.abs() >= threshold).to(w.dtype)


def admm_prune(mlp: Mlp, dataset, cfg: AdmmConfig | None = None) -> tuple[Mlp, dict]:
    """Alternate between a penalized fit and the sparsity projection, then
    freeze the final pattern and fine-tune the surviving weights."""
    cfg = cfg or AdmmConfig()
    x = torch.as_tensor(dataset.x_train, dtype=torch.float64)
    y = torch.as_tensor(dataset.y_train, dtype=torch.float64)
    x_test = torch.as_tensor(dataset.x_test, dtype=torch.float64)
    y_test = torch.as_tensor(dataset.y_test, dtype=torch.float64)

    work = mlp.detach().to_dtype(torch.float64)
    weights = [l.weights.clone().requires_grad_(True) for l in work.layers]
    weights.append(work.output_weights.clone().requires_grad_(True))
    biases = [l.biases.clone().requires_grad_(True) for l in work.layers]
    biases.append(work.output_biases.clone().requires_grad_(True))

    def assemble() -> Mlp:
        layers = tuple(
            HiddenLayer(
                weights=weights[i],
                biases=biases[i],
                act_logits=l.act_logits,
                neuron_mask=l.neuron_mask,
            )
            for i, l in enumerate(work.layers)
        )
        return Mlp(
            input_dim=work.input_dim,
            output_dim=work.output_dim,
            layers=layers,
            output_weights=weights[-1],
            output_biases=biases[-1],
        )

    before = {
        "train_mse": float(_mse(work, x, y)),
        "test_mse": float(_mse(work, x_test, y_test)),
        "nonzero_weights": count_nonzero_weights(work),
    }

    with torch.no_grad():
        duals = [torch.zeros_like(w) for w in weights]
        targets = [admm_project(w.detach(), cfg.threshold) for w in weights]

    params = weights + biases
    diverged = False
    for _ in range(cfg.outer_iters):
        for _ in range(cfg.inner_steps):
            net = assemble()
            penalty = sum(
                ((w - z + u) ** 2).sum() for w, z, u in zip(weights, targets, duals)
            )
            loss = _mse(net, x, y) + (cfg.rho / 2.0) * penalty
            if not math.isfinite(float(loss.detach())):
                diverged = True
                break
            grads = torch.autograd.grad(loss, params)
            with torch.no_grad():
                for p, g in zip(params, grads):
                    p -= cfg.inner_lr * g
        if diverged:
            break
        with torch.no_grad():
            targets = [
                admm_project(w + u, cfg.threshold) for w, u in zip(weights, duals)
            ]
            duals = [u + w - z for u, w, z in zip(duals, weights, targets)]

    with torch.no_grad():
        patterns = [(z != 0).to(torch.float64) for z in targets]
        for w, pattern in zip(weights, patterns):
            w *= pattern

    for _ in range(cfg.fine_tune_steps):
        if diverged:
            break
        net = assemble()
        loss = _mse(net, x, y)
        if not math.isfinite(float(loss.detach())):
            diverged = True
            break
        grads = torch.autograd.grad(loss, params)
        with torch.no_grad():
            for p, g, pattern in zip(weights, grads[: len(weights)], patterns):
                p -= cfg.inner_lr * g
                p *= pattern
            for p, g in zip(biases, grads[len(weights):]):
                p -= cfg.inner_lr * g

    pruned = assemble().detach()
    after = {
        "train_mse": float(_mse(pruned, x, y)),
        "test_mse": float(_mse(pruned, x_test, y_test)),
        "nonzero_weights": count_nonzero_weights(pruned),
    }
    return pruned, {"before": before, "after": after, "diverged": diverged}
