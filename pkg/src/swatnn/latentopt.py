"""Gradient-based search for task-optimal networks in the frozen latent space.

A latent point is optimized jointly with a learnable weight threshold under
sparsity and compactness penalties, with the activation mixture sharpened on
a temperature schedule. At the end the decoded network is hardened: weights
below the threshold and neurons below the activity threshold are removed,
activation mixtures snap to their argmax.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import torch

from .autoenc import AutoencoderModel, decode
from .matrep import unpack
from .netcore import (
    EvalConfig,
    MaskMode,
    Mlp,
    active_neuron_counts,
    count_nonzero_weights,
    eval_mlp,
    prune_inactive,
)


class NoViableResultError(RuntimeError):
    """Every decoder run diverged; there is nothing to select."""


@dataclass(frozen=True)
class PenaltyConfig:
    lambda_s: float = 0.0
    mu_1: float = 0.1
    mu_c: float = 0.01
    alpha: float = 0.0
    beta: float = 0.0
    t_s_init: float = 0.05
    t_n: float = 0.5
    soft_scale: float = 20.0
    soft_count_mode: str = "per_weight"

    def __post_init__(self) -> None:
        for name in ("lambda_s", "mu_1", "mu_c", "alpha", "beta"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be finite and nonnegative")
        if self.soft_count_mode not in ("per_weight", "aggregate"):
            raise ValueError("soft_count_mode must be 'per_weight' or 'aggregate'")


PENALTY_LEVELS: dict[str, PenaltyConfig] = {
    "none": PenaltyConfig(),
    "small": PenaltyConfig(lambda_s=1e-5, alpha=1e-1, beta=1e-4),
    "medium": PenaltyConfig(lambda_s=1e-4, alpha=4e-1, beta=1e-3),
    "large": PenaltyConfig(lambda_s=1e-3, alpha=4e-1, beta=1e-1),
}


@dataclass(frozen=True)
class AnnealSchedule:
    t_init: float = 1.0
    t_final: float = 0.01
    e_anneal: int = 3000

    def __post_init__(self) -> None:
        if not self.t_init >= self.t_final > 0:
            raise ValueError("need t_init >= t_final > 0")
        if self.e_anneal < 1:
            raise ValueError("e_anneal must be positive")


def temperature(epoch: int, sched: AnnealSchedule) -> float:
    """Linear decay from t_init down to t_final, held there afterwards."""
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    slope = (sched.t_init - sched.t_final) / sched.e_anneal
    return max(sched.t_final, sched.t_init - slope * epoch)


@dataclass(frozen=True)
class SearchConfig:
    steps: int = 2000
    lr: float = 0.1
    seed: int = 0
    decoder_set: tuple[int, ...] | None = None
    penalties: PenaltyConfig = field(default_factory=PenaltyConfig)
    anneal: AnnealSchedule = field(default_factory=AnnealSchedule)
    selection_tolerance: float = 0.05
    divergence_limit: float = 1e6

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.decoder_set is not None and len(self.decoder_set) == 0:
            raise ValueError("decoder_set must be nonempty")


@dataclass(frozen=True)
class RegressionSplit:
    """Minimal train/test container accepted by the search loop."""

    x_train: torch.Tensor
    y_train: torch.Tensor
    x_test: torch.Tensor
    y_test: torch.Tensor


@dataclass
class DecoderRun:
    decoder_index: int
    z: torch.Tensor
    t_s: float
    mlp: Mlp
    train_mse: float
    test_mse: float
    nonzero_weights: int
    active_neurons: tuple[int, ...]
    trajectory: list[float]
    diverged: bool


@dataclass
class SearchResult:
    runs: tuple[DecoderRun, ...]

    def selected(self, tolerance: float = 0.05) -> DecoderRun:
        return select_best(self.runs, tolerance)


def flatten_weights(mlp: Mlp) -> torch.Tensor:
    parts = [layer.weights.reshape(-1) for layer in mlp.layers]
    parts.append(mlp.output_weights.reshape(-1))
    return torch.cat(parts)


def sparsity_penalty(
    w: torch.Tensor, t_s: torch.Tensor | float, cfg: PenaltyConfig
) -> torch.Tensor:
    """L1 shrinkage plus a differentiable count of below-threshold weights."""
    if not torch.is_tensor(t_s):
        t_s = torch.tensor(float(t_s), dtype=w.dtype)
    l1 = cfg.mu_1 * w.abs().sum()
    if cfg.soft_count_mode == "aggregate":
        count = torch.sigmoid(cfg.soft_scale * (w.abs() - t_s).abs().sum())
    else:
        count = torch.sigmoid(cfg.soft_scale * (t_s - w.abs())).sum()
    return l1 + cfg.mu_c * count


def soft_weight_mask(
    w: torch.Tensor,
    t_s: torch.Tensor | float,
    soft_scale: float = 20.0,
    mode: MaskMode = MaskMode.SOFT,
) -> torch.Tensor:
    if mode is MaskMode.HARD:
        return w * (w.abs() >= float(t_s)).to(w.dtype)
    if not torch.is_tensor(t_s):
        t_s = torch.tensor(float(t_s), dtype=w.dtype)
    return w * torch.sigmoid(soft_scale * (w.abs() - t_s))


def compactness_penalty(
    layer_masks: list[torch.Tensor] | tuple[torch.Tensor, ...],
    alpha: float,
    beta: float,
) -> torch.Tensor:
    """Polarize per-layer activity (via negative spread) and shrink its mean.

    Uses the population standard deviation; a single-neuron layer has spread
    zero by definition.
    """
    if len(layer_masks) == 0:
        raise ValueError("need at least one layer")
    stds, means = [], []
    for m in layer_masks:
        means.append(m.mean())
        if m.numel() <= 1:
            stds.append(torch.zeros((), dtype=m.dtype))
        else:
            stds.append(m.std(correction=0))
    std_term = torch.stack(stds).mean()
    mean_term = torch.stack(means).mean()
    return -alpha * std_term + beta * mean_term


def mask_mlp_weights(
    mlp: Mlp,
    t_s: torch.Tensor | float,
    soft_scale: float = 20.0,
    mode: MaskMode = MaskMode.SOFT,
) -> Mlp:
    """Apply the weight threshold mask to all weight matrices; biases pass."""
    layers = tuple(
        replace(l, weights=soft_weight_mask(l.weights, t_s, soft_scale, mode))
        for l in mlp.layers
    )
    return replace(
        mlp,
        layers=layers,
        output_weights=soft_weight_mask(mlp.output_weights, t_s, soft_scale, mode),
    )


def search_loss(
    model: AutoencoderModel,
    z: torch.Tensor,
    decoder_index: int,
    x: torch.Tensor,
    y: torch.Tensor,
    epoch: int,
    cfg: SearchConfig,
    t_s: torch.Tensor | float,
) -> torch.Tensor:
    """Mean squared error of the softly-masked decoded network plus penalties."""
    pcfg = cfg.penalties
    rep = decode(model, decoder_index, z, input_dim=x.shape[1], output_dim=y.shape[1])
    soft_mlp = unpack(rep, model.layout, decoder_index, hard=False)
    masked = mask_mlp_weights(soft_mlp, t_s, pcfg.soft_scale, MaskMode.SOFT)
    eval_cfg = EvalConfig(
        temperature=temperature(epoch, cfg.anneal),
        mask_sharpness=pcfg.soft_scale,
        neuron_threshold=pcfg.t_n,
    )
    pred = eval_mlp(masked, x, eval_cfg)
    data = ((pred - y) ** 2).mean()
    penalty = data.new_zeros(())
    if pcfg.lambda_s > 0:
        penalty = penalty + pcfg.lambda_s * sparsity_penalty(
            flatten_weights(soft_mlp), t_s, pcfg
        )
    if pcfg.alpha > 0 or pcfg.beta > 0:
        penalty = penalty + compactness_penalty(
            [l.neuron_mask for l in soft_mlp.layers], pcfg.alpha, pcfg.beta
        )
    return data + penalty


def harden(
    model: AutoencoderModel,
    z: torch.Tensor,
    decoder_index: int,
    t_s: float,
    pcfg: PenaltyConfig,
    input_dim: int,
    output_dim: int,
) -> Mlp:
    """Discrete network for test-time metrics: hard masks, argmax activations,
    sub-threshold weights zeroed."""
    with torch.no_grad():
        rep = decode(model, decoder_index, z, input_dim, output_dim)
        hard = unpack(
            rep, model.layout, decoder_index, hard=True, neuron_threshold=pcfg.t_n
        )
        return mask_mlp_weights(hard, t_s, pcfg.soft_scale, MaskMode.HARD).detach()


def _mse(mlp: Mlp, x: torch.Tensor, y: torch.Tensor) -> float:
    with torch.no_grad():
        pred = eval_mlp(mlp, x.to(mlp.output_weights.dtype), EvalConfig.hard())
        return float(((pred - y.to(pred.dtype)) ** 2).mean())


def run_search(model: AutoencoderModel, data, cfg: SearchConfig) -> SearchResult:
    """Independent gradient descent per decoder; deterministic per seed.

    Each decoder draws its own latent from a stream keyed by seed XOR index,
    so runs are reproducible regardless of which subset is requested.
    """
    dtype = model.enc_in.weight.dtype
    x_train = torch.as_tensor(data.x_train, dtype=dtype)
    y_train = torch.as_tensor(data.y_train, dtype=dtype)
    x_test = torch.as_tensor(data.x_test, dtype=dtype)
    y_test = torch.as_tensor(data.y_test, dtype=dtype)
    if y_train.ndim == 1:
        y_train = y_train.unsqueeze(1)
    if y_test.ndim == 1:
        y_test = y_test.unsqueeze(1)

    decoders = cfg.decoder_set or tuple(range(1, model.config.num_decoders + 1))
    pcfg = cfg.penalties
    n_tokens, d_model = model.config.token_count, model.config.d_model

    runs = []
    for k in sorted(decoders):
        gen = torch.Generator().manual_seed((cfg.seed ^ k) & 0x7FFFFFFFFFFFFFFF)
        z = torch.randn(n_tokens, d_model, generator=gen, dtype=dtype)
        z.requires_grad_(True)
        t_s = torch.tensor(pcfg.t_s_init, dtype=dtype, requires_grad=True)
        trajectory: list[float] = []
        diverged = False
        for e in range(cfg.steps):
            loss = search_loss(model, z, k, x_train, y_train, e, cfg, t_s)
            value = float(loss.detach())
            trajectory.append(value)
            if not math.isfinite(value) or value > cfg.divergence_limit:
                diverged = True
                break
            grad_z, grad_t = torch.autograd.grad(loss, (z, t_s))
            with torch.no_grad():
                z -= cfg.lr * grad_z
                t_s -= cfg.lr * grad_t
                t_s.clamp_(0.0, 1.0)

        t_s_final = float(t_s.detach())
        hard = harden(
            model, z.detach(), k, t_s_final, pcfg, x_train.shape[1], y_train.shape[1]
        )
        pruned = prune_inactive(hard, pcfg.t_n)
        runs.append(
            DecoderRun(
                decoder_index=k,
                z=z.detach(),
                t_s=t_s_final,
                mlp=hard,
                train_mse=_mse(hard, x_train, y_train),
                test_mse=_mse(hard, x_test, y_test),
                nonzero_weights=count_nonzero_weights(pruned),
                active_neurons=active_neuron_counts(hard, pcfg.t_n),
                trajectory=trajectory,
                diverged=diverged,
            )
        )
    return SearchResult(runs=tuple(runs))


def select_best(runs, tolerance: float = 0.05):
    """Keep candidates whose error is within the relative band of the best,
    then take the sparsest; ties fall back to error, then decoder index."""
    viable = [
        r
        for r in runs
        if not getattr(r, "diverged", False) and math.isfinite(r.test_mse)
    ]
    if not viable:
        raise NoViableResultError("all decoder runs diverged")
    best = min(r.test_mse for r in viable)
    band = [r for r in viable if r.test_mse <= best * (1.0 + tolerance)]
    return min(band, key=lambda r: (r.nonzero_weights, r.test_mse, r.decoder_index))
