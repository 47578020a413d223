"""Experiment analytics: latent smoothness probe, Pareto summaries, and
compression of deep networks through sub-network splitting."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import torch

from .autoenc import AutoencoderModel, decode
from .latentopt import RegressionSplit, SearchConfig, run_search, select_best
from .matrep import LayoutError, unpack
from .netcore import EvalConfig, HiddenLayer, Mlp, eval_mlp
from .seeding import substream


@dataclass(frozen=True)
class PcaResult:
    v1: np.ndarray
    v2: np.ndarray
    eigenvalues: tuple[float, float]
    rank_deficient: bool


def _fix_sign(v: np.ndarray) -> np.ndarray:
    idx = int(np.argmax(np.abs(v)))
    return -v if v[idx] < 0 else v


def _power_iterate(
    matrix: np.ndarray,
    orthogonal_to: np.ndarray | None,
    iters: int = 1000,
    tol: float = 1e-10,
) -> tuple[np.ndarray, float]:
    rng = np.random.Generator(np.random.Philox(0))
    v = rng.standard_normal(matrix.shape[0])
    if orthogonal_to is not None:
        v -= (v @ orthogonal_to) * orthogonal_to
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = matrix @ v
        if orthogonal_to is not None:
            w -= (w @ orthogonal_to) * orthogonal_to
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return v, 0.0
        w /= norm
        lam = float(w @ matrix @ w)
        if np.linalg.norm(w - v) < tol or np.linalg.norm(w + v) < tol:
            v = w
            break
        v = w
    return v, lam


def pca_top2(samples: np.ndarray | torch.Tensor) -> PcaResult:
    """Top two principal directions via power iteration with deflation.

    Signs are fixed by making each vector's largest-magnitude coordinate
    positive. A vanishing second eigenvalue is flagged and the second
    direction is completed from the orthogonal complement.
    """
    x = np.asarray(
        samples.detach().cpu().numpy() if torch.is_tensor(samples) else samples,
        dtype=np.float64,
    )
    n, d = x.shape
    if n < 3:
        raise ValueError("need at least 3 samples")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / n

    v1, lam1 = _power_iterate(cov, orthogonal_to=None)
    deflated = cov - lam1 * np.outer(v1, v1)
    v2, lam2 = _power_iterate(deflated, orthogonal_to=v1)

    rank_deficient = lam2 <= max(abs(lam1), 1.0) * 1e-12
    if rank_deficient:
        basis = np.zeros(d)
        basis[int(np.argmin(np.abs(v1)))] = 1.0
        v2 = basis - (basis @ v1) * v1
        v2 /= np.linalg.norm(v2)
        lam2 = 0.0
    v1 = _fix_sign(v1)
    v2 = _fix_sign(v2)
    return PcaResult(v1=v1, v2=v2, eigenvalues=(lam1, lam2), rank_deficient=rank_deficient)


@dataclass
class SmoothnessGrid:
    base_z: torch.Tensor
    v1: np.ndarray
    v2: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray
    mse: np.ndarray
    rank_deficient: bool


def smoothness_probe(
    model: AutoencoderModel,
    decoder_index: int,
    seed: int,
    n_neighbors: int = 200,
    noise_std: float = 0.1,
    grid_step: float = 0.25,
    grid_range: float = 3.0,
    n_inputs: int = 1024,
    input_dim: int | None = None,
    output_dim: int | None = None,
) -> SmoothnessGrid:
    """Functional deviation of decoded networks across a local latent plane.

    The plane is spanned by the top two principal directions of a Gaussian
    neighbor cloud around a random base point; the base decode serves as the
    reference output.
    """
    layout = model.layout
    dtype = model.enc_in.weight.dtype
    n_tokens, d_model = model.config.token_count, model.config.d_model
    input_dim = input_dim or layout.input_dim_max
    output_dim = output_dim or layout.output_dim_max

    rng = substream(seed, 3)
    z_init = rng.standard_normal((n_tokens, d_model))
    neighbors = (
        z_init.reshape(-1)[None, :]
        + noise_std * rng.standard_normal((n_neighbors, n_tokens * d_model))
    )
    pca = pca_top2(neighbors)
    v1 = torch.from_numpy(pca.v1.reshape(n_tokens, d_model)).to(dtype)
    v2 = torch.from_numpy(pca.v2.reshape(n_tokens, d_model)).to(dtype)

    xs = torch.from_numpy(rng.uniform(-1.0, 1.0, size=(n_inputs, input_dim))).to(dtype)
    base_z = torch.from_numpy(z_init).to(dtype)
    eval_cfg = EvalConfig.soft()

    def decoded_outputs(z: torch.Tensor) -> torch.Tensor:
        rep = decode(model, decoder_index, z, input_dim, output_dim)
        mlp = unpack(rep, layout, decoder_index, hard=False)
        return eval_mlp(mlp, xs, eval_cfg)

    with torch.no_grad():
        base_out = decoded_outputs(base_z)
        steps = int(round(2 * grid_range / grid_step)) + 1
        alphas = -grid_range + grid_step * np.arange(steps)
        betas = alphas.copy()
        mse = np.zeros((steps, steps))
        for i, a in enumerate(alphas):
            for j, b in enumerate(betas):
                z = base_z + float(a) * v1 + float(b) * v2
                out = decoded_outputs(z)
                mse[i, j] = float(((out - base_out) ** 2).mean())
    return SmoothnessGrid(
        base_z=base_z,
        v1=pca.v1,
        v2=pca.v2,
        alphas=alphas,
        betas=betas,
        mse=mse,
        rank_deficient=pca.rank_deficient,
    )


def pareto_extract(points: list[tuple[float, int]]) -> list[tuple[float, int]]:
    """Non-dominated subset under (min error, min nonzeros), sorted by nonzeros.

    Sweep over sparsity groups in ascending order; a group survives only if
    its best error strictly improves on everything sparser.
    """
    if not points:
        raise ValueError("need at least one point")
    ordered = sorted(points, key=lambda p: (p[1], p[0]))
    front: list[tuple[float, int]] = []
    best_mse = math.inf
    idx = 0
    while idx < len(ordered):
        nz = ordered[idx][1]
        group = [p for p in ordered if p[1] == nz]
        group_best = group[0][0]
        if group_best < best_mse:
            front.extend(p for p in group if p[0] == group_best)
            best_mse = group_best
        idx += len(group)
    return front


def split_mlp(deep: Mlp, cut_layer: int) -> tuple[Mlp, Mlp]:
    """Split after hidden layer `cut_layer` (1-based); composition is exact.

    The front part ends in an identity output block so it emits the gated
    activations of the cut layer unchanged.
    """
    if not 1 <= cut_layer < deep.depth:
        raise ValueError(f"cut_layer must be in 1..{deep.depth - 1}")
    width = deep.layers[cut_layer - 1].width
    dtype = deep.output_weights.dtype
    front = Mlp(
        input_dim=deep.input_dim,
        output_dim=width,
        layers=deep.layers[:cut_layer],
        output_weights=torch.eye(width, dtype=dtype),
        output_biases=torch.zeros(width, dtype=dtype),
    )
    back = Mlp(
        input_dim=width,
        output_dim=deep.output_dim,
        layers=deep.layers[cut_layer:],
        output_weights=deep.output_weights,
        output_biases=deep.output_biases,
    )
    return front, back


def compose_mlps(a: Mlp, b: Mlp) -> Mlp:
    """Merge two networks into one by folding a's affine output into b's
    first hidden layer."""
    if a.output_dim != b.input_dim:
        raise ValueError("interface dimensions do not match")
    if b.depth == 0:
        raise ValueError("second part must have at least one hidden layer")
    first = b.layers[0]
    merged = HiddenLayer(
        weights=a.output_weights @ first.weights,
        biases=a.output_biases @ first.weights + first.biases,
        act_logits=first.act_logits,
        neuron_mask=first.neuron_mask,
    )
    return Mlp(
        input_dim=a.input_dim,
        output_dim=b.output_dim,
        layers=a.layers + (merged,) + b.layers[1:],
        output_weights=b.output_weights,
        output_biases=b.output_biases,
    )


def compress(
    deep: Mlp,
    model: AutoencoderModel,
    target_depths: tuple[int, ...],
    search_cfg: SearchConfig,
    cuts: tuple[int, ...] | None = None,
    n_train: int = 2048,
    n_test: int = 512,
    seed: int = 0,
) -> tuple[Mlp, dict]:
    """Compress a deep network part by part through latent search.

    Each part is matched against its own input/output behavior along the
    original forward chain (teacher outputs at the interfaces), then the
    compressed parts are composed back into a single network.
    """
    layout = model.layout
    if cuts is None and len(target_depths) > 1:
        step = deep.depth // len(target_depths)
        cuts = tuple(step * (i + 1) for i in range(len(target_depths) - 1))
    cuts = cuts or ()
    if len(cuts) != len(target_depths) - 1:
        raise ValueError("need one target depth per part")

    parts: list[Mlp] = []
    rest = deep
    offset = 0
    for cut in cuts:
        front, rest = split_mlp(rest, cut - offset)
        parts.append(front)
        offset = cut
    parts.append(rest)

    for part, depth in zip(parts, target_depths):
        if part.input_dim > layout.input_dim_max or part.output_dim > layout.output_dim_max:
            raise LayoutError(
                f"part boundary dims ({part.input_dim}, {part.output_dim}) "
                "exceed the autoencoder layout"
            )
        if depth > layout.max_hidden_layers:
            raise LayoutError("target depth exceeds decoder count")

    rng = substream(seed, 4)
    xs_train = torch.from_numpy(rng.uniform(-1.0, 1.0, size=(n_train, deep.input_dim)))
    xs_test = torch.from_numpy(rng.uniform(-1.0, 1.0, size=(n_test, deep.input_dim)))

    eval_cfg = EvalConfig.hard()
    compressed_parts: list[Mlp] = []
    part_reports = []
    t_train, t_test = xs_train, xs_test
    for index, (part, depth) in enumerate(zip(parts, target_depths)):
        with torch.no_grad():
            y_train = eval_mlp(part, t_train, eval_cfg)
            y_test = eval_mlp(part, t_test, eval_cfg)
        data = RegressionSplit(
            x_train=t_train, y_train=y_train, x_test=t_test, y_test=y_test
        )
        cfg = replace(search_cfg, decoder_set=(depth,))
        result = run_search(model, data, cfg)
        chosen = select_best(result.runs, search_cfg.selection_tolerance)
        compressed_parts.append(chosen.mlp.to_dtype(torch.float64))
        part_reports.append(
            {
                "part": index,
                "original_depth": part.depth,
                "target_depth": depth,
                "interface_mse": chosen.test_mse,
                "nonzero_weights": chosen.nonzero_weights,
                "trajectory": chosen.trajectory,
                "diverged": chosen.diverged,
            }
        )
        t_train, t_test = y_train, y_test

    composed = compressed_parts[0]
    for part in compressed_parts[1:]:
        composed = compose_mlps(composed, part)

    with torch.no_grad():
        reference = eval_mlp(deep, xs_test, eval_cfg)
        approx = eval_mlp(composed, xs_test, eval_cfg)
        output_mse = float(((reference - approx) ** 2).mean())
        ref_power = float((reference**2).mean())
    report = {
        "parts": part_reports,
        "output_mse": output_mse,
        "relative_output_mse": output_mse / max(ref_power, 1e-30),
        "original_depth": deep.depth,
        "compressed_depth": composed.depth,
    }
    return composed, report
