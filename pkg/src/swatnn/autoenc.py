"""Multi-scale attention autoencoder over network representations.

One encoder maps a packed network to a latent token matrix; one decoder per
target depth regenerates representations of exactly that depth from the
latent point. Decoding is an autoregressive rollout over continuous row
vectors so it stays differentiable with respect to the latent, which is what
the downstream gradient search relies on.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .matrep import MatRep, RepLayout, full_validity, pack, sample_random_mlp, unpack
from .netcore import EvalConfig, Mlp, eval_mlp
from .seeding import substream


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass(frozen=True)
class AutoencoderConfig:
    layout: RepLayout
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 2
    precision: str = "float64"

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"unknown precision {self.precision!r}")

    @property
    def token_count(self) -> int:
        return self.layout.max_neurons

    @property
    def num_decoders(self) -> int:
        return self.layout.max_hidden_layers

    @property
    def dtype(self) -> torch.dtype:
        return torch.float64 if self.precision == "float64" else torch.float32

    def to_dict(self) -> dict:
        return {
            "layout": self.layout.to_dict(),
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_layers": self.n_layers,
            "precision": self.precision,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "AutoencoderConfig":
        return cls(
            layout=RepLayout.from_dict(doc["layout"]),
            d_model=int(doc["d_model"]),
            n_heads=int(doc["n_heads"]),
            n_layers=int(doc["n_layers"]),
            precision=str(doc["precision"]),
        )


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, dtype: torch.dtype):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model, dtype=dtype)
        self.proj = nn.Linear(d_model, d_model, dtype=dtype)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        qkv = self.qkv(x).reshape(b, t, 3, self.n_heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        causal = torch.triu(torch.ones(t, t, dtype=torch.bool, device=x.device), 1)
        att = att.masked_fill(causal, float("-inf"))
        att = torch.softmax(att, dim=-1)
        out = (att @ v).transpose(1, 2).reshape(b, t, d)
        return self.proj(out)


class Block(nn.Module):
    """Pre-norm transformer block with causal self-attention."""

    def __init__(self, d_model: int, n_heads: int, dtype: torch.dtype):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model, dtype=dtype)
        self.attn = SelfAttention(d_model, n_heads, dtype)
        self.ln2 = nn.LayerNorm(d_model, dtype=dtype)
        self.fc = nn.Linear(d_model, 4 * d_model, dtype=dtype)
        self.out = nn.Linear(4 * d_model, d_model, dtype=dtype)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.out(torch.nn.functional.gelu(self.fc(self.ln2(x))))


class DecoderHead(nn.Module):
    """Depth-specific decoder: latent prefix, start token, row-by-row rollout."""

    def __init__(self, cfg: AutoencoderConfig):
        super().__init__()
        d, dtype = cfg.d_model, cfg.dtype
        n = cfg.token_count
        c = cfg.layout.columns
        self.start = nn.Parameter(torch.zeros(d, dtype=dtype))
        self.feed_in = nn.Linear(c, d, dtype=dtype)
        self.pos = nn.Parameter(torch.zeros(2 * n + 1, d, dtype=dtype))
        self.blocks = nn.ModuleList(
            Block(d, cfg.n_heads, dtype) for _ in range(cfg.n_layers)
        )
        self.ln = nn.LayerNorm(d, dtype=dtype)
        self.out = nn.Linear(d, c, dtype=dtype)


class AutoencoderModel(nn.Module):
    def __init__(self, config: AutoencoderConfig):
        super().__init__()
        self.config = config
        layout = config.layout
        d, dtype = config.d_model, config.dtype
        self.enc_in = nn.Linear(2 * layout.columns, d, dtype=dtype)
        self.enc_pos = nn.Parameter(torch.zeros(config.token_count, d, dtype=dtype))
        self.enc_blocks = nn.ModuleList(
            Block(d, config.n_heads, dtype) for _ in range(config.n_layers)
        )
        self.enc_ln = nn.LayerNorm(d, dtype=dtype)
        self.decoders = nn.ModuleList(
            DecoderHead(config) for _ in range(config.num_decoders)
        )
        mask_cols = torch.zeros(layout.columns, dtype=torch.bool)
        for j in range(layout.max_hidden_layers):
            mask_cols[layout.mask_col(j)] = True
        self._mask_cols: torch.Tensor
        self.register_buffer("_mask_cols", mask_cols, persistent=False)

    @property
    def layout(self) -> RepLayout:
        return self.config.layout


def build_model(config: AutoencoderConfig, seed: int) -> AutoencoderModel:
    """Construct and initialize deterministically for the given seed."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = AutoencoderModel(config)
        for module in model.modules():
            if isinstance(module, nn.Linear):
                nn.init.normal_(module.weight, std=0.02)
                nn.init.zeros_(module.bias)
        for head in model.decoders:
            nn.init.normal_(head.start, std=0.02)
            nn.init.normal_(head.pos, std=0.02)
        nn.init.normal_(model.enc_pos, std=0.02)
    return model


def tokenize(model: AutoencoderModel, rep: MatRep) -> torch.Tensor:
    """Project each row of the two concatenated channels to one token."""
    features = torch.cat((rep.values, rep.validity), dim=1)
    return model.enc_in(features.to(model.enc_in.weight.dtype))


def _encode_tokens(model: AutoencoderModel, tokens: torch.Tensor) -> torch.Tensor:
    h = tokens + model.enc_pos
    for block in model.enc_blocks:
        h = block(h)
    return model.enc_ln(h)


def encode(model: AutoencoderModel, rep: MatRep) -> torch.Tensor:
    """Latent token matrix of shape (token_count, d_model)."""
    return _encode_tokens(model, tokenize(model, rep).unsqueeze(0))[0]


def encode_batch(
    model: AutoencoderModel, values: torch.Tensor, validity: torch.Tensor
) -> torch.Tensor:
    features = torch.cat((values, validity), dim=2).to(model.enc_in.weight.dtype)
    return _encode_tokens(model, model.enc_in(features))


def _rollout(model: AutoencoderModel, head: DecoderHead, z: torch.Tensor) -> torch.Tensor:
    """Generate all representation rows for a batch of latents (B, N, d)."""
    b = z.shape[0]
    n = model.config.token_count
    prefix = z + head.pos[:n]
    start = (head.start + head.pos[n]).expand(b, 1, -1)
    seq = torch.cat((prefix, start), dim=1)
    rows = []
    for t in range(n):
        h = seq
        for block in head.blocks:
            h = block(h)
        row = head.out(head.ln(h[:, -1]))
        rows.append(row)
        if t < n - 1:
            tok = head.feed_in(row) + head.pos[n + 1 + t]
            seq = torch.cat((seq, tok.unsqueeze(1)), dim=1)
    return torch.stack(rows, dim=1)


def decode_values(
    model: AutoencoderModel, decoder_index: int, z: torch.Tensor
) -> torch.Tensor:
    """Batched raw decode: (B, N, d) latents to (B, N, C) value channels.

    Indicator columns pass through a sigmoid so masks land in [0, 1];
    everything else is read as-is (weights, biases, activation logits).
    """
    if not 1 <= decoder_index <= model.config.num_decoders:
        raise ValueError(f"decoder_index must be in 1..{model.config.num_decoders}")
    raw = _rollout(model, model.decoders[decoder_index - 1], z)
    return torch.where(model._mask_cols, torch.sigmoid(raw), raw)


def decode(
    model: AutoencoderModel,
    decoder_index: int,
    z: torch.Tensor,
    input_dim: int | None = None,
    output_dim: int | None = None,
) -> MatRep:
    """Deterministic rollout of one latent into a full-size representation.

    Only the first `decoder_index` hidden blocks are meaningful; validity is
    imposed structurally from the layout and the requested boundary dims.
    """
    values = decode_values(model, decoder_index, z.unsqueeze(0))[0]
    validity = full_validity(
        model.layout, decoder_index, input_dim, output_dim
    ).to(values.dtype)
    return MatRep(values=values, validity=validity)


def functional_loss(
    source: Mlp,
    decoded: Mlp,
    xs: torch.Tensor,
    source_cfg: EvalConfig | None = None,
    decoded_cfg: EvalConfig | None = None,
) -> torch.Tensor:
    """Summed squared output difference over the probe inputs."""
    source_cfg = source_cfg or EvalConfig.hard()
    decoded_cfg = decoded_cfg or EvalConfig.soft()
    with torch.no_grad():
        ys = eval_mlp(source, xs, source_cfg)
    yd = eval_mlp(decoded, xs.to(decoded.output_weights.dtype), decoded_cfg)
    return ((ys - yd) ** 2).sum()


def min_loss(
    source: Mlp,
    model: AutoencoderModel,
    xs: torch.Tensor,
    decoded_cfg: EvalConfig | None = None,
) -> tuple[torch.Tensor, int]:
    """Best functional loss across decoders; gradient flows through that
    branch only. Returns (loss, 1-based decoder index); ties go to the
    smaller index."""
    rep = pack(source, model.layout)
    z = encode(model, rep)
    losses = []
    for k in range(1, model.config.num_decoders + 1):
        dec = decode(model, k, z, source.input_dim, source.output_dim)
        decoded = unpack(dec, model.layout, k, hard=False)
        losses.append(functional_loss(source, decoded, xs, decoded_cfg=decoded_cfg))
    stacked = torch.stack(losses)
    idx = int(stacked.argmin())
    return stacked[idx], idx + 1


class EmaMonitor:
    """Exponential moving average with a runaway-loss warning.

    Warns when the smoothed loss exceeds twice its historical minimum,
    evaluated only once the window has filled.
    """

    def __init__(self, window: int = 500):
        self.alpha = 2.0 / (window + 1)
        self.window = window
        self.count = 0
        self.ema: float | None = None
        self.minimum = math.inf

    def update(self, value: float) -> bool:
        self.ema = value if self.ema is None else (
            self.ema + self.alpha * (value - self.ema)
        )
        self.count += 1
        if self.count < self.window:
            return False
        self.minimum = min(self.minimum, self.ema)
        return self.ema > 2.0 * self.minimum


@dataclass(frozen=True)
class TrainSpec:
    epochs: int = 1
    batches_per_epoch: int = 2000
    batch_size: int = 32
    inputs_per_mlp: int = 64
    lr: float = 1e-3
    seed: int = 0
    depth_range: tuple[int, int] | None = None
    width_range: tuple[int, int] | None = None
    input_dim: int | None = None
    output_dim: int | None = None
    checkpoint_every: int = 0
    min_mode: str = "hard"

    def __post_init__(self) -> None:
        if self.min_mode not in ("hard", "soft"):
            raise ValueError("min_mode must be 'hard' or 'soft'")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batches_per_epoch": self.batches_per_epoch,
            "batch_size": self.batch_size,
            "inputs_per_mlp": self.inputs_per_mlp,
            "lr": self.lr,
            "seed": self.seed,
            "depth_range": list(self.depth_range) if self.depth_range else None,
            "width_range": list(self.width_range) if self.width_range else None,
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "checkpoint_every": self.checkpoint_every,
            "min_mode": self.min_mode,
        }


def _stacked_eval(
    values: torch.Tensor,
    layout: RepLayout,
    hidden_layers: int,
    input_dim: int,
    output_dim: int,
    xs: torch.Tensor,
    cfg: EvalConfig,
) -> torch.Tensor:
    """Evaluate a batch of decoded value channels without materializing Mlps.

    Mirrors `unpack` + `eval_mlp` for full-width decoded networks; the
    per-sample equivalence is pinned by tests.
    """
    n = layout.max_neurons
    h = xs
    fan_in = input_dim
    for j in range(hidden_layers):
        wcols = layout.hidden_weight_cols(j)
        weights = values[:, :fan_in, wcols]
        biases = values[:, :, layout.hidden_bias_col(j)]
        logits = values[:, :, layout.hidden_act_cols(j)]
        mask = values[:, :, layout.mask_col(j)]
        pre = torch.bmm(h, weights) + biases.unsqueeze(1)
        mix = torch.softmax(logits / cfg.temperature, dim=-1)
        leaky = torch.where(pre >= 0, pre, cfg.leaky_slope * pre)
        acts = torch.stack((leaky, torch.tanh(pre), torch.sigmoid(pre)), dim=-1)
        gate = torch.sigmoid(cfg.mask_sharpness * (mask - cfg.neuron_threshold))
        h = (acts * mix.unsqueeze(1)).sum(dim=-1) * gate.unsqueeze(1)
        fan_in = n
    ocols = layout.output_weight_cols
    out_w = values[:, :fan_in, ocols][:, :, :output_dim]
    out_b = values[:, :output_dim, layout.output_bias_col]
    return torch.bmm(h, out_w) + out_b.unsqueeze(1)


def _sample_batch(layout: RepLayout, spec: TrainSpec, rng) -> tuple[list[Mlp], torch.Tensor]:
    input_dim = spec.input_dim or layout.input_dim_max
    nets = [
        sample_random_mlp(
            layout,
            rng,
            depth_range=spec.depth_range,
            width_range=spec.width_range,
            input_dim=spec.input_dim,
            output_dim=spec.output_dim,
        )
        for _ in range(spec.batch_size)
    ]
    xs = torch.from_numpy(
        rng.uniform(-1.0, 1.0, size=(spec.batch_size, spec.inputs_per_mlp, input_dim))
    )
    return nets, xs


def batch_decoder_losses(
    model: AutoencoderModel,
    nets: list[Mlp],
    xs: torch.Tensor,
    decoded_cfg: EvalConfig | None = None,
) -> torch.Tensor:
    """Functional losses for every (decoder, network) pair, shape (L, B).

    The heavy pieces (encoding, rollout, decoded evaluation) run batched
    across the networks; sources are evaluated individually since their
    shapes differ.
    """
    cfg = decoded_cfg or EvalConfig.soft()
    layout = model.layout
    dtype = model.enc_in.weight.dtype
    input_dim = nets[0].input_dim
    output_dim = nets[0].output_dim

    reps = [pack(net, layout) for net in nets]
    values = torch.stack([r.values for r in reps]).to(dtype)
    validity = torch.stack([r.validity for r in reps]).to(dtype)
    with torch.no_grad():
        ys = torch.stack(
            [eval_mlp(net, xs[i], EvalConfig.hard()) for i, net in enumerate(nets)]
        ).to(dtype)

    z = encode_batch(model, values, validity)
    xs_model = xs.to(dtype)
    losses = []
    for k in range(1, model.config.num_decoders + 1):
        decoded = decode_values(model, k, z)
        yd = _stacked_eval(decoded, layout, k, input_dim, output_dim, xs_model, cfg)
        losses.append(((ys - yd) ** 2).sum(dim=(1, 2)))
    return torch.stack(losses)


def batch_min_losses(
    model: AutoencoderModel,
    nets: list[Mlp],
    xs: torch.Tensor,
    decoded_cfg: EvalConfig | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-network minimum functional loss and the winning decoder indices."""
    stacked = batch_decoder_losses(model, nets, xs, decoded_cfg)
    winners = stacked.argmin(dim=0)
    per_net = stacked.gather(0, winners.unsqueeze(0)).squeeze(0)
    return per_net, winners


def train_autoencoder(
    config: AutoencoderConfig,
    spec: TrainSpec,
    out_dir: str | Path | None = None,
) -> tuple[AutoencoderModel, list[dict]]:
    """Stochastic training on freshly sampled networks.

    Emits one metrics record per epoch; optionally checkpoints every
    `checkpoint_every` batches plus a final checkpoint when `out_dir` is set.
    Deterministic for a given seed at a fixed thread count.
    """
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    model = build_model(config, seed=spec.seed)
    opt = torch.optim.Adam(model.parameters(), lr=spec.lr)
    monitor = EmaMonitor()
    metrics: list[dict] = []
    num_decoders = config.num_decoders
    batch_index = 0

    for epoch in range(spec.epochs):
        epoch_loss = 0.0
        wins = np.zeros(num_decoders, dtype=np.int64)
        warned = False
        for b in range(spec.batches_per_epoch):
            rng = substream(spec.seed, 1, epoch, b)
            nets, xs = _sample_batch(config.layout, spec, rng)
            stacked = batch_decoder_losses(model, nets, xs)
            winners = stacked.argmin(dim=0)
            if spec.min_mode == "soft":
                # smooth blend across decoders keeps all branches learning
                blend = torch.softmax(-stacked, dim=0)
                loss = (blend * stacked).sum(dim=0).mean()
            else:
                loss = stacked.gather(0, winners.unsqueeze(0)).squeeze(0).mean()
            value = float(loss.detach())
            if not math.isfinite(value):
                if out_path is not None:
                    save_checkpoint(model, out_path / "diagnostic.ckpt")
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} batch {b}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += value
            for w in winners.tolist():
                wins[w] += 1
            if monitor.update(value):
                warned = True
            batch_index += 1
            if (
                out_path is not None
                and spec.checkpoint_every > 0
                and batch_index % spec.checkpoint_every == 0
            ):
                save_checkpoint(model, out_path / f"batch{batch_index:07d}.ckpt")
        total = wins.sum() or 1
        metrics.append(
            {
                "epoch": epoch,
                "mean_loss": epoch_loss / max(spec.batches_per_epoch, 1),
                "per_decoder_win_rate": (wins / total).tolist(),
                "divergence_warning": warned,
            }
        )
    if out_path is not None:
        save_checkpoint(model, out_path / "final.ckpt")
    return model, metrics


def sample_heldout(
    layout: RepLayout,
    n_mlps: int,
    inputs_per_mlp: int,
    seed: int,
    spec: TrainSpec | None = None,
) -> list[tuple[Mlp, torch.Tensor]]:
    """Fixed evaluation set drawn from the same distribution as training."""
    spec = spec or TrainSpec()
    pairs = []
    for i in range(n_mlps):
        rng = substream(seed, 2, i)
        net = sample_random_mlp(
            layout,
            rng,
            depth_range=spec.depth_range,
            width_range=spec.width_range,
            input_dim=spec.input_dim,
            output_dim=spec.output_dim,
        )
        xs = torch.from_numpy(
            rng.uniform(-1.0, 1.0, size=(inputs_per_mlp, net.input_dim))
        )
        pairs.append((net, xs))
    return pairs


def mean_min_loss(
    model: AutoencoderModel, pairs: list[tuple[Mlp, torch.Tensor]]
) -> float:
    with torch.no_grad():
        values = [float(min_loss(net, model, xs)[0]) for net, xs in pairs]
    return float(np.mean(values))


_CKPT_MAGIC = b"SWNNAE01"


def save_checkpoint(model: AutoencoderModel, path: str | Path) -> None:
    """Self-describing container: config, tensor index, checksummed payload."""
    state = model.state_dict()
    index = []
    chunks = []
    offset = 0
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy()
        arr = arr.astype(arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        index.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = json.dumps(
        {
            "format": "swatnn-autoencoder",
            "version": 1,
            "config": model.config.to_dict(),
            "tensors": index,
            "payload_sha256": hashlib.sha256(payload).hexdigest(),
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(payload)


def load_checkpoint(path: str | Path) -> AutoencoderModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise ValueError("not a checkpoint file")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header["payload_sha256"]:
        raise ValueError("checkpoint payload checksum mismatch")
    config = AutoencoderConfig.from_dict(header["config"])
    model = AutoencoderModel(config)
    state = {}
    for entry in header["tensors"]:
        arr = np.frombuffer(
            payload,
            dtype=np.dtype(entry["dtype"]),
            count=int(np.prod(entry["shape"])) if entry["shape"] else 1,
            offset=entry["offset"],
        ).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    return model
