"""Fixed-size two-channel matrix encoding of a network.

Column order per hidden layer block: fan-out weight columns, one bias column,
activation one-hot columns; then the output block (weights + bias column);
then one neuron-indicator column per hidden layer. Row h always refers to
neuron h, zero-padded up to the layout's maximum width. The validity channel
marks which entries carry real network content.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch

from .netcore import DEFAULT_DTYPE, NUM_ACTIVATIONS, HiddenLayer, Mlp


class LayoutError(ValueError):
    """Network does not fit the representation layout."""


@dataclass(frozen=True)
class RepLayout:
    max_neurons: int = 5
    max_hidden_layers: int = 2
    num_activations: int = NUM_ACTIVATIONS
    input_dim_max: int = 2
    output_dim_max: int = 1

    def __post_init__(self) -> None:
        if self.num_activations != NUM_ACTIVATIONS:
            raise ValueError(f"activation set is fixed at {NUM_ACTIVATIONS}")
        if self.max_neurons < self.input_dim_max:
            raise ValueError("max_neurons must cover input_dim_max")
        if self.max_neurons < self.output_dim_max:
            raise ValueError("max_neurons must cover output_dim_max")
        if self.max_hidden_layers < 1 or self.max_neurons < 1:
            raise ValueError("layout dimensions must be positive")

    @property
    def columns(self) -> int:
        n, l, a = self.max_neurons, self.max_hidden_layers, self.num_activations
        return (l + 1) * (n + 1) + l * a + l

    def hidden_weight_cols(self, j: int) -> slice:
        """Weight columns of hidden block j (0-based)."""
        start = j * (self.max_neurons + 1 + self.num_activations)
        return slice(start, start + self.max_neurons)

    def hidden_bias_col(self, j: int) -> int:
        return self.hidden_weight_cols(j).stop

    def hidden_act_cols(self, j: int) -> slice:
        start = self.hidden_bias_col(j) + 1
        return slice(start, start + self.num_activations)

    @property
    def output_weight_cols(self) -> slice:
        start = self.max_hidden_layers * (self.max_neurons + 1 + self.num_activations)
        return slice(start, start + self.max_neurons)

    @property
    def output_bias_col(self) -> int:
        return self.output_weight_cols.stop

    def mask_col(self, j: int) -> int:
        return self.output_bias_col + 1 + j

    def to_dict(self) -> dict:
        return {
            "max_neurons": self.max_neurons,
            "max_hidden_layers": self.max_hidden_layers,
            "num_activations": self.num_activations,
            "input_dim_max": self.input_dim_max,
            "output_dim_max": self.output_dim_max,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RepLayout":
        return cls(**{k: int(v) for k, v in doc.items()})


@dataclass(frozen=True)
class MatRep:
    """Value channel plus {0,1} validity channel, both (max_neurons, columns)."""

    values: torch.Tensor
    validity: torch.Tensor


def full_validity(
    layout: RepLayout,
    hidden_layers: int,
    input_dim: int | None = None,
    output_dim: int | None = None,
) -> torch.Tensor:
    """Validity of a maximal-width network of the given depth.

    Used to impose structure on decoder output, where only the boundary
    dimensions and depth are externally known.
    """
    i = layout.input_dim_max if input_dim is None else input_dim
    o = layout.output_dim_max if output_dim is None else output_dim
    n = layout.max_neurons
    v = torch.zeros(n, layout.columns, dtype=DEFAULT_DTYPE)
    fan_in = i
    for j in range(hidden_layers):
        v[:fan_in, layout.hidden_weight_cols(j)] = 1.0
        v[:, layout.hidden_bias_col(j)] = 1.0
        v[:, layout.hidden_act_cols(j)] = 1.0
        fan_in = n
    v[:fan_in, layout.output_weight_cols][:, :o] = 1.0
    v[:o, layout.output_bias_col] = 1.0
    for j in range(layout.max_hidden_layers):
        v[:, layout.mask_col(j)] = 1.0
    return v


def pack(mlp: Mlp, layout: RepLayout) -> MatRep:
    """Encode a network into the fixed-size representation."""
    n = layout.max_neurons
    if mlp.depth > layout.max_hidden_layers:
        raise LayoutError(f"depth {mlp.depth} exceeds layout {layout.max_hidden_layers}")
    if any(w > n for w in mlp.widths):
        raise LayoutError(f"widths {mlp.widths} exceed layout {n}")
    if mlp.input_dim > layout.input_dim_max:
        raise LayoutError("input_dim exceeds layout")
    if mlp.output_dim > layout.output_dim_max:
        raise LayoutError("output_dim exceeds layout")

    dtype = mlp.output_weights.dtype
    values = torch.zeros(n, layout.columns, dtype=dtype)
    validity = torch.zeros(n, layout.columns, dtype=dtype)

    fan_in = mlp.input_dim
    for j, layer in enumerate(mlp.layers):
        w = layer.width
        wcols = layout.hidden_weight_cols(j)
        values[:fan_in, wcols.start : wcols.start + w] = layer.weights
        validity[:fan_in, wcols.start : wcols.start + w] = 1.0
        values[:w, layout.hidden_bias_col(j)] = layer.biases
        validity[:w, layout.hidden_bias_col(j)] = 1.0
        values[:w, layout.hidden_act_cols(j)] = layer.act_logits
        validity[:w, layout.hidden_act_cols(j)] = 1.0
        values[:w, layout.mask_col(j)] = layer.neuron_mask
        fan_in = w

    ocols = layout.output_weight_cols
    values[:fan_in, ocols.start : ocols.start + mlp.output_dim] = mlp.output_weights
    validity[:fan_in, ocols.start : ocols.start + mlp.output_dim] = 1.0
    values[: mlp.output_dim, layout.output_bias_col] = mlp.output_biases
    validity[: mlp.output_dim, layout.output_bias_col] = 1.0

    # the indicator block is always meaningful, over all layout columns
    for j in range(layout.max_hidden_layers):
        validity[:, layout.mask_col(j)] = 1.0
    return MatRep(values=values, validity=validity)


def _valid_count(column: torch.Tensor) -> int:
    return int(column.sum().item())


def unpack(
    rep: MatRep,
    layout: RepLayout,
    hidden_layers: int,
    hard: bool = False,
    neuron_threshold: float = 0.5,
) -> Mlp:
    """Rebuild a network from the first `hidden_layers` blocks.

    Dimensions come from the validity channel, which must mark contiguous
    leading regions (as produced by `pack` and `full_validity`). Activation
    columns are taken as mixing logits; `hard` snaps masks to {0,1} at the
    threshold and logits to an argmax one-hot.
    """
    k = hidden_layers
    if not 1 <= k <= layout.max_hidden_layers:
        raise ValueError(f"hidden_layers must be in 1..{layout.max_hidden_layers}")
    values, validity = rep.values, rep.validity
    dtype = values.dtype

    input_dim = _valid_count(validity[:, layout.hidden_weight_cols(0).start])
    widths = [
        _valid_count(validity[0, layout.hidden_weight_cols(j)]) for j in range(k)
    ]
    output_dim = _valid_count(validity[0, layout.output_weight_cols])

    layers = []
    fan_in = input_dim
    for j in range(k):
        w = widths[j]
        wcols = layout.hidden_weight_cols(j)
        weights = values[:fan_in, wcols.start : wcols.start + w]
        biases = values[:w, layout.hidden_bias_col(j)]
        logits = values[:w, layout.hidden_act_cols(j)]
        mask = values[:w, layout.mask_col(j)]
        if hard:
            mask = (mask >= neuron_threshold).to(dtype)
            logits = torch.nn.functional.one_hot(
                logits.argmax(dim=1), NUM_ACTIVATIONS
            ).to(dtype)
        layers.append(
            HiddenLayer(weights=weights, biases=biases, act_logits=logits, neuron_mask=mask)
        )
        fan_in = w

    ocols = layout.output_weight_cols
    output_weights = values[:fan_in, ocols.start : ocols.start + output_dim]
    output_biases = values[:output_dim, layout.output_bias_col]
    return Mlp(
        input_dim=input_dim,
        output_dim=output_dim,
        layers=tuple(layers),
        output_weights=output_weights,
        output_biases=output_biases,
    )


def sample_random_mlp(
    layout: RepLayout,
    rng: int | np.random.Generator,
    depth_range: tuple[int, int] | None = None,
    width_range: tuple[int, int] | None = None,
    input_dim: int | None = None,
    output_dim: int | None = None,
    dtype: torch.dtype = DEFAULT_DTYPE,
) -> Mlp:
    """Network with uniform weights in [-5, 5] and biases in [-1, 1].

    Each neuron is assigned one activation (exact one-hot logits) and an
    active mask. Deterministic for a given seed.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    lo_d, hi_d = depth_range or (1, layout.max_hidden_layers)
    lo_w, hi_w = width_range or (1, layout.max_neurons)
    if hi_d > layout.max_hidden_layers or hi_w > layout.max_neurons:
        raise LayoutError("requested ranges exceed layout")
    i = layout.input_dim_max if input_dim is None else input_dim
    o = layout.output_dim_max if output_dim is None else output_dim
    if i > layout.input_dim_max or o > layout.output_dim_max:
        raise LayoutError("requested dims exceed layout")

    depth = int(rng.integers(lo_d, hi_d + 1))
    widths = [int(rng.integers(lo_w, hi_w + 1)) for _ in range(depth)]

    def uniform(lo: float, hi: float, shape: tuple[int, ...]) -> torch.Tensor:
        return torch.from_numpy(rng.uniform(lo, hi, size=shape)).to(dtype)

    layers = []
    fan_in = i
    for w in widths:
        kinds = rng.integers(0, NUM_ACTIVATIONS, size=w)
        logits = torch.from_numpy(np.eye(NUM_ACTIVATIONS)[kinds]).to(dtype)
        layers.append(
            HiddenLayer(
                weights=uniform(-5.0, 5.0, (fan_in, w)),
                biases=uniform(-1.0, 1.0, (w,)),
                act_logits=logits,
                neuron_mask=torch.ones(w, dtype=dtype),
            )
        )
        fan_in = w
    return Mlp(
        input_dim=i,
        output_dim=o,
        layers=tuple(layers),
        output_weights=uniform(-5.0, 5.0, (fan_in, o)),
        output_biases=uniform(-1.0, 1.0, (o,)),
    )


_MAGIC = b"SWATREP1"
_VERSION = 1


def save_matrep(rep: MatRep, layout: RepLayout, path) -> None:
    """Binary container: header, row-major float64 values, packed-bit validity."""
    n, c = rep.values.shape
    header = struct.pack(
        "<8sIIIII",
        _MAGIC,
        _VERSION,
        n,
        c,
        layout.max_hidden_layers,
        layout.num_activations,
    )
    values = rep.values.detach().cpu().numpy().astype("<f8")
    bits = np.packbits(
        rep.validity.detach().cpu().numpy().astype(np.uint8).reshape(-1)
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(values.tobytes())
        fh.write(bits.tobytes())


def load_matrep(path, dtype: torch.dtype = DEFAULT_DTYPE) -> MatRep:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, n, c, _l, _a = struct.unpack_from("<8sIIIII", raw, 0)
    if magic != _MAGIC:
        raise ValueError("not a representation file")
    if version != _VERSION:
        raise ValueError(f"unsupported version {version}")
    offset = struct.calcsize("<8sIIIII")
    count = n * c
    values = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(n, c)
    offset += count * 8
    nbytes = (count + 7) // 8
    bits = np.frombuffer(raw, dtype=np.uint8, count=nbytes, offset=offset)
    validity = np.unpackbits(bits, count=count).reshape(n, c)
    return MatRep(
        values=torch.from_numpy(values.copy()).to(dtype),
        validity=torch.from_numpy(validity.copy()).to(dtype),
    )
