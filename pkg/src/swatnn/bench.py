"""Synthetic 2-D regression task suite: generation, normalization, persistence.

Inputs are mapped affinely onto [-1, 1]^2 from each task's domain box and
outputs are scaled by their largest magnitude (plus a small margin) so they
land strictly inside (-1, 1). Train and test samples come from independent
substreams of the task seed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

OUTPUT_MARGIN = 1e-3

Domain = tuple[tuple[float, float], tuple[float, float]]


def _sphere(x):
    return x[:, 0] ** 2 + x[:, 1] ** 2


def _rosenbrock(x):
    return 100.0 * (x[:, 1] - x[:, 0] ** 2) ** 2 + (1.0 - x[:, 0]) ** 2


def _rastrigin(x):
    return 20.0 + np.sum(x**2 - 10.0 * np.cos(2.0 * np.pi * x), axis=1)


def _ackley(x):
    a, b, c = 20.0, 0.2, 2.0 * np.pi
    norm = np.sqrt(np.mean(x**2, axis=1))
    return (
        -a * np.exp(-b * norm)
        - np.exp(np.mean(np.cos(c * x), axis=1))
        + a
        + np.e
    )


def _griewank(x):
    prod = np.cos(x[:, 0]) * np.cos(x[:, 1] / np.sqrt(2.0))
    return np.sum(x**2, axis=1) / 4000.0 - prod + 1.0


def _schwefel(x):
    return 418.9829 * 2 - np.sum(x * np.sin(np.sqrt(np.abs(x))), axis=1)


def _himmelblau(x):
    return (x[:, 0] ** 2 + x[:, 1] - 11.0) ** 2 + (x[:, 0] + x[:, 1] ** 2 - 7.0) ** 2


def _levy(x):
    w = 1.0 + (x - 1.0) / 4.0
    term1 = np.sin(np.pi * w[:, 0]) ** 2
    term2 = (w[:, 0] - 1.0) ** 2 * (1.0 + 10.0 * np.sin(np.pi * w[:, 0] + 1.0) ** 2)
    term3 = (w[:, 1] - 1.0) ** 2 * (1.0 + np.sin(2.0 * np.pi * w[:, 1]) ** 2)
    return term1 + term2 + term3


def _booth(x):
    return (x[:, 0] + 2.0 * x[:, 1] - 7.0) ** 2 + (2.0 * x[:, 0] + x[:, 1] - 5.0) ** 2


def _three_hump_camel(x):
    a, b = x[:, 0], x[:, 1]
    return 2.0 * a**2 - 1.05 * a**4 + a**6 / 6.0 + a * b + b**2


def _easom(x):
    a, b = x[:, 0], x[:, 1]
    return -np.cos(a) * np.cos(b) * np.exp(-((a - np.pi) ** 2 + (b - np.pi) ** 2))


def _styblinski_tang(x):
    return 0.5 * np.sum(x**4 - 16.0 * x**2 + 5.0 * x, axis=1)


def _constant(x):
    return np.full(x.shape[0], 5.0)


def _linear(x):
    return 1.5 * x[:, 0] - 0.8 * x[:, 1] + 0.2


_FUNCTIONS: dict[str, tuple[Callable[[np.ndarray], np.ndarray], Domain]] = {
    "sphere": (_sphere, ((-5.0, 5.0), (-5.0, 5.0))),
    "rosenbrock": (_rosenbrock, ((-2.0, 2.0), (-2.0, 2.0))),
    "rastrigin": (_rastrigin, ((-5.12, 5.12), (-5.12, 5.12))),
    "ackley": (_ackley, ((-5.0, 5.0), (-5.0, 5.0))),
    "griewank": (_griewank, ((-10.0, 10.0), (-10.0, 10.0))),
    "schwefel": (_schwefel, ((-500.0, 500.0), (-500.0, 500.0))),
    "himmelblau": (_himmelblau, ((-5.0, 5.0), (-5.0, 5.0))),
    "levy": (_levy, ((-10.0, 10.0), (-10.0, 10.0))),
    "booth": (_booth, ((-10.0, 10.0), (-10.0, 10.0))),
    "three_hump_camel": (_three_hump_camel, ((-5.0, 5.0), (-5.0, 5.0))),
    "easom": (_easom, ((-100.0, 100.0), (-100.0, 100.0))),
    "styblinski_tang": (_styblinski_tang, ((-5.0, 5.0), (-5.0, 5.0))),
    "constant": (_constant, ((-1.0, 1.0), (-1.0, 1.0))),
    "linear": (_linear, ((-1.0, 1.0), (-1.0, 1.0))),
}


def register_function(
    name: str, fn: Callable[[np.ndarray], np.ndarray], domain: Domain
) -> None:
    """Plug-in point for external task functions (e.g. a full benchmark set)."""
    if name in _FUNCTIONS:
        raise ValueError(f"function {name!r} already registered")
    _FUNCTIONS[name] = (fn, domain)


def function_names() -> list[str]:
    return list(_FUNCTIONS)


def raw_function(name: str) -> Callable[[np.ndarray], np.ndarray]:
    if name not in _FUNCTIONS:
        raise KeyError(f"unknown task function {name!r}")
    return _FUNCTIONS[name][0]


@dataclass(frozen=True)
class TaskSpec:
    name: str
    function: str
    domain: Domain
    train_count: int = 3750
    test_count: int = 1250
    seed: int = 0

    def __post_init__(self) -> None:
        if self.train_count <= 0 or self.test_count <= 0:
            raise ValueError("sample counts must be positive")
        for lo, hi in self.domain:
            if not hi > lo:
                raise ValueError("domain box must be nondegenerate")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "function": self.function,
            "domain": [list(pair) for pair in self.domain],
            "train_count": self.train_count,
            "test_count": self.test_count,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TaskSpec":
        return cls(
            name=doc["name"],
            function=doc["function"],
            domain=tuple(tuple(float(v) for v in pair) for pair in doc["domain"]),
            train_count=int(doc["train_count"]),
            test_count=int(doc["test_count"]),
            seed=int(doc["seed"]),
        )


@dataclass(frozen=True)
class Normalization:
    input_lo: tuple[float, float]
    input_hi: tuple[float, float]
    output_scale: float

    def normalize_inputs(self, x: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.input_lo)
        hi = np.asarray(self.input_hi)
        return 2.0 * (x - lo) / (hi - lo) - 1.0

    def denormalize_inputs(self, x: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.input_lo)
        hi = np.asarray(self.input_hi)
        return (x + 1.0) * (hi - lo) / 2.0 + lo

    def normalize_outputs(self, y: np.ndarray) -> np.ndarray:
        return y / self.output_scale

    def denormalize_outputs(self, y: np.ndarray) -> np.ndarray:
        return y * self.output_scale

    def to_dict(self) -> dict:
        return {
            "input_lo": list(self.input_lo),
            "input_hi": list(self.input_hi),
            "output_scale": self.output_scale,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Normalization":
        return cls(
            input_lo=tuple(float(v) for v in doc["input_lo"]),
            input_hi=tuple(float(v) for v in doc["input_hi"]),
            output_scale=float(doc["output_scale"]),
        )


@dataclass(frozen=True)
class TaskDataset:
    spec: TaskSpec
    normalization: Normalization
    x_train: torch.Tensor
    y_train: torch.Tensor
    x_test: torch.Tensor
    y_test: torch.Tensor


def generate(spec: TaskSpec) -> TaskDataset:
    """Sample, evaluate and normalize one task; bit-identical per spec."""
    fn = raw_function(spec.function)
    root = np.random.SeedSequence(entropy=spec.seed)
    train_seq, test_seq = root.spawn(2)
    lo = np.array([pair[0] for pair in spec.domain])
    hi = np.array([pair[1] for pair in spec.domain])

    def draw(seq, count):
        rng = np.random.Generator(np.random.Philox(seq))
        x = rng.uniform(lo, hi, size=(count, 2))
        return x, fn(x)

    x_train_raw, y_train_raw = draw(train_seq, spec.train_count)
    x_test_raw, y_test_raw = draw(test_seq, spec.test_count)
    scale = float(np.max(np.abs(np.concatenate([y_train_raw, y_test_raw])))) + OUTPUT_MARGIN
    norm = Normalization(
        input_lo=tuple(lo.tolist()), input_hi=tuple(hi.tolist()), output_scale=scale
    )
    return TaskDataset(
        spec=spec,
        normalization=norm,
        x_train=torch.from_numpy(norm.normalize_inputs(x_train_raw)),
        y_train=torch.from_numpy(norm.normalize_outputs(y_train_raw)[:, None]),
        x_test=torch.from_numpy(norm.normalize_inputs(x_test_raw)),
        y_test=torch.from_numpy(norm.normalize_outputs(y_test_raw)[:, None]),
    )


def builtin_suite(train_count: int = 3750, test_count: int = 1250) -> list[TaskSpec]:
    """Deterministic ordered suite over the registered standard functions."""
    specs = []
    for idx, (name, (_fn, domain)) in enumerate(sorted(_FUNCTIONS.items())):
        specs.append(
            TaskSpec(
                name=name,
                function=name,
                domain=domain,
                train_count=train_count,
                test_count=test_count,
                seed=1000 + idx,
            )
        )
    return specs


def task_by_name(name: str, **overrides) -> TaskSpec:
    for spec in builtin_suite():
        if spec.name == name:
            if overrides:
                from dataclasses import replace

                spec = replace(spec, **overrides)
            return spec
    raise KeyError(f"unknown task {name!r}")


_DS_MAGIC = b"SWATDS01"


def save_dataset(dataset: TaskDataset, path: str | Path) -> None:
    """Columnar binary plus a JSON sidecar holding spec and normalization."""
    path = Path(path)
    arrays = [
        dataset.x_train.numpy().astype("<f8"),
        dataset.y_train.numpy().astype("<f8"),
        dataset.x_test.numpy().astype("<f8"),
        dataset.y_test.numpy().astype("<f8"),
    ]
    header = struct.pack(
        "<8sIIIII",
        _DS_MAGIC,
        1,
        dataset.spec.train_count,
        dataset.spec.test_count,
        2,
        1,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in arrays:
            fh.write(arr.tobytes())
    sidecar = {
        "spec": dataset.spec.to_dict(),
        "normalization": dataset.normalization.to_dict(),
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True, indent=2))


def load_dataset(path: str | Path) -> TaskDataset:
    path = Path(path)
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    spec = TaskSpec.from_dict(sidecar["spec"])
    norm = Normalization.from_dict(sidecar["normalization"])
    raw = path.read_bytes()
    magic, version, n_train, n_test, in_dim, out_dim = struct.unpack_from("<8sIIIII", raw, 0)
    if magic != _DS_MAGIC:
        raise ValueError("not a dataset file")
    if version != 1:
        raise ValueError(f"unsupported dataset version {version}")
    offset = struct.calcsize("<8sIIIII")

    def take(rows, cols):
        nonlocal offset
        count = rows * cols
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(rows, cols)
        offset += count * 8
        return torch.from_numpy(arr.copy())

    return TaskDataset(
        spec=spec,
        normalization=norm,
        x_train=take(n_train, in_dim),
        y_train=take(n_train, out_dim),
        x_test=take(n_test, in_dim),
        y_test=take(n_test, out_dim),
    )
