import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).resolve().parent))

from swatnn.matrep import RepLayout


@pytest.fixture(scope="session", autouse=True)
def _fixed_threads():
    # determinism contracts hold at a fixed thread count
    torch.set_num_threads(2)


@pytest.fixture
def desk_layout():
    return RepLayout(max_neurons=5, max_hidden_layers=2, input_dim_max=2, output_dim_max=1)


@pytest.fixture
def tiny_layout():
    return RepLayout(max_neurons=3, max_hidden_layers=2, input_dim_max=2, output_dim_max=1)
