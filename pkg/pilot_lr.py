"""Pilot: lr sweep for the desk autoencoder config."""
import time

import torch

from swatnn.autoenc import (
    AutoencoderConfig, TrainSpec, build_model, mean_min_loss, sample_heldout,
    train_autoencoder,
)
from swatnn.matrep import RepLayout

torch.set_num_threads(2)

layout = RepLayout(max_neurons=5, max_hidden_layers=2, input_dim_max=2, output_dim_max=1)
config = AutoencoderConfig(layout=layout, d_model=128, n_heads=4, n_layers=2, precision="float32")

spec0 = TrainSpec()
held = sample_heldout(layout, n_mlps=48, inputs_per_mlp=256, seed=777, spec=spec0)
base = mean_min_loss(build_model(config, seed=0), held)
print(f"untrained: {base:.1f}", flush=True)

for lr in (3e-3, 1e-2, 3e-2):
    spec = TrainSpec(epochs=1, batches_per_epoch=400, batch_size=32, inputs_per_mlp=64,
                     lr=lr, seed=0)
    t0 = time.time()
    try:
        model, metrics = train_autoencoder(config, spec)
        after = mean_min_loss(model, held)
        print(f"lr={lr:g}: 400 batches in {time.time()-t0:.0f}s, "
              f"held-out {after:.1f} (ratio {after/base:.3f}), "
              f"train mean {metrics[-1]['mean_loss']:.1f}", flush=True)
    except Exception as exc:
        print(f"lr={lr:g}: failed: {exc}", flush=True)
