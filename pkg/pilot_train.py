"""Pilot: time the desk config and watch the held-out loss trend."""
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
spec = TrainSpec(epochs=1, batches_per_epoch=100, batch_size=32, inputs_per_mlp=64, lr=1e-3, seed=0)

held = sample_heldout(layout, n_mlps=48, inputs_per_mlp=256, seed=777, spec=spec)
untrained = build_model(config, seed=0)
base = mean_min_loss(untrained, held)
print(f"untrained held-out mean min loss: {base:.3f}", flush=True)

t0 = time.time()
model, metrics = train_autoencoder(config, spec)
dt = time.time() - t0
print(f"100 batches in {dt:.1f}s -> {dt/100*1000:.0f} ms/batch; 2000 batches ~ {dt*20/60:.1f} min", flush=True)
print("epoch metrics:", metrics[-1], flush=True)
after = mean_min_loss(model, held)
print(f"after 100 batches: {after:.3f} (ratio {after/base:.3f})", flush=True)

# continue to 500 total
spec2 = TrainSpec(epochs=1, batches_per_epoch=500, batch_size=32, inputs_per_mlp=64, lr=1e-3, seed=0)
t0 = time.time()
model2, metrics2 = train_autoencoder(config, spec2)
print(f"500 batches in {time.time()-t0:.1f}s", flush=True)
after2 = mean_min_loss(model2, held)
print(f"after 500 batches: {after2:.3f} (ratio {after2/base:.3f})", flush=True)
