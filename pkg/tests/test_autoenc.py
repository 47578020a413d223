import math

import numpy as np
import pytest
import torch

from fdcheck import assert_grad_close, fd_gradient, max_rel_error

from swatnn.autoenc import (
    AutoencoderConfig,
    EmaMonitor,
    TrainSpec,
    TrainingDivergedError,
    batch_decoder_losses,
    batch_min_losses,
    build_model,
    decode,
    decode_values,
    encode,
    functional_loss,
    load_checkpoint,
    mean_min_loss,
    min_loss,
    sample_heldout,
    save_checkpoint,
    tokenize,
    train_autoencoder,
)
from swatnn.matrep import MatRep, RepLayout, pack, sample_random_mlp, unpack
from swatnn.netcore import EvalConfig, eval_mlp


@pytest.fixture(scope="module")
def tiny_model():
    layout = RepLayout(max_neurons=3, max_hidden_layers=2, input_dim_max=2, output_dim_max=1)
    config = AutoencoderConfig(layout=layout, d_model=16, n_heads=2, n_layers=1)
    return build_model(config, seed=0)


def random_rep(layout, seed):
    return pack(sample_random_mlp(layout, rng=seed), layout)


class TestTokenize:
    def test_row_locality(self, tiny_model):
        layout = tiny_model.layout
        rep = random_rep(layout, 0)
        other_values = rep.values.clone()
        other_values[2] += 1.0
        other = MatRep(values=other_values, validity=rep.validity)
        ta, tb = tokenize(tiny_model, rep), tokenize(tiny_model, other)
        assert torch.equal(ta[0], tb[0])
        assert torch.equal(ta[1], tb[1])
        assert not torch.equal(ta[2], tb[2])

    def test_zero_rep_gives_bias_rows(self, tiny_model):
        layout = tiny_model.layout
        n = layout.max_neurons
        zero = MatRep(
            values=torch.zeros(n, layout.columns, dtype=torch.float64),
            validity=torch.zeros(n, layout.columns, dtype=torch.float64),
        )
        tokens = tokenize(tiny_model, zero)
        assert tokens.shape == (n, 16)
        for row in tokens:
            assert torch.equal(row, tiny_model.enc_in.bias)

    def test_token_count_at_full_scale_layout(self):
        layout = RepLayout(max_neurons=7, max_hidden_layers=4, input_dim_max=2, output_dim_max=1)
        config = AutoencoderConfig(layout=layout, d_model=768, n_heads=12, n_layers=2)
        assert config.token_count == 7
        assert config.num_decoders == 4


class TestEncode:
    def test_deterministic(self, tiny_model):
        rep = random_rep(tiny_model.layout, 1)
        assert torch.equal(encode(tiny_model, rep), encode(tiny_model, rep))

    def test_shape(self, tiny_model):
        rep = random_rep(tiny_model.layout, 2)
        z = encode(tiny_model, rep)
        assert z.shape == (3, 16)
        assert torch.isfinite(z).all()

    def test_full_scale_embedding_shape(self):
        layout = RepLayout(max_neurons=7, max_hidden_layers=4, input_dim_max=2, output_dim_max=1)
        config = AutoencoderConfig(
            layout=layout, d_model=768, n_heads=12, n_layers=1, precision="float32"
        )
        model = build_model(config, seed=0)
        z = encode(model, random_rep(layout, 0))
        assert z.shape == (7, 768)

    def test_gradient_wrt_rep_values(self, tiny_model):
        layout = tiny_model.layout
        rep = random_rep(layout, 3)
        validity = rep.validity

        for row, col in [(0, 0), (1, 5)]:
            def entry(values, r=row, c=col):
                return encode(tiny_model, MatRep(values=values, validity=validity))[r, c]

            assert_grad_close(entry, rep.values.clone(), tol=1e-4, step=1e-5)


class TestDecode:
    def test_deterministic_and_shaped(self, tiny_model):
        layout = tiny_model.layout
        z = torch.randn(3, 16, dtype=torch.float64, generator=torch.Generator().manual_seed(4))
        for k in (1, 2):
            rep_a = decode(tiny_model, k, z)
            rep_b = decode(tiny_model, k, z)
            assert rep_a.values.shape == (layout.max_neurons, layout.columns)
            assert torch.equal(rep_a.values, rep_b.values)

    def test_indicator_columns_in_unit_interval(self, tiny_model):
        layout = tiny_model.layout
        z = torch.randn(3, 16, dtype=torch.float64, generator=torch.Generator().manual_seed(5))
        rep = decode(tiny_model, 2, z)
        for j in range(layout.max_hidden_layers):
            col = rep.values[:, layout.mask_col(j)]
            assert torch.all((col > 0) & (col < 1))

    def test_validity_is_structural(self, tiny_model):
        z = torch.zeros(3, 16, dtype=torch.float64)
        rep = decode(tiny_model, 1, z, input_dim=2, output_dim=1)
        mlp = unpack(rep, tiny_model.layout, 1)
        assert mlp.input_dim == 2
        assert mlp.output_dim == 1
        assert mlp.widths == (3,)

    def test_decoder_index_bounds(self, tiny_model):
        z = torch.zeros(3, 16, dtype=torch.float64)
        with pytest.raises(ValueError):
            decode(tiny_model, 0, z)
        with pytest.raises(ValueError):
            decode(tiny_model, 3, z)

    def test_gradient_wrt_latent(self, tiny_model):
        z0 = torch.randn(3, 16, dtype=torch.float64, generator=torch.Generator().manual_seed(6))

        def probe(z):
            values = decode(tiny_model, 2, z).values
            return (values * torch.linspace(0.1, 1.0, values.numel(), dtype=torch.float64
                    ).reshape(values.shape)).sum()

        assert_grad_close(probe, z0, tol=1e-4, step=1e-5)


class TestFunctionalLoss:
    def test_identical_networks_zero(self, tiny_model):
        mlp = sample_random_mlp(tiny_model.layout, rng=7)
        xs = torch.rand(20, 2, dtype=torch.float64)
        loss = functional_loss(mlp, mlp, xs, decoded_cfg=EvalConfig.hard())
        assert float(loss) == 0.0

    def test_constant_offset_networks(self):
        from swatnn.netcore import HiddenLayer, Mlp

        def constant_net(c):
            return Mlp(
                input_dim=2,
                output_dim=1,
                layers=(),
                output_weights=torch.zeros(2, 1, dtype=torch.float64),
                output_biases=torch.tensor([c], dtype=torch.float64),
            )

        xs = torch.rand(17, 2, dtype=torch.float64)
        loss = functional_loss(constant_net(0.2), constant_net(0.9), xs,
                               decoded_cfg=EvalConfig.hard())
        assert float(loss) == pytest.approx(17 * 0.7**2, rel=1e-12)

    def test_matches_row_sum_oracle(self, tiny_model):
        layout = tiny_model.layout
        a = sample_random_mlp(layout, rng=8)
        b = sample_random_mlp(layout, rng=9, input_dim=a.input_dim, output_dim=a.output_dim)
        xs = torch.rand(12, a.input_dim, dtype=torch.float64)
        loss = float(functional_loss(a, b, xs))
        ya = eval_mlp(a, xs, EvalConfig.hard())
        yb = eval_mlp(b, xs, EvalConfig.soft())
        expected = sum(
            float((ya[i] - yb[i]) @ (ya[i] - yb[i])) for i in range(12)
        )
        assert loss == pytest.approx(expected, rel=1e-12)


class TestMinLoss:
    def test_min_contract(self, tiny_model):
        layout = tiny_model.layout
        for seed in range(10):
            mlp = sample_random_mlp(layout, rng=seed)
            xs = torch.from_numpy(np.random.default_rng(seed).uniform(-1, 1, (16, 2)))
            best, idx = min_loss(mlp, tiny_model, xs)
            rep = pack(mlp, layout)
            z = encode(tiny_model, rep)
            branch = []
            for k in (1, 2):
                decoded = unpack(decode(tiny_model, k, z, mlp.input_dim, mlp.output_dim),
                                 layout, k)
                branch.append(float(functional_loss(mlp, decoded, xs)))
            assert float(best) <= branch[0] and float(best) <= branch[1]
            assert float(best) == min(branch)
            assert idx == branch.index(min(branch)) + 1

    def test_batched_path_matches_public_ops(self, tiny_model):
        layout = tiny_model.layout
        nets = [
            sample_random_mlp(layout, rng=100 + i, input_dim=2, output_dim=1)
            for i in range(6)
        ]
        xs = torch.from_numpy(np.random.default_rng(0).uniform(-1, 1, (6, 10, 2)))
        stacked = batch_decoder_losses(tiny_model, nets, xs)
        for i, net in enumerate(nets):
            best, idx = min_loss(net, tiny_model, xs[i])
            assert float(stacked[:, i].min()) == pytest.approx(float(best), rel=1e-10)
            per_net, winners = batch_min_losses(tiny_model, nets, xs)
            assert float(per_net[i]) == pytest.approx(float(best), rel=1e-10)
            assert int(winners[i]) + 1 == idx


class TestTraining:
    def test_short_run_metrics_and_determinism(self, tmp_path):
        layout = RepLayout(max_neurons=3, max_hidden_layers=2, input_dim_max=2)
        config = AutoencoderConfig(layout=layout, d_model=16, n_heads=2, n_layers=1)
        spec = TrainSpec(
            epochs=2, batches_per_epoch=4, batch_size=4, inputs_per_mlp=8, lr=1e-3, seed=3
        )
        model_a, metrics_a = train_autoencoder(config, spec, out_dir=tmp_path / "a")
        model_b, metrics_b = train_autoencoder(config, spec, out_dir=None)
        assert len(metrics_a) == 2
        assert metrics_a[0]["mean_loss"] == metrics_b[0]["mean_loss"]
        assert metrics_a[-1]["mean_loss"] == metrics_b[-1]["mean_loss"]
        assert (tmp_path / "a" / "final.ckpt").exists()
        rates = metrics_a[0]["per_decoder_win_rate"]
        assert len(rates) == 2 and sum(rates) == pytest.approx(1.0)
        pa = dict(model_a.named_parameters())
        pb = dict(model_b.named_parameters())
        for name in pa:
            assert torch.equal(pa[name], pb[name])

    def test_loss_improves_on_average(self):
        layout = RepLayout(max_neurons=3, max_hidden_layers=2, input_dim_max=2)
        config = AutoencoderConfig(
            layout=layout, d_model=32, n_heads=2, n_layers=1, precision="float32"
        )
        spec = TrainSpec(
            epochs=1, batches_per_epoch=60, batch_size=8, inputs_per_mlp=16,
            lr=3e-3, seed=1,
        )
        model, metrics = train_autoencoder(config, spec)
        held = sample_heldout(layout, n_mlps=16, inputs_per_mlp=32, seed=99, spec=spec)
        untrained = build_model(config, seed=spec.seed)
        assert mean_min_loss(model, held) < mean_min_loss(untrained, held)

    def test_divergence_error_saves_diagnostic(self, tmp_path):
        layout = RepLayout(max_neurons=3, max_hidden_layers=2, input_dim_max=2)
        config = AutoencoderConfig(
            layout=layout, d_model=16, n_heads=2, n_layers=1, precision="float32"
        )
        spec = TrainSpec(
            epochs=1, batches_per_epoch=50, batch_size=4, inputs_per_mlp=8,
            lr=1e12, seed=0,
        )
        with pytest.raises(TrainingDivergedError):
            train_autoencoder(config, spec, out_dir=tmp_path)
        assert (tmp_path / "diagnostic.ckpt").exists()


class TestEmaMonitor:
    def test_warns_after_runaway(self):
        monitor = EmaMonitor(window=10)
        warned = [monitor.update(1.0) for _ in range(20)]
        assert not any(warned)
        for _ in range(200):
            fired = monitor.update(50.0)
        assert fired

    def test_quiet_before_window(self):
        monitor = EmaMonitor(window=100)
        assert not any(monitor.update(v) for v in [1.0, 100.0, 1.0])


class TestCheckpoint:
    def test_round_trip_bit_identical(self, tiny_model, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(tiny_model, path)
        restored = load_checkpoint(path)
        assert restored.config == tiny_model.config
        z = torch.randn(3, 16, dtype=torch.float64, generator=torch.Generator().manual_seed(8))
        for k in (1, 2):
            a = decode(tiny_model, k, z).values
            b = decode(restored, k, z).values
            assert torch.equal(a, b)
        rep = random_rep(tiny_model.layout, 11)
        assert torch.equal(encode(tiny_model, rep), encode(restored, rep))

    def test_checksum_enforced(self, tiny_model, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(tiny_model, path)
        raw = bytearray(path.read_bytes())
        raw[-1] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(ValueError):
            load_checkpoint(path)

    def test_float32_checkpoint(self, tmp_path):
        layout = RepLayout(max_neurons=3, max_hidden_layers=2, input_dim_max=2)
        config = AutoencoderConfig(
            layout=layout, d_model=16, n_heads=2, n_layers=1, precision="float32"
        )
        model = build_model(config, seed=5)
        save_checkpoint(model, tmp_path / "m.ckpt")
        restored = load_checkpoint(tmp_path / "m.ckpt")
        z = torch.randn(3, 16, dtype=torch.float32)
        assert torch.equal(decode(model, 1, z).values, decode(restored, 1, z).values)


def test_config_validation():
    layout = RepLayout(max_neurons=3, max_hidden_layers=2, input_dim_max=2)
    with pytest.raises(ValueError):
        AutoencoderConfig(layout=layout, d_model=15, n_heads=2)
    with pytest.raises(ValueError):
        AutoencoderConfig(layout=layout, precision="bfloat16")
    with pytest.raises(ValueError):
        TrainSpec(min_mode="other")
