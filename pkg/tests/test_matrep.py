import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from swatnn.netcore import EvalConfig, eval_mlp
from swatnn.matrep import (
    LayoutError,
    MatRep,
    RepLayout,
    full_validity,
    load_matrep,
    pack,
    sample_random_mlp,
    save_matrep,
    unpack,
)


def assert_mlp_equal(a, b):
    assert a.input_dim == b.input_dim
    assert a.output_dim == b.output_dim
    assert a.depth == b.depth
    for la, lb in zip(a.layers, b.layers):
        assert torch.equal(la.weights, lb.weights)
        assert torch.equal(la.biases, lb.biases)
        assert torch.equal(la.act_logits, lb.act_logits)
        assert torch.equal(la.neuron_mask, lb.neuron_mask)
    assert torch.equal(a.output_weights, b.output_weights)
    assert torch.equal(a.output_biases, b.output_biases)


class TestLayout:
    def test_column_count_formula(self):
        for n, l in [(3, 1), (5, 2), (7, 4)]:
            layout = RepLayout(max_neurons=n, max_hidden_layers=l, input_dim_max=2, output_dim_max=1)
            expected = (l + 1) * (n + 1) + l * 3 + l
            assert layout.columns == expected

    def test_blocks_tile_all_columns(self):
        layout = RepLayout(max_neurons=5, max_hidden_layers=2, input_dim_max=2)
        cols = []
        for j in range(2):
            w = layout.hidden_weight_cols(j)
            cols += list(range(w.start, w.stop)) + [layout.hidden_bias_col(j)]
            a = layout.hidden_act_cols(j)
            cols += list(range(a.start, a.stop))
        o = layout.output_weight_cols
        cols += list(range(o.start, o.stop)) + [layout.output_bias_col]
        cols += [layout.mask_col(j) for j in range(2)]
        assert sorted(cols) == list(range(layout.columns))

    def test_dict_round_trip(self):
        layout = RepLayout(max_neurons=7, max_hidden_layers=4, input_dim_max=2)
        assert RepLayout.from_dict(layout.to_dict()) == layout


class TestPack:
    def test_padding_rows_invalid(self):
        layout = RepLayout(max_neurons=3, max_hidden_layers=1, input_dim_max=2)
        mlp = sample_random_mlp(layout, rng=0, depth_range=(1, 1), width_range=(3, 3))
        rep = pack(mlp, layout)
        wcols = layout.hidden_weight_cols(0)
        assert torch.all(rep.validity[2:, wcols] == 0)
        assert torch.all(rep.validity[:2, wcols] == 1)

    def test_inactive_neuron_shows_in_indicator_block(self, desk_layout):
        mlp = sample_random_mlp(desk_layout, rng=1, depth_range=(2, 2), width_range=(4, 4))
        mlp.layers[1].neuron_mask[2] = 0.0
        rep = pack(mlp, desk_layout)
        assert rep.values[2, desk_layout.mask_col(1)] == 0.0
        assert rep.values[0, desk_layout.mask_col(1)] == 1.0

    def test_validity_implies_zero(self, desk_layout):
        for seed in range(20):
            mlp = sample_random_mlp(desk_layout, rng=seed)
            rep = pack(mlp, desk_layout)
            assert torch.all(rep.values[rep.validity == 0] == 0)

    def test_indicator_block_always_valid(self, desk_layout):
        mlp = sample_random_mlp(desk_layout, rng=4, depth_range=(1, 1))
        rep = pack(mlp, desk_layout)
        for j in range(desk_layout.max_hidden_layers):
            assert torch.all(rep.validity[:, desk_layout.mask_col(j)] == 1)

    def test_oversize_network_rejected(self):
        big = RepLayout(max_neurons=6, max_hidden_layers=3, input_dim_max=2)
        small = RepLayout(max_neurons=4, max_hidden_layers=2, input_dim_max=2)
        mlp = sample_random_mlp(big, rng=2, depth_range=(3, 3), width_range=(6, 6))
        with pytest.raises(LayoutError):
            pack(mlp, small)

    def test_boundary_validity_tracks_input_dim(self):
        layout = RepLayout(max_neurons=5, max_hidden_layers=2, input_dim_max=3)
        m2 = sample_random_mlp(layout, rng=7, input_dim=2)
        m3 = sample_random_mlp(layout, rng=7, input_dim=3)
        r2, r3 = pack(m2, layout), pack(m3, layout)
        wcols = layout.hidden_weight_cols(0)
        diff = (r2.validity != r3.validity).nonzero()
        assert len(diff) > 0
        assert all(wcols.start <= int(c) < wcols.stop for _, c in diff)


class TestRoundTrip:
    def test_pack_unpack_identity(self, desk_layout):
        for seed in range(100):
            mlp = sample_random_mlp(desk_layout, rng=seed)
            rep = pack(mlp, desk_layout)
            back = unpack(rep, desk_layout, hidden_layers=mlp.depth, hard=True)
            assert_mlp_equal(mlp, back)

    def test_functional_equivalence_bitwise(self, desk_layout):
        rng = np.random.default_rng(123)
        for seed in range(10):
            mlp = sample_random_mlp(desk_layout, rng=seed)
            back = unpack(pack(mlp, desk_layout), desk_layout, mlp.depth, hard=True)
            xs = torch.from_numpy(rng.uniform(-1, 1, (32, 2)))
            for cfg in (EvalConfig.soft(), EvalConfig.hard()):
                assert torch.equal(eval_mlp(mlp, xs, cfg), eval_mlp(back, xs, cfg))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_round_trip_property(self, seed):
        layout = RepLayout(max_neurons=5, max_hidden_layers=2, input_dim_max=2)
        mlp = sample_random_mlp(layout, rng=seed)
        back = unpack(pack(mlp, layout), layout, mlp.depth, hard=True)
        assert_mlp_equal(mlp, back)


class TestUnpack:
    def test_soft_masks_kept(self, desk_layout):
        mlp = sample_random_mlp(desk_layout, rng=3, depth_range=(1, 1), width_range=(4, 4))
        rep = pack(mlp, desk_layout)
        rep.values[:4, desk_layout.mask_col(0)] = 0.7
        soft = unpack(rep, desk_layout, hidden_layers=1, hard=False)
        assert torch.allclose(soft.layers[0].neuron_mask, torch.full((4,), 0.7, dtype=torch.float64))
        hard = unpack(rep, desk_layout, hidden_layers=1, hard=True)
        assert torch.all(hard.layers[0].neuron_mask == 1.0)

    def test_hard_one_hot_by_argmax(self, desk_layout):
        mlp = sample_random_mlp(desk_layout, rng=5, depth_range=(1, 1), width_range=(1, 1))
        rep = pack(mlp, desk_layout)
        rep.values[0, desk_layout.hidden_act_cols(0)] = torch.tensor(
            [0.2, 0.5, 0.3], dtype=torch.float64
        )
        hard = unpack(rep, desk_layout, hidden_layers=1, hard=True)
        assert torch.equal(
            hard.layers[0].act_logits, torch.tensor([[0.0, 1.0, 0.0]], dtype=torch.float64)
        )

    def test_full_validity_unpacks_to_max_widths(self, desk_layout):
        n = desk_layout.max_neurons
        values = torch.randn(n, desk_layout.columns, dtype=torch.float64)
        rep = MatRep(values=values, validity=full_validity(desk_layout, 2, 2, 1))
        mlp = unpack(rep, desk_layout, hidden_layers=2, hard=False)
        assert mlp.widths == (n, n)
        assert mlp.input_dim == 2
        assert mlp.output_dim == 1

    def test_bad_depth_rejected(self, desk_layout):
        mlp = sample_random_mlp(desk_layout, rng=0)
        rep = pack(mlp, desk_layout)
        with pytest.raises(ValueError):
            unpack(rep, desk_layout, hidden_layers=0)


class TestSampling:
    def test_deterministic(self, desk_layout):
        a = sample_random_mlp(desk_layout, rng=42)
        b = sample_random_mlp(desk_layout, rng=42)
        assert_mlp_equal(a, b)

    def test_weight_and_bias_ranges(self, desk_layout):
        weights, biases = [], []
        for seed in range(900):
            mlp = sample_random_mlp(desk_layout, rng=seed)
            for l in mlp.layers:
                weights.append(l.weights.reshape(-1))
                biases.append(l.biases)
            weights.append(mlp.output_weights.reshape(-1))
            biases.append(mlp.output_biases)
        w = torch.cat(weights)
        b = torch.cat(biases)
        assert w.numel() > 10_000
        assert float(w.min()) >= -5.0 and float(w.max()) <= 5.0
        assert float(b.min()) >= -1.0 and float(b.max()) <= 1.0

    def test_fixed_width_range(self, desk_layout):
        for seed in range(10):
            mlp = sample_random_mlp(desk_layout, rng=seed, width_range=(3, 3))
            assert all(w == 3 for w in mlp.widths)

    def test_one_hot_logits(self, desk_layout):
        mlp = sample_random_mlp(desk_layout, rng=8)
        for l in mlp.layers:
            assert torch.all(l.act_logits.sum(dim=1) == 1.0)
            assert torch.all((l.act_logits == 0) | (l.act_logits == 1))
            assert torch.all(l.neuron_mask == 1.0)


class TestFileFormat:
    def test_binary_round_trip(self, desk_layout, tmp_path):
        mlp = sample_random_mlp(desk_layout, rng=9)
        rep = pack(mlp, desk_layout)
        path = tmp_path / "net.rep"
        save_matrep(rep, desk_layout, path)
        loaded = load_matrep(path)
        assert torch.equal(loaded.values, rep.values)
        assert torch.equal(loaded.validity, rep.validity)

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.rep"
        path.write_bytes(b"NOTAREP" + b"\x00" * 64)
        with pytest.raises(ValueError):
            load_matrep(path)
