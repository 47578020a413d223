import numpy as np
import pytest
import torch

from swatnn.bench import (
    OUTPUT_MARGIN,
    Normalization,
    TaskSpec,
    builtin_suite,
    function_names,
    generate,
    load_dataset,
    raw_function,
    register_function,
    save_dataset,
    task_by_name,
)


def small_task(name, seed=0, train=128, test=64):
    return task_by_name(name, seed=seed, train_count=train, test_count=test)


class TestGenerate:
    def test_constant_outputs(self):
        ds = generate(small_task("constant"))
        values = ds.y_train.unique()
        assert len(values) == 1
        v = float(values[0])
        assert 0 < v < 1
        assert v == pytest.approx(5.0 / (5.0 + OUTPUT_MARGIN), abs=1e-12)

    def test_inputs_inside_unit_box(self):
        for name in ("sphere", "schwefel", "linear"):
            ds = generate(small_task(name))
            for block in (ds.x_train, ds.x_test):
                assert float(block.min()) >= -1.0
                assert float(block.max()) <= 1.0

    def test_outputs_strictly_inside_unit_interval(self):
        for name in ("sphere", "rosenbrock", "easom", "styblinski_tang"):
            ds = generate(small_task(name))
            for block in (ds.y_train, ds.y_test):
                assert float(block.abs().max()) < 1.0

    def test_corner_mapping_reaches_unit(self):
        ds = generate(small_task("sphere"))
        corners = np.array([[-5.0, -5.0], [5.0, 5.0], [-5.0, 5.0]])
        mapped = ds.normalization.normalize_inputs(corners)
        assert np.allclose(mapped, [[-1, -1], [1, 1], [-1, 1]], atol=1e-15)

    def test_sphere_corner_value(self):
        ds = generate(small_task("sphere", train=2000, test=500))
        corner_raw = 50.0
        normalized = corner_raw / ds.normalization.output_scale
        # scale is the sampled max magnitude plus the margin, close to 50
        assert normalized == pytest.approx(50.0 / (50.0 + OUTPUT_MARGIN), rel=2e-2)
        assert ds.normalization.output_scale <= 50.0 + OUTPUT_MARGIN

    def test_deterministic_bitwise(self):
        a = generate(small_task("rastrigin", seed=5))
        b = generate(small_task("rastrigin", seed=5))
        assert torch.equal(a.x_train, b.x_train)
        assert torch.equal(a.y_train, b.y_train)
        assert torch.equal(a.x_test, b.x_test)
        assert torch.equal(a.y_test, b.y_test)

    def test_train_test_draws_differ(self):
        ds = generate(small_task("sphere"))
        x_train = ds.x_train.numpy()
        x_test = ds.x_test.numpy()
        matches = (x_train[:, None, :] == x_test[None, :, :]).all(axis=2)
        assert not matches.any()

    def test_unknown_function(self):
        with pytest.raises(KeyError):
            raw_function("nope")
        with pytest.raises(KeyError):
            task_by_name("nope")


class TestNormalization:
    def test_round_trip_identity(self):
        ds = generate(small_task("levy", seed=3))
        norm = ds.normalization
        rng = np.random.default_rng(0)
        x = rng.uniform(-10, 10, (50, 2))
        y = rng.uniform(-40, 40, 50)
        assert np.allclose(norm.denormalize_inputs(norm.normalize_inputs(x)), x, atol=1e-12)
        assert np.allclose(norm.denormalize_outputs(norm.normalize_outputs(y)), y, atol=1e-12)

    def test_dict_round_trip(self):
        norm = Normalization(input_lo=(-1.0, -2.0), input_hi=(3.0, 4.0), output_scale=7.5)
        assert Normalization.from_dict(norm.to_dict()) == norm


class TestSuite:
    def test_size_and_uniqueness(self):
        suite = builtin_suite()
        assert len(suite) >= 12
        names = [s.name for s in suite]
        assert len(set(names)) == len(names)
        for required in (
            "sphere", "rosenbrock", "rastrigin", "ackley", "griewank", "schwefel",
            "himmelblau", "levy", "booth", "three_hump_camel", "easom",
            "styblinski_tang",
        ):
            assert required in names

    def test_himmelblau_known_minimum(self):
        fn = raw_function("himmelblau")
        assert float(fn(np.array([[3.0, 2.0]]))[0]) == pytest.approx(0.0, abs=1e-12)

    def test_ordering_is_stable(self):
        assert [s.name for s in builtin_suite()] == [s.name for s in builtin_suite()]

    def test_default_sample_counts(self):
        spec = builtin_suite()[0]
        assert spec.train_count == 3750
        assert spec.test_count == 1250

    def test_plugin_registration(self):
        register_function("plugin_demo", lambda x: x[:, 0] * 0.0, ((-1.0, 1.0), (-1.0, 1.0)))
        try:
            assert "plugin_demo" in function_names()
            ds = generate(task_by_name("plugin_demo", train_count=16, test_count=8))
            assert torch.all(ds.y_train == 0)
            with pytest.raises(ValueError):
                register_function("plugin_demo", lambda x: x[:, 0], ((-1, 1), (-1, 1)))
        finally:
            from swatnn import bench

            bench._FUNCTIONS.pop("plugin_demo", None)


class TestPersistence:
    def test_round_trip(self, tmp_path):
        ds = generate(small_task("booth", seed=9))
        path = tmp_path / "booth.task"
        save_dataset(ds, path)
        loaded = load_dataset(path)
        assert loaded.spec == ds.spec
        assert loaded.normalization == ds.normalization
        assert torch.equal(loaded.x_train, ds.x_train)
        assert torch.equal(loaded.y_test, ds.y_test)

    def test_regeneration_is_byte_identical(self, tmp_path):
        spec = small_task("ackley", seed=4)
        p1, p2 = tmp_path / "a.task", tmp_path / "b.task"
        save_dataset(generate(spec), p1)
        save_dataset(generate(spec), p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert (tmp_path / "a.task.json").read_text() == (tmp_path / "b.task.json").read_text()

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "x.task"
        path.write_bytes(b"JUNKJUNK" + b"\x00" * 32)
        (tmp_path / "x.task.json").write_text(
            '{"spec": {"name": "sphere", "function": "sphere", "domain": [[-5, 5], [-5, 5]],'
            ' "train_count": 1, "test_count": 1, "seed": 0},'
            ' "normalization": {"input_lo": [-5, -5], "input_hi": [5, 5], "output_scale": 1.0}}'
        )
        with pytest.raises(ValueError):
            load_dataset(path)


def test_spec_validation():
    with pytest.raises(ValueError):
        TaskSpec(name="x", function="sphere", domain=((0.0, 0.0), (-1.0, 1.0)))
    with pytest.raises(ValueError):
        TaskSpec(name="x", function="sphere", domain=((-1.0, 1.0), (-1.0, 1.0)), train_count=0)
