import numpy as np
import pytest
from conftest import check_grad

from noteacher import autodiff as ad
from noteacher.errors import CheckpointError, ConfigError, ShapeError
from noteacher.models import (
    EmaPair,
    MlpSpec,
    copy_params,
    ema_update,
    flatten,
    forward_bag,
    forward_bags,
    forward_mlp,
    init_pair,
    init_params,
    load_checkpoint,
    save_checkpoint,
    spec_from_dict,
    spec_to_dict,
)


def zero_params(spec):
    return {k: np.zeros_like(v) for k, v in init_params(spec, np.random.default_rng(0)).items()}


class TestSpec:
    def test_param_count(self):
        spec = MlpSpec(5, (7, 3), 2)
        assert spec.n_params == 5 * 7 + 7 + 7 * 3 + 3 + 3 * 2 + 2
        assert flatten(init_params(spec, np.random.default_rng(0))).size == spec.n_params

    @pytest.mark.parametrize("kw", [{"input_dim": 0}, {"hidden_dims": (4, 0)}, {"activation": "gelu"}, {"output": "linear"}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            MlpSpec(**{"input_dim": 3, **kw})

    def test_dict_round_trip(self):
        spec = MlpSpec(4, (8, 2), 3, "tanh", "softmax")
        assert spec_from_dict(spec_to_dict(spec)) == spec


class TestForward:
    def test_zero_sigmoid_is_half(self, rng):
        spec = MlpSpec(3, (4,), 2)
        np.testing.assert_array_equal(forward_mlp(spec, zero_params(spec), rng.standard_normal((5, 3))).data, 0.5)

    def test_zero_softmax_is_uniform(self, rng):
        spec = MlpSpec(3, (4,), 4, output="softmax")
        np.testing.assert_array_equal(forward_mlp(spec, zero_params(spec), rng.standard_normal((5, 3))).data, 0.25)

    @pytest.mark.parametrize("output", ["sigmoid", "softmax"])
    def test_range(self, rng, output):
        spec = MlpSpec(6, (16,), 3, output=output)
        params = {k: v * 20 for k, v in init_params(spec, rng).items()}
        out = forward_mlp(spec, params, rng.standard_normal((1000, 6)) * 10).data
        assert np.all((out >= 0) & (out <= 1))
        if output == "softmax":
            np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)

    def test_dim_mismatch(self, rng):
        spec = MlpSpec(3, (4,), 2)
        with pytest.raises(ShapeError):
            forward_mlp(spec, init_params(spec, rng), np.ones((2, 4)))

    def test_deterministic(self, rng):
        spec = MlpSpec(3, (4,), 2)
        p, x = init_params(spec, rng), rng.standard_normal((4, 3))
        assert np.array_equal(forward_mlp(spec, p, x).data, forward_mlp(spec, p, x).data)

    def test_glorot_bounds_and_zero_bias(self):
        spec = MlpSpec(10, (30,), 2)
        p = init_params(spec, np.random.default_rng(0))
        assert np.abs(p["W0"]).max() <= np.sqrt(6 / 40)
        assert not p["b0"].any() and not p["b1"].any()


class TestBags:
    def setup_method(self):
        self.spec = MlpSpec(5, (8,), 3)
        self.params = init_params(self.spec, np.random.default_rng(7))

    def test_single_slice_equals_mlp(self, rng):
        x = rng.standard_normal((1, 5))
        assert np.array_equal(forward_bag(self.spec, self.params, x).data, forward_mlp(self.spec, self.params, x).data)

    def test_permutation_invariant(self, rng):
        scan = rng.standard_normal((9, 5))
        base = forward_bag(self.spec, self.params, scan).data
        for _ in range(10):
            assert np.array_equal(forward_bag(self.spec, self.params, scan[rng.permutation(9)]).data, base)

    def test_duplicate_invariant(self, rng):
        scan = rng.standard_normal((6, 5))
        base = forward_bag(self.spec, self.params, scan).data
        dup = np.vstack([scan, scan[rng.integers(0, 6, 4)]])
        assert np.array_equal(forward_bag(self.spec, self.params, dup).data, base)

    def test_batched_matches_single(self, rng):
        scans = [rng.standard_normal((d, 5)) for d in (3, 1, 7)]
        offsets = np.array([0, 3, 4, 11])
        batched = forward_bags(self.spec, self.params, np.vstack(scans), offsets).data
        for i, s in enumerate(scans):
            # matrix products of different heights may round differently
            np.testing.assert_allclose(batched[i], forward_bag(self.spec, self.params, s).data[0], rtol=1e-14)

    def test_empty_scan(self):
        with pytest.raises(ShapeError):
            forward_bag(self.spec, self.params, np.zeros((0, 5)))

    def test_gradient_matches_finite_differences(self, rng):
        scan = rng.standard_normal((6, 5))
        names = list(self.params)

        def build(*arrs):
            out = forward_bag(self.spec, dict(zip(names, arrs)), scan)
            return ad.sum(out * np.array([0.3, -1.1, 0.7]))

        # the check is skipped for parameter draws that put a pooled feature within
        # a hair of a tie, where the max has no derivative
        for seed in range(5):
            params = init_params(self.spec, np.random.default_rng(100 + seed))
            h = np.maximum(scan @ params["W0"] + params["b0"], 0)
            top2 = np.sort(h, axis=0)[-2:]
            if np.any((top2[1] - top2[0] < 1e-4) & (top2[1] > 0)):
                continue
            check_grad(build, *[params[k] for k in names])


class TestPairs:
    def test_init_pair_deterministic(self):
        spec = MlpSpec(4, (5,), 2)
        a, b = init_pair(spec, 1, 2), init_pair(spec, 1, 2)
        for k in a.f1:
            assert np.array_equal(a.f1[k], b.f1[k]) and np.array_equal(a.f2[k], b.f2[k])

    def test_distinct_seeds_differ(self):
        pair = init_pair(MlpSpec(4, (5,), 2), 1, 2)
        assert not np.array_equal(flatten(pair.f1), flatten(pair.f2))
        assert all(pair.f1[k].shape == pair.f2[k].shape for k in pair.f1)


def ema_closed_form_error(decay, n, rng):
    student = {"W": rng.standard_normal((3, 2)), "b": rng.standard_normal(2)}
    t0 = {"W": rng.standard_normal((3, 2)), "b": rng.standard_normal(2)}
    pair = EmaPair(student, copy_params(t0), decay)
    for _ in range(n):
        ema_update(pair)
    return max(
        float(np.max(np.abs(pair.teacher[k] - (student[k] + decay**n * (t0[k] - student[k]))))) for k in student
    )


class TestEma:
    @pytest.mark.parametrize("decay", [0.91, 0.95, 0.99])
    @pytest.mark.parametrize("n", [1, 10, 1000])
    def test_closed_form(self, decay, n, rng):
        assert ema_closed_form_error(decay, n, rng) <= 1e-12

    def test_decay_zero_copies_student(self, rng):
        pair = EmaPair({"w": rng.standard_normal(3)}, {"w": rng.standard_normal(3)}, 0.0)
        ema_update(pair)
        assert np.array_equal(pair.teacher["w"], pair.student["w"])

    def test_decay_one_freezes_teacher(self, rng):
        t = rng.standard_normal(3)
        pair = EmaPair({"w": rng.standard_normal(3)}, {"w": t.copy()}, 1.0)
        ema_update(pair)
        assert np.array_equal(pair.teacher["w"], t)

    def test_commutes_with_flattening(self, rng):
        s = {"a": rng.standard_normal((2, 3)), "b": rng.standard_normal(4)}
        t = {"a": rng.standard_normal((2, 3)), "b": rng.standard_normal(4)}
        expected = 0.9 * flatten(t) + (1.0 - 0.9) * flatten(s)
        pair = EmaPair(s, t, 0.9)
        ema_update(pair)
        assert np.array_equal(flatten(pair.teacher), expected)

    def test_decay_out_of_range(self):
        with pytest.raises(ConfigError):
            EmaPair({}, {}, 1.5)


class TestCheckpoint:
    def test_bit_exact_round_trip(self, tmp_path, rng):
        arrays = {"W0": rng.standard_normal((3, 4)), "step": np.array(7), "m": rng.standard_normal(5).astype(np.float32)}
        meta = {"spec": spec_to_dict(MlpSpec(3, (4,), 1)), "rng": {"state": 2**70}}
        save_checkpoint(tmp_path / "c.npz", arrays, meta)
        got, got_meta = load_checkpoint(tmp_path / "c.npz")
        assert set(got) == set(arrays)
        for k in arrays:
            assert got[k].dtype == arrays[k].dtype and got[k].tobytes() == arrays[k].tobytes()
        assert got_meta["rng"]["state"] == 2**70 and got_meta["spec"] == meta["spec"]

    def test_corrupted_file(self, tmp_path, rng):
        path = tmp_path / "c.npz"
        save_checkpoint(path, {"x": rng.standard_normal(100)}, {})
        data = bytearray(path.read_bytes())
        path.write_bytes(bytes(data[: len(data) // 2]))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.npz")

    def test_wrong_version(self, tmp_path):
        import json

        np.savez(tmp_path / "v.npz", __meta__=np.frombuffer(json.dumps({"version": 99}).encode(), dtype=np.uint8))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(tmp_path / "v.npz")

    def test_no_temp_files_left(self, tmp_path):
        save_checkpoint(tmp_path / "c.npz", {"x": np.ones(2)}, {})
        assert [p.name for p in tmp_path.iterdir()] == ["c.npz"]
