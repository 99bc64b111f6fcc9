import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _oracles import scalar_gpe
from pointgn.errors import InvalidArgumentError, InvalidInputError
from pointgn.encoder import (
    EncoderConfig,
    StageState,
    encode,
    encode_batch,
    encode_stage,
    gpe_aggregate,
    gpe_encode,
    initial_state,
    make_reference_grid,
    neighbor_pool,
)
from pointgn.geometry import PointCloud

SMALL = EncoderConfig(k=16)


class TestReferenceGrid:
    def test_endpoints(self):
        np.testing.assert_array_equal(make_reference_grid(2), [-1, 1])
        np.testing.assert_array_equal(make_reference_grid(3), [-1, 0, 1])
        np.testing.assert_array_equal(make_reference_grid(1), [0])

    def test_nine(self):
        expected = [-1 + 0.25 * j for j in range(9)]
        np.testing.assert_allclose(make_reference_grid(9), expected, atol=1e-15)

    def test_zero(self):
        with pytest.raises(InvalidArgumentError):
            make_reference_grid(0)


class TestGPE:
    def test_coincidence_is_one(self):
        refs = make_reference_grid(5)
        out = gpe_encode([[refs[1], refs[3], refs[0]]], refs, 0.3)
        assert out[0, 3 * 1 + 0] == 1.0 and out[0, 3 * 3 + 1] == 1.0 and out[0, 2] == 1.0

    def test_one_sigma(self):
        out = gpe_encode([[0.35, 0, 0]], [0.0], 0.35)
        assert abs(out[0, 0] - math.exp(-0.5)) < 1e-12

    def test_scalar_value(self):
        out = gpe_encode([[0.0, 0.0, 0.0]], [1.0], 0.35)
        expected = scalar_gpe(0.0, 1.0, 0.35)
        assert abs(expected - 0.0168798841) < 1e-9
        assert abs(out[0, 0] - expected) < 1e-15

    def test_layout_is_reference_major(self):
        rng = np.random.default_rng(0)
        c = rng.uniform(-1, 1, size=(4, 3))
        refs = make_reference_grid(4)
        out = gpe_encode(c, refs, 0.4)
        assert out.shape == (4, 12)
        for i in range(4):
            for j in range(4):
                for a in range(3):
                    assert abs(out[i, 3 * j + a] - scalar_gpe(c[i, a], refs[j], 0.4)) < 1e-15

    def test_batched_shape(self):
        assert gpe_encode(np.zeros((2, 5, 3)), make_reference_grid(9), 0.3).shape == (2, 5, 27)

    def test_bad_sigma(self):
        with pytest.raises(InvalidArgumentError):
            gpe_encode(np.zeros((1, 3)), [0.0], 0.0)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-3, 3), st.floats(-1, 1), st.floats(0.05, 2))
    def test_range(self, c, v, sigma):
        val = gpe_encode([[c, c, c]], [v], sigma)[0, 0]
        assert 0 <= val <= 1
        assert (val == 1.0) == (c == v) or abs(c - v) < 1e-7

    def test_monotonicity(self):
        gaps = np.linspace(0, 2, 41)
        sigmas = np.linspace(0.1, 1, 10)
        vals = np.array([[gpe_encode([[g, 0, 0]], [0.0], s)[0, 0] for g in gaps] for s in sigmas])
        assert np.all(np.diff(vals, axis=1) < 0)  # decreasing in |c - v|
        assert np.all(np.diff(vals[:, 1:], axis=0) > 0)  # increasing in sigma when |c - v| > 0


class TestAggregate:
    def test_zero_features(self):
        rng = np.random.default_rng(1)
        xyz = rng.normal(size=(6, 3))
        pos = gpe_encode(xyz, make_reference_grid(9), 0.35)
        out = gpe_aggregate(np.zeros((6, 27)), xyz, EncoderConfig())
        np.testing.assert_allclose(out, pos * pos)

    def test_coords_on_references(self):
        feats = np.random.default_rng(2).normal(size=(2, 3))
        out = gpe_aggregate(feats, np.zeros((2, 3)), EncoderConfig(refs_per_axis=1))
        np.testing.assert_allclose(out, feats + 1)

    @pytest.mark.parametrize("mode", ["paper-literal", "multiplicative"])
    def test_matches_elementwise_loop(self, mode):
        rng = np.random.default_rng(3)
        cfg = EncoderConfig(agg_mode=mode, sigma=0.3)
        refs = make_reference_grid(9)
        feats = rng.normal(size=(2, 27))
        xyz = rng.normal(size=(2, 3))
        out = gpe_aggregate(feats, xyz, cfg)
        for r in range(2):
            for j in range(9):
                for a in range(3):
                    g = scalar_gpe(xyz[r, a], refs[j], 0.3)
                    f = feats[r, 3 * j + a]
                    want = f + g * g if mode == "paper-literal" else f * g
                    assert abs(out[r, 3 * j + a] - want) < 1e-14

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            gpe_aggregate(np.zeros((2, 26)), np.zeros((2, 3)), EncoderConfig())


class TestNeighborPool:
    def test_single_row(self):
        row = np.array([[0.5, -2.0, 3.0]])
        np.testing.assert_array_equal(neighbor_pool(row), 2 * row[0])

    def test_zero_one(self):
        assert neighbor_pool(np.array([[0.0], [1.0]]))[0] == 1.5

    def test_identical_rows(self):
        f = np.array([1.0, -1.0, 0.25])
        np.testing.assert_allclose(neighbor_pool(np.tile(f, (7, 1))), 2 * f)

    def test_empty(self):
        with pytest.raises(InvalidArgumentError):
            neighbor_pool(np.zeros((0, 3)))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 20), st.integers(0, 10_000))
    def test_permutation_invariant(self, k, seed):
        rng = np.random.default_rng(seed)
        f = rng.normal(size=(k, 5))
        a = neighbor_pool(f)
        b = neighbor_pool(f[rng.permutation(k)])
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


class TestStage:
    def test_shapes_at_defaults(self):
        cloud = PointCloud(np.random.default_rng(4).normal(size=(1024, 3)))
        state = initial_state(cloud, EncoderConfig())
        assert state.feats.shape == (1024, 27)
        assert np.all((state.feats > 0) & (state.feats <= 1))
        out = encode_stage(state, EncoderConfig())
        assert out.coords.shape == (512, 3) and out.feats.shape == (512, 27)
        assert out.stage_index == 1

    def test_minimal_two_points(self):
        cfg = EncoderConfig(refs_per_axis=3, k=120, clamp_k=True)
        state = StageState(np.array([[0.0, 0, 0], [1.0, 0, 0]]), np.ones((2, 9)), 0)
        out = encode_stage(state, cfg)
        assert out.coords.shape == (1, 3) and np.all(np.isfinite(out.feats))

    def test_k_too_large_without_clamp(self):
        state = StageState(np.random.default_rng(5).normal(size=(8, 3)), np.ones((8, 27)), 0)
        with pytest.raises(InvalidArgumentError):
            encode_stage(state, EncoderConfig(k=120))

    def test_odd_point_count_floors(self):
        state = StageState(np.random.default_rng(6).normal(size=(9, 3)), np.ones((9, 27)), 0)
        assert encode_stage(state, EncoderConfig(k=4)).coords.shape == (4, 3)

    def test_centers_are_original_coordinates(self):
        coords = np.random.default_rng(7).normal(size=(32, 3))
        out = encode_stage(StageState(coords, np.ones((32, 27)), 0), EncoderConfig(k=8))
        assert all(any(np.array_equal(c, p) for p in coords) for c in out.coords)

    def test_permutation(self):
        rng = np.random.default_rng(8)
        coords = rng.normal(size=(64, 3))
        perm = rng.permutation(64)
        cfg = EncoderConfig(k=10)
        feats = gpe_encode(coords, make_reference_grid(9), 0.35)
        a = encode_stage(StageState(coords, feats, 0), cfg)
        b = encode_stage(StageState(coords[perm], feats[perm], 0), cfg)
        np.testing.assert_array_equal(a.coords, b.coords)
        np.testing.assert_allclose(a.feats, b.feats, rtol=0, atol=1e-12)


class TestEncode:
    def test_default_length(self):
        f = encode(PointCloud(np.random.default_rng(9).normal(size=(1024, 3))))
        assert f.values.shape == (108,)
        assert abs(np.linalg.norm(f.values) - 1) < 1e-12

    @pytest.mark.parametrize("v,s", [(3, 2), (6, 3), (33, 1)])
    def test_length_follows_config(self, v, s):
        cfg = EncoderConfig(refs_per_axis=v, stages=s, k=8)
        f = encode(PointCloud(np.random.default_rng(10).normal(size=(64, 3))), cfg)
        assert f.values.shape == (s * 3 * v,)

    def test_too_few_points(self):
        with pytest.raises(InvalidInputError, match="16"):
            encode(PointCloud(np.zeros((15, 3))), EncoderConfig(k=4))

    def test_label_carried(self):
        cloud = PointCloud(np.random.default_rng(11).normal(size=(256, 3)), label=7)
        assert encode(cloud, SMALL).source_label == 7

    def test_translation_scale(self):
        rng = np.random.default_rng(12)
        pts = rng.normal(size=(256, 3))
        a = encode(PointCloud(pts), SMALL).values
        b = encode(PointCloud(3.7 * pts + [10, -4, 2]), SMALL).values
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)

    def test_without_normalization_is_not_scale_invariant(self):
        pts = np.random.default_rng(13).uniform(-0.5, 0.5, size=(128, 3))
        cfg = EncoderConfig(k=16, normalize_input=False)
        a = encode(PointCloud(pts), cfg).values
        b = encode(PointCloud(2 * pts), cfg).values
        assert np.abs(a - b).max() > 1e-6

    def test_rotation_changes_feature(self):
        rng = np.random.default_rng(14)
        pts = rng.normal(size=(256, 3)) * [1.0, 0.5, 0.2]
        rot = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]])
        a = encode(PointCloud(pts), SMALL).values
        b = encode(PointCloud(pts @ rot.T), SMALL).values
        assert np.abs(a - b).max() > 1e-6

    def test_stage_sigma_override(self):
        pts = PointCloud(np.random.default_rng(15).normal(size=(128, 3)))
        base = EncoderConfig(k=16, stages=2)
        same = EncoderConfig(k=16, stages=2, stage_sigmas=(0.35, 0.35))
        other = EncoderConfig(k=16, stages=2, stage_sigmas=(0.2, 0.5))
        np.testing.assert_array_equal(encode(pts, base).values, encode(pts, same).values)
        assert not np.array_equal(encode(pts, base).values, encode(pts, other).values)

    def test_batch_parallel_matches_serial(self):
        rng = np.random.default_rng(16)
        clouds = [PointCloud(rng.normal(size=(256, 3))) for _ in range(6)]
        a = encode_batch(clouds, SMALL, workers=1)
        b = encode_batch(clouds, SMALL, workers=2, chunksize=2)
        np.testing.assert_array_equal(a, b)


class TestConfig:
    @pytest.mark.parametrize("kw", [
        {"refs_per_axis": 0}, {"sigma": 0}, {"k": 0}, {"stages": 0},
        {"agg_mode": "sum"}, {"group_std_mode": "x"}, {"stage_sigmas": (0.3,)},
    ])
    def test_invalid(self, kw):
        with pytest.raises(InvalidArgumentError):
            EncoderConfig(**kw)

    def test_dims_and_fingerprint(self):
        cfg = EncoderConfig()
        assert (cfg.dim, cfg.feature_dim, cfg.min_points) == (27, 108, 16)
        assert EncoderConfig.from_dict(cfg.to_dict()) == cfg
        assert cfg.fingerprint() == EncoderConfig().fingerprint()
        assert cfg.fingerprint() != EncoderConfig(sigma=0.3).fingerprint()
