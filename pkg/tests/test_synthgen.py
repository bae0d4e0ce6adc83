"""Synthetic dataset generation and point sampling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from pointtal.datamodel import GroundTruthInstance, read_features
from pointtal.synthgen import (
    GenerationError,
    PointStrategy,
    SynthSpec,
    _dataset_directions,
    _ramp_phase,
    generate_dataset,
    sample_points,
    write_dataset,
)


def tiny_spec(**kwargs):
    base = dict(
        num_videos=3,
        T_range=(30, 40),
        D=8,
        C=2,
        instances_per_video_range=(1, 2),
        instance_length_range=(5, 8),
        seed=7,
    )
    base.update(kwargs)
    return SynthSpec(**base)


class TestGeneration:
    def test_all_background_video(self):
        spec = tiny_spec(instances_per_video_range=(0, 0))
        feats, gt = generate_dataset(spec)
        assert all(len(g) == 0 for g in gt)
        assert len(feats) == 3

    def test_determinism_bit_identical(self, tmp_path):
        spec = tiny_spec()
        for sub in ("a", "b"):
            (tmp_path / sub).mkdir()
            write_dataset(tmp_path / sub, spec, PointStrategy())
        for name in ["manifest.json", "gt.jsonl", "points.jsonl"]:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        for f in sorted((tmp_path / "a" / "features").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / "features" / f.name).read_bytes()

    def test_zero_noise_plants_exact_signal(self):
        spec = tiny_spec(noise_std=0.0, class_signal_strength=1.0, temporal_ramp=True)
        means, ramp_dir = _dataset_directions(spec)
        feats, gt = generate_dataset(spec)
        for seq, instances in zip(feats, gt):
            covered = np.zeros(seq.T, dtype=bool)
            for inst in instances:
                phase = _ramp_phase(inst.e - inst.s + 1)
                expected = means[inst.y] + 2.0 * phase[:, None] * ramp_dir
                np.testing.assert_array_equal(seq.values[inst.s : inst.e + 1], expected)
                covered[inst.s : inst.e + 1] = True
            # background carries nothing when noise is off
            np.testing.assert_array_equal(seq.values[~covered], 0.0)

    def test_recomputed_class_means_match_planted(self):
        spec = tiny_spec(
            num_videos=12, noise_std=0.0, class_signal_strength=2.5, temporal_ramp=True
        )
        means, _ = _dataset_directions(spec)
        feats, gt = generate_dataset(spec)
        sums = np.zeros((spec.C, spec.D))
        counts = np.zeros(spec.C)
        for seq, instances in zip(feats, gt):
            for inst in instances:
                sums[inst.y] += seq.values[inst.s : inst.e + 1].sum(axis=0)
                counts[inst.y] += inst.e - inst.s + 1
        for c in range(spec.C):
            if counts[c]:
                # the ramp phase is symmetric, so it cancels in the mean
                np.testing.assert_allclose(
                    sums[c] / counts[c], 2.5 * means[c], atol=1e-12
                )

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_instances_disjoint_and_separated(self, seed):
        spec = tiny_spec(seed=seed, num_videos=1, instances_per_video_range=(2, 3))
        _, gt = generate_dataset(spec)
        spans = sorted((g.s, g.e) for g in gt[0])
        for (s1, e1), (s2, e2) in zip(spans, spans[1:]):
            assert e1 + 1 < s2  # at least one background snippet between

    def test_infeasible_packing_raises(self):
        spec = tiny_spec(T_range=(30, 30), instances_per_video_range=(5, 5))
        with pytest.raises(GenerationError, match="T_range"):
            generate_dataset(spec)

    def test_minimum_instance_length_enforced(self):
        with pytest.raises(ValueError, match="length"):
            tiny_spec(instance_length_range=(3, 8))

    def test_feature_files_roundtrip(self, tmp_path):
        write_dataset(tmp_path, tiny_spec(), PointStrategy())
        seq = read_features(tmp_path / "features" / "video_0000.feat")
        assert seq.video_id == "video_0000"
        assert seq.D == 8


class TestPointSampling:
    def gt(self, *spans, vid="v"):
        return [GroundTruthInstance(vid, s, e, y) for s, e, y in spans]

    @pytest.mark.parametrize("kind", ["uniform", "center", "gaussian"])
    def test_single_snippet_instance_forces_point(self, kind):
        pts = sample_points(self.gt((10, 10, 2)), PointStrategy(kind=kind), seed=0, T=20)
        assert pts.points == ((10, 2),)

    def test_center_uses_floor(self):
        pts = sample_points(self.gt((4, 8, 1)), PointStrategy(kind="center"), seed=0, T=20)
        assert pts.points == ((6, 1),)

    @settings(max_examples=150, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_point_inside_instance_with_matching_label(self, seed):
        rng = np.random.default_rng(seed)
        spans, pos = [], 0
        for _ in range(int(rng.integers(1, 4))):
            s = pos + int(rng.integers(1, 4))
            e = s + int(rng.integers(0, 6))
            spans.append((s, e, int(rng.integers(0, 3))))
            pos = e + 1
        gt = self.gt(*spans)
        kind = ["uniform", "center", "gaussian"][seed % 3]
        pts = sample_points(gt, PointStrategy(kind=kind), seed=seed, T=pos + 5)
        assert len(pts.points) == len(gt)  # one point per instance
        for (t, y), inst in zip(pts.points, sorted(gt, key=lambda g: g.s)):
            assert inst.s <= t <= inst.e
            assert y == inst.y

    def test_gaussian_sigma_to_zero_is_center(self):
        for span in [(4, 8), (4, 7), (0, 9), (3, 3)]:
            gt = self.gt((*span, 0))
            center = sample_points(gt, PointStrategy(kind="center"), seed=1, T=30)
            for seed in range(50):
                gauss = sample_points(
                    gt,
                    PointStrategy(kind="gaussian", gaussian_sigma_fraction=1e-12),
                    seed=seed,
                    T=30,
                )
                assert gauss.points == center.points

    def test_uniform_distribution_chi_squared(self):
        # one draw per seed over a length-100 instance; compare to uniform
        gt = self.gt((0, 99, 0))
        strategy = PointStrategy(kind="uniform")
        counts = np.zeros(100)
        n = 100_000
        for seed in range(n):
            t = sample_points(gt, strategy, seed=seed, T=100).points[0][0]
            counts[t] += 1
        result = stats.chisquare(counts)
        assert result.pvalue > 0.01

    def test_file_strategy_cannot_sample(self):
        with pytest.raises(ValueError, match="file"):
            sample_points(self.gt((0, 5, 0)), PointStrategy(kind="file", annotation_path="x"), 0, 10)

    def test_strategy_validation(self):
        with pytest.raises(ValueError):
            PointStrategy(kind="gaussian", gaussian_sigma_fraction=0.7)
        with pytest.raises(ValueError):
            PointStrategy(kind="file")
        with pytest.raises(ValueError):
            PointStrategy(kind="bogus")
