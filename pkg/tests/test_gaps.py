"""Side descriptors, direct gap scoring, feature extraction."""

import math

import numpy as np
import pytest

from gapwatch import gaps
from gapwatch.errors import ContractViolation, UnevaluableSide
from gapwatch.visibility import TimelineSegment


def make_window(embs, vis=None, secs=None, side="before"):
    embs = np.asarray(embs, dtype=np.float64)
    k = len(embs)
    return gaps.SideWindow(
        side=side,
        embeddings=embs,
        visibility=np.ones(k) if vis is None else np.asarray(vis, dtype=np.float64),
        seconds_from_gap=np.arange(k) * 0.1 if secs is None else np.asarray(secs, dtype=np.float64),
        frame_indices=np.arange(k),
    )


class TestSideDescriptor:
    def test_uniform_weights_arithmetic_mean(self):
        rng = np.random.default_rng(0)
        embs = rng.standard_normal((5, 8))
        w = make_window(embs, vis=np.full(5, 0.7), secs=np.full(5, 1.0))
        assert np.allclose(gaps.side_descriptor(w), embs.mean(axis=0), atol=1e-12)

    def test_single_frame_passthrough(self):
        emb = np.arange(8.0)[None, :]
        w = make_window(emb, vis=[0.3], secs=[1.7])
        assert np.allclose(gaps.side_descriptor(w), emb[0], atol=1e-12)

    def test_two_frame_hand_computed(self):
        f1 = np.array([1.0, 0.0, 2.0])
        f2 = np.array([0.0, 1.0, -1.0])
        w = make_window(np.stack([f1, f2]), vis=[1.0, 1.0], secs=[0.0, 1.0])
        expected = (f1 + math.exp(-1) * f2) / (1 + math.exp(-1))
        assert np.allclose(gaps.side_descriptor(w), expected, atol=1e-12)

    def test_zero_visibility_unevaluable(self):
        w = make_window(np.ones((3, 8)), vis=[0.0, 0.0, 0.0])
        assert not w.evaluable
        with pytest.raises(UnevaluableSide):
            gaps.side_descriptor(w)

    def test_convex_hull_componentwise(self):
        rng = np.random.default_rng(1)
        embs = rng.standard_normal((7, 16))
        w = make_window(embs, vis=rng.uniform(0.1, 1.0, 7), secs=rng.uniform(0, 2, 7))
        fused = gaps.side_descriptor(w)
        assert np.all(fused >= embs.min(axis=0) - 1e-12)
        assert np.all(fused <= embs.max(axis=0) + 1e-12)


class TestDirectScore:
    def test_identical_windows_zero(self):
        rng = np.random.default_rng(2)
        embs = rng.standard_normal((4, 8))
        assert gaps.direct_score(make_window(embs), make_window(embs, side="after")) == pytest.approx(
            0.0, abs=1e-12
        )

    def test_symmetric_in_sides(self):
        rng = np.random.default_rng(3)
        a = make_window(rng.standard_normal((4, 8)))
        b = make_window(rng.standard_normal((5, 8)), side="after")
        assert gaps.direct_score(a, b) == pytest.approx(gaps.direct_score(b, a), abs=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(4)
        embs_a = rng.standard_normal((4, 8))
        embs_b = rng.standard_normal((4, 8))
        base = gaps.direct_score(make_window(embs_a), make_window(embs_b))
        scaled = gaps.direct_score(make_window(embs_a * 7.5), make_window(embs_b * 0.2))
        assert scaled == pytest.approx(base, abs=1e-9)

    def test_range(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            s = gaps.direct_score(
                make_window(rng.standard_normal((3, 8))),
                make_window(rng.standard_normal((3, 8))),
            )
            assert 0.0 <= s <= 2.0


class TestFeatures:
    def _record(self, before, after, inside=None, duration=3.0):
        return gaps.GapRecord(
            gap_id=0,
            start_frame=10,
            end_frame=39,
            duration_s=duration,
            before=before,
            after=after,
            inside_visibility=inside,
        )

    def test_vector_length_97(self):
        rng = np.random.default_rng(6)
        rec = self._record(
            make_window(rng.standard_normal((4, 8))),
            make_window(rng.standard_normal((5, 8)), side="after"),
            inside=rng.uniform(0, 1, 30),
        )
        vec = gaps.extract_features(rec).vector()
        assert vec.shape == (gaps.FEATURE_DIM,)
        assert gaps.FEATURE_DIM == 97

    def test_histograms_sum_to_one(self):
        rng = np.random.default_rng(7)
        rec = self._record(
            make_window(rng.standard_normal((6, 8))),
            make_window(rng.standard_normal((3, 8)), side="after"),
            inside=rng.uniform(0, 1, 12),
        )
        feats = gaps.extract_features(rec)
        for hist in (feats.sim_hist, feats.vis_outside_hist, feats.vis_inside_hist):
            assert hist.sum() == pytest.approx(1.0, abs=1e-9)

    def test_identical_single_frames_mass_at_one(self):
        emb = np.array([[1.0, 2.0, 3.0]])
        rec = self._record(
            make_window(emb), make_window(emb.copy(), side="after"), inside=np.array([0.2])
        )
        feats = gaps.extract_features(rec)
        assert feats.sim_hist[-1] == pytest.approx(1.0)  # cos=1 lands in the last bin

    def test_empty_inside_uniform_flagged(self):
        rng = np.random.default_rng(8)
        rec = self._record(
            make_window(rng.standard_normal((4, 8))),
            make_window(rng.standard_normal((4, 8)), side="after"),
            inside=np.empty(0),
        )
        feats = gaps.extract_features(rec)
        assert feats.degenerate
        assert np.allclose(feats.vis_inside_hist, 1.0 / 32)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(9)
        embs_a = rng.standard_normal((5, 8))
        embs_b = rng.standard_normal((6, 8))
        vis_a = rng.uniform(0.2, 1.0, 5)
        rec1 = self._record(
            make_window(embs_a, vis=vis_a), make_window(embs_b, side="after"), inside=rng.uniform(0, 1, 9)
        )
        perm = rng.permutation(5)
        rec2 = self._record(
            make_window(embs_a[perm], vis=vis_a[perm]),
            make_window(embs_b, side="after"),
            inside=rec1.inside_visibility,
        )
        f1 = gaps.extract_features(rec1)
        f2 = gaps.extract_features(rec2)
        assert np.allclose(f1.sim_hist, f2.sim_hist, atol=1e-12)
        assert np.allclose(f1.vis_outside_hist, f2.vis_outside_hist, atol=1e-12)


class TestBuildSideWindows:
    def test_windows_clip_to_adjacent_segment(self):
        fps = 10.0
        segments = [
            TimelineSegment("good", 0, 9),
            TimelineSegment("gap", 10, 24),
            TimelineSegment("good", 25, 99),
        ]
        rng = np.random.default_rng(10)
        emb = rng.standard_normal((100, 8))
        raw = rng.uniform(0, 1, 100)
        before, after = gaps.build_side_windows(segments[1], segments, emb, raw, fps)
        # before window: only 10 good frames exist even though 2 s = 20
        assert list(before.frame_indices) == list(range(9, -1, -1))
        assert after.frame_indices[0] == 25 and len(after.frame_indices) == 20
        assert before.seconds_from_gap.min() == 0.0
        assert after.seconds_from_gap.max() <= gaps.SIDE_WINDOW_S

    def test_gap_at_stream_edge_has_empty_side(self):
        segments = [TimelineSegment("gap", 0, 9), TimelineSegment("good", 10, 49)]
        rng = np.random.default_rng(11)
        emb = rng.standard_normal((50, 8))
        raw = rng.uniform(0, 1, 50)
        before, after = gaps.build_side_windows(segments[0], segments, emb, raw, 10.0)
        assert len(before.frame_indices) == 0
        assert not before.evaluable
        assert after.evaluable


class TestCalibrateThreshold:
    def test_fpr_at_most_target(self):
        rng = np.random.default_rng(12)
        neg = rng.uniform(0.0, 1.0, 200)
        pos = rng.uniform(0.8, 2.0, 50)
        scores = np.concatenate([neg, pos])
        labels = np.concatenate([np.zeros(200, int), np.ones(50, int)])
        thr = gaps.calibrate_alert_threshold(scores, labels, target_fpr=0.10)
        assert (neg > thr).mean() <= 0.10

    def test_needs_negatives(self):
        with pytest.raises(ContractViolation):
            gaps.calibrate_alert_threshold(np.ones(5), np.ones(5, int))
