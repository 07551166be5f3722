"""Block matching, boundary flux and displacement accumulation."""

import numpy as np
import pytest

from gapwatch import flow
from gapwatch import synthworld as sw
from gapwatch.errors import ContractViolation


@pytest.fixture(scope="module")
def world():
    return sw.generate_world(sw.WorldConfig(seed=5, duration=10.0))


@pytest.fixture(scope="module")
def render_at(world):
    def _render(u):
        return world._texture(u + world._arc_offset, world._angle)

    return _render


@pytest.fixture(scope="module")
def pixels_per_fov(render_at):
    return flow.calibrate_pixels_per_fov(render_at, np.random.default_rng(0))


class TestEstimateFlow:
    def test_identical_frames_zero_vectors(self, render_at):
        a = render_at(3.0)
        fld = flow.estimate_flow(a, a)
        assert np.all(fld.vectors == 0.0)
        assert fld.grid_shape == (8, 8)

    def test_circular_shift_recovers_offset(self, render_at):
        a = render_at(7.0)
        b = np.roll(a, 2, axis=1)  # content moves 2 px right
        fld = flow.estimate_flow(a, b)
        confident = fld.confidence > 0.2
        assert confident.sum() >= 32
        modal = (fld.vectors[confident] == (2, 0)).all(axis=1).mean()
        assert modal >= 0.9

    def test_flat_frames_zero_confidence(self):
        flat = np.full((64, 64), 0.5)
        fld = flow.estimate_flow(flat, flat)
        assert np.all(fld.confidence == 0.0)

    def test_size_mismatch_raises(self):
        with pytest.raises(ContractViolation):
            flow.estimate_flow(np.zeros((64, 64)), np.zeros((32, 32)))

    def test_vectors_bounded_by_search_radius(self, render_at):
        fld = flow.estimate_flow(render_at(1.0), render_at(1.3))
        assert np.abs(fld.vectors).max() <= flow.DEFAULT_SEARCH_RADIUS

    def test_antisymmetry_on_confident_blocks(self, render_at):
        rng = np.random.default_rng(3)
        agree = total = 0
        for _ in range(10):
            u = rng.uniform(0, 50)
            a, b = render_at(u), render_at(u + 0.05)
            fwd = flow.estimate_flow(a, b)
            bwd = flow.estimate_flow(b, a)
            mask = (fwd.confidence > 0.5) & (bwd.confidence > 0.5)
            if mask.sum() == 0:
                continue
            close = np.all(np.abs(fwd.vectors[mask] + bwd.vectors[mask]) <= 1, axis=1)
            agree += close.sum()
            total += mask.sum()
        assert total > 50
        assert agree / total >= 0.8

    def test_translation_equivariance(self, render_at):
        # same uniform motion, both frames shifted by one block: the flow
        # field (away from the wrap seam) is unchanged
        a = render_at(11.0)
        b = np.roll(a, 2, axis=1)
        base = flow.estimate_flow(a, b)
        a2 = np.roll(a, 8, axis=0)
        b2 = np.roll(b, 8, axis=0)
        shifted = flow.estimate_flow(a2, b2)
        interior = np.s_[2:-2, 2:-2]
        assert np.array_equal(base.vectors[interior], np.roll(shifted.vectors, -1, axis=0)[interior])


class TestBoundaryFlux:
    def test_zero_flow_zero_displacement(self):
        fld = flow.FlowField(vectors=np.zeros((8, 8, 2)), confidence=np.ones((8, 8)))
        d = flow.boundary_flux(fld, pixels_per_fov=40.0)
        assert d.value == 0.0
        assert d.per_frame

    def test_all_zero_confidence_low_confidence_marker(self):
        fld = flow.FlowField(vectors=np.ones((8, 8, 2)), confidence=np.zeros((8, 8)))
        d = flow.boundary_flux(fld, pixels_per_fov=40.0)
        assert d.value == 0.0
        assert d.low_confidence

    def test_outward_motion_is_positive(self):
        # texture exiting left edge: vectors point left on the left column
        vectors = np.zeros((8, 8, 2))
        vectors[:, 0] = (-2.0, 0.0)
        vectors[:, 7] = (2.0, 0.0)
        vectors[0, :] += (0.0, -2.0)
        vectors[7, :] += (0.0, 2.0)
        fld = flow.FlowField(vectors=vectors, confidence=np.ones((8, 8)))
        d = flow.boundary_flux(fld, pixels_per_fov=40.0)
        assert d.value > 0

    def test_lateral_shift_much_smaller_than_radial(self):
        # uniform lateral flow: inflow on one edge cancels outflow on the other
        lateral = np.zeros((8, 8, 2))
        lateral[:, :, 0] = 3.0
        radial = np.zeros((8, 8, 2))
        g = 8
        normals = flow._boundary_normals(g)
        radial[:, :] = 3.0 * normals  # pure outward motion of same magnitude
        conf = np.ones((8, 8))
        d_lat = flow.boundary_flux(flow.FlowField(lateral, conf), 40.0)
        d_rad = flow.boundary_flux(flow.FlowField(radial, conf), 40.0)
        assert abs(d_lat.value) < 0.2 * abs(d_rad.value)

    def test_flux_linear_in_vectors(self):
        rng = np.random.default_rng(0)
        va = rng.normal(size=(8, 8, 2))
        vb = rng.normal(size=(8, 8, 2))
        conf = rng.uniform(0.2, 1.0, size=(8, 8))
        fa = flow.boundary_flux(flow.FlowField(va, conf), 40.0)
        fb = flow.boundary_flux(flow.FlowField(vb, conf), 40.0)
        fab = flow.boundary_flux(flow.FlowField(va + vb, conf), 40.0)
        assert fab.value == pytest.approx(fa.value + fb.value, abs=1e-12)

    def test_rendered_constant_speed_flux(self, pixels_per_fov):
        # 0.5 FOV/s at 10 fps -> 0.05 FOV/frame within 20%
        cfg = sw.WorldConfig(seed=9, duration=20.0, velocity_profile=((20.0, 0.5, 0.0),))
        video = sw.world_to_video(sw.generate_world(cfg))
        vals, confs = flow.displacement_series(video.frames_float()[:120], pixels_per_fov)
        assert confs.mean() > 0.2
        assert vals.mean() == pytest.approx(0.05, rel=0.2)


class TestAccumulate:
    def test_simple_sum(self):
        d = flow.accumulate([0.05] * 100, [1.0] * 100)
        assert d.value == pytest.approx(5.0)
        assert not d.per_frame

    def test_concatenation_additive(self):
        rng = np.random.default_rng(1)
        a = list(rng.normal(0, 0.05, 40))
        b = list(rng.normal(0, 0.05, 60))
        da = flow.accumulate(a)
        db = flow.accumulate(b)
        dab = flow.accumulate(a + b)
        assert dab.value == pytest.approx(da.value + db.value, abs=1e-12)

    def test_empty_sequence(self):
        d = flow.accumulate([])
        assert d.value == 0.0
        assert d.confidence == 0.0

    def test_misaligned_raises(self):
        with pytest.raises(ContractViolation):
            flow.accumulate([0.1, 0.2], [1.0])

    def test_clean_segment_oracle(self, pixels_per_fov):
        # 20 s clean segment: accumulated displacement within 10% + 0.1 FOV
        cfg = sw.WorldConfig(seed=12, duration=22.0, velocity_profile=((22.0, 0.4, 0.05),))
        video = sw.world_to_video(sw.generate_world(cfg))
        n = 200
        vals, confs = flow.displacement_series(video.frames_float()[: n + 1], pixels_per_fov)
        est = flow.accumulate(vals, confs)
        true = video.positions[n] - video.positions[0]
        assert abs(est.value - true) <= 0.1 * abs(true) + 0.1


class TestCalibration:
    def test_constant_is_positive_and_geometric_scale(self, pixels_per_fov):
        # radial mapping moves rings by ~44.5 px/FOV before normal projection
        assert 20.0 < pixels_per_fov < 60.0

    def test_median_relative_error_over_segments(self, pixels_per_fov):
        errs = []
        rng = np.random.default_rng(7)
        for seed in range(8):
            speed = float(rng.uniform(0.15, 0.5) * rng.choice([-1, 1]))
            cfg = sw.WorldConfig(
                seed=seed + 50,
                duration=12.0,
                velocity_profile=((12.0, speed, float(rng.uniform(0.02, 0.07))),),
            )
            video = sw.world_to_video(sw.generate_world(cfg))
            vals, _ = flow.displacement_series(video.frames_float()[:101], pixels_per_fov)
            true = video.positions[100] - video.positions[0]
            errs.append(abs(vals.sum() - true) / max(abs(true), 1e-9))
        assert np.median(errs) <= 0.10

    def test_dump_flow_jsonl(self, render_at, tmp_path):
        import json

        fields = [flow.estimate_flow(render_at(0.0), render_at(0.05))]
        path = tmp_path / "flow.jsonl"
        flow.dump_flow_jsonl(path, fields, start_index=3)
        rec = json.loads(path.read_text().splitlines()[0])
        assert rec["frame_index"] == 3
        assert len(rec["vectors"]) == 64
        assert len(rec["confidences"]) == 64
