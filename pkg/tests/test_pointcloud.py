import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camguide.errors import EmptyCloudError, NoOverlapError, StageError
from camguide.geometry import CameraPose, MotionPrimitive, PinholeCamera, Trajectory, build_primitive, combine
from camguide.pointcloud import (
    PointCloud,
    RenderResult,
    RgbdFrame,
    constant_filler,
    diffusion_filler,
    extend_rendered_depth,
    fill_holes,
    lift,
    merge,
    optimize_depth_scale,
    render,
    stage_one,
)


def brute_force_render(cloud, camera, pose, z_near=1e-4):
    """Per-point loop: keep the nearest depth per pixel, first index on ties."""
    depth = np.full((camera.height, camera.width), np.inf)
    index = np.full((camera.height, camera.width), -1)
    for i, p in enumerate(cloud.positions):
        x, y, z = pose.rotation @ p + pose.translation
        if z <= z_near:
            continue
        u = int(np.rint(camera.fx * x / z + camera.cx))
        v = int(np.rint(camera.fy * y / z + camera.cy))
        if 0 <= u < camera.width and 0 <= v < camera.height and z < depth[v, u]:
            depth[v, u], index[v, u] = z, i
    return depth, index


def cloud_of(points, colors=None):
    points = np.asarray(points, dtype=float)
    colors = np.zeros_like(points) if colors is None else colors
    return PointCloud(points, colors, np.zeros(len(points), dtype=int))


class TestLift:
    camera = PinholeCamera(50.0, 60.0, 4.0, 3.0, 9, 7)

    def frame(self, depth):
        return RgbdFrame(np.full((7, 9, 3), 0.25), depth)

    def test_principal_ray(self):
        depth = np.zeros((7, 9))
        depth[3, 4] = 2.5
        cloud = lift(self.frame(depth), self.camera, CameraPose.identity())
        np.testing.assert_array_equal(cloud.positions, [[0, 0, 2.5]])

    def test_pinhole_model(self):
        depth = np.zeros((7, 9))
        depth[1, 7] = 3.0
        (p,) = lift(self.frame(depth), self.camera, CameraPose.identity()).positions
        np.testing.assert_allclose(p, [(7 - 4) * 3 / 50, (1 - 3) * 3 / 60, 3.0], rtol=1e-15)

    def test_world_transform(self):
        depth = np.ones((7, 9))
        pose = build_primitive(MotionPrimitive("rotate", "clockwise", 40, 2), focus_distance=1.0)[-1]
        cloud = lift(self.frame(depth), self.camera, pose, source_view=3)
        cam = pose.to_camera(cloud.positions)
        np.testing.assert_allclose(cam[:, 2], 1.0, atol=1e-12)
        assert set(cloud.source_view) == {3}

    def test_all_invalid(self):
        with pytest.raises(EmptyCloudError):
            lift(self.frame(np.zeros((7, 9))), self.camera, CameraPose.identity())


class TestRender:
    camera = PinholeCamera(10.0, 10.0, 5.0, 5.0, 11, 11)

    def test_zbuffer_rule(self):
        colors = np.array([[1.0, 0, 0], [0, 1.0, 0]])
        cloud = cloud_of([[0, 0, 2.0], [0, 0, 1.0]], colors)
        r = render(cloud, self.camera, CameraPose.identity())
        np.testing.assert_array_equal(r.color[5, 5], [0, 1, 0])
        assert r.depth_buffer[5, 5] == 1.0
        assert r.mask.sum() == 1

    def test_tie_goes_to_lower_index(self):
        colors = np.array([[1.0, 0, 0], [0, 1.0, 0]])
        cloud = cloud_of([[0, 0, 1.0], [0.001, 0, 1.0]], colors)
        r = render(cloud, self.camera, CameraPose.identity())
        assert r.index[5, 5] == 0

    def test_behind_camera_culled(self):
        r = render(cloud_of([[0, 0, -1.0]]), self.camera, CameraPose.identity())
        assert not r.mask.any()

    def test_empty_overlap(self):
        r = render(cloud_of([[100.0, 0, 1.0]]), self.camera, CameraPose.identity())
        assert not r.mask.any() and r.hole_fraction == 1.0

    def test_round_trip(self, scene):
        cam = PinholeCamera.default(96, 80)
        pose = build_primitive(MotionPrimitive("pan", "left", 13, 2))[-1]
        frame = scene.render(cam, pose)
        depth = frame.depth.copy()
        depth[::7, ::5] = 0
        frame = RgbdFrame(frame.color, depth)
        r = render(lift(frame, cam, pose), cam, pose)
        np.testing.assert_array_equal(r.mask, frame.valid)
        np.testing.assert_array_equal(r.color[frame.valid], frame.color[frame.valid])

    @given(st.integers(0, 2**32 - 1), st.integers(1, 3000))
    @settings(max_examples=25, deadline=None)
    def test_matches_brute_force(self, seed, n):
        rng = np.random.default_rng(seed)
        cam = PinholeCamera.default(24, 18)
        pts = rng.uniform([-2, -2, -1], [2, 2, 4], size=(n, 3))
        # force exact depth ties on shared pixels
        pts[n // 2 :] = pts[: n - n // 2] if rng.random() < 0.3 else pts[n // 2 :]
        cloud = cloud_of(pts, rng.random((n, 3)))
        pose = CameraPose.identity()
        r = render(cloud, cam, pose)
        depth, index = brute_force_render(cloud, cam, pose)
        np.testing.assert_array_equal(r.index, index)
        np.testing.assert_array_equal(r.mask, index >= 0)
        np.testing.assert_array_equal(r.depth_buffer[r.mask], depth[r.mask])


def half_masked():
    color = np.random.default_rng(0).random((6, 8, 3))
    mask = np.zeros((6, 8), dtype=bool)
    mask[:, :4] = True
    return RenderResult(color * mask[..., None], mask, mask * 1.0, np.where(mask, 0, -1))


class TestFill:
    def test_all_known_unchanged(self):
        r = half_masked()
        r = RenderResult(r.color, np.ones_like(r.mask), r.depth_buffer, r.index)
        np.testing.assert_array_equal(fill_holes(r, diffusion_filler()), r.color)

    def test_constant(self):
        r = half_masked()
        out = fill_holes(r, constant_filler())
        assert np.all(out[~r.mask] == 0.5)
        np.testing.assert_array_equal(out[r.mask], r.color[r.mask])

    def test_diffusion_single_pixel_hole(self):
        color = np.full((7, 7, 3), 0.3)
        mask = np.ones((7, 7), dtype=bool)
        mask[3, 3] = False
        color[3, 3] = 0.9
        out = diffusion_filler()(color, mask)
        np.testing.assert_allclose(out[3, 3], 0.3, atol=1e-12)

    def test_diffusion_converges_to_harmonic(self):
        # holes between two constant columns relax to a linear ramp
        color = np.zeros((5, 6, 3))
        color[:, 5] = 1.0
        mask = np.zeros((5, 6), dtype=bool)
        mask[:, [0, 5]] = True
        out = diffusion_filler(tol=1e-12, max_iter=100_000)(color, mask)
        np.testing.assert_allclose(out[2, :, 0], np.linspace(0, 1, 6), atol=1e-9)

    @given(st.integers(0, 10_000), st.floats(0, 1))
    @settings(max_examples=30, deadline=None)
    def test_containment(self, seed, frac):
        rng = np.random.default_rng(seed)
        color = rng.random((9, 10, 3))
        mask = rng.random((9, 10)) < frac
        r = RenderResult(color, mask, mask * 1.0, np.where(mask, 0, -1))

        def meddling(c, known, prompt=None):
            return np.ones_like(c)

        for filler in (constant_filler(), diffusion_filler(), meddling):
            out = fill_holes(r, filler)
            np.testing.assert_array_equal(out[mask], color[mask])

    def test_failure_carries_view_index(self):
        def broken(c, known, prompt=None):
            raise RuntimeError("boom")

        with pytest.raises(StageError) as info:
            fill_holes(half_masked(), broken, view_index=4)
        assert info.value.index == 4

    def test_pose_passed_when_accepted(self):
        seen = {}

        def aware(c, known, prompt=None, pose=None):
            seen["pose"] = pose
            return c

        pose = CameraPose.identity()
        fill_holes(half_masked(), aware, pose=pose)
        assert seen["pose"] is pose

    def test_extend_rendered_depth(self):
        r = half_masked()
        depth = extend_rendered_depth(r.color, render=r)
        assert np.all(depth == 1.0)


def _overlap_setup(scene, camera, scale):
    frame = scene.render(camera)
    reference = lift(frame, camera, CameraPose.identity())
    pose = build_primitive(MotionPrimitive("truck", "right", 0.3, 2))[-1]
    pre = render(reference, camera, pose)
    truth = scene.render(camera, pose)
    candidate = RgbdFrame(truth.color, scale * truth.depth)
    return candidate, ~pre.mask, pose, reference, pre


class TestDepthScale:
    def test_exact_depth(self, scene, small_camera):
        cand, holes, pose, ref, _ = _overlap_setup(scene, small_camera, 1.0)
        assert optimize_depth_scale(cand, holes, small_camera, pose, ref) == pytest.approx(1.0, abs=1e-3)

    def test_double_depth_matches_dense_grid(self, scene):
        cam = PinholeCamera.default(40, 40)
        cand, holes, pose, ref, pre = _overlap_setup(scene, cam, 2.0)
        d = optimize_depth_scale(cand, holes, cam, pose, ref)
        assert d == pytest.approx(0.5, rel=0.01)

        # independent dense search using the lift() path
        M = pre.mask & ~holes
        targets = ref.positions[pre.index[M]]
        unit = lift(RgbdFrame(cand.color, np.where(M, cand.depth, 0)), cam, pose).positions
        centre = pose.center
        grid = np.arange(0.25, 4.0 + 1e-12, 1e-4)
        best, best_loss = None, np.inf
        for chunk in np.array_split(grid, 40):
            pts = centre + chunk[:, None, None] * (unit - centre)
            losses = np.abs(pts - targets).sum(axis=(1, 2))
            k = np.argmin(losses)
            if losses[k] < best_loss:
                best, best_loss = chunk[k], losses[k]
        assert d == pytest.approx(best, rel=2e-4)

    @pytest.mark.parametrize("c", [0.5, 0.8, 1.25, 2.0])
    def test_recovers_injected_scale(self, scene, small_camera, c):
        cand, holes, pose, ref, _ = _overlap_setup(scene, small_camera, c)
        assert optimize_depth_scale(cand, holes, small_camera, pose, ref) == pytest.approx(1 / c, rel=0.01)

    def test_no_overlap(self, scene, small_camera):
        cand, holes, pose, ref, _ = _overlap_setup(scene, small_camera, 1.0)
        with pytest.raises(NoOverlapError):
            optimize_depth_scale(cand, np.ones_like(holes), small_camera, pose, ref)


class TestMerge:
    a = cloud_of(np.arange(12.0).reshape(4, 3))
    b = cloud_of(np.ones((2, 3)))

    def test_empty(self):
        assert merge(self.a, PointCloud()) is self.a
        assert merge(PointCloud(), self.a) is self.a

    def test_sizes_add(self):
        m = merge(self.a, self.b)
        assert len(m) == 6
        np.testing.assert_array_equal(m.positions[4:], 1.0)


class TestStageOne:
    def test_identity_trajectory(self, scene, small_camera, small_frame):
        res = stage_one(small_frame, Trajectory.identity(4), small_camera, constant_filler(), scene.depth_provider(small_camera))
        for f in res.frames:
            np.testing.assert_array_equal(f, small_frame.color)
        assert res.cloud_sizes == [64 * 64] * 4
        assert res.hole_fractions == [0.0] * 4

    def test_monotone_and_hole_only(self, scene, small_camera, small_frame):
        tr = build_primitive(MotionPrimitive("zoom", "out", 0.5, 5))
        res = stage_one(small_frame, tr, small_camera, diffusion_filler(), scene.depth_provider(small_camera))
        assert res.cloud_sizes == sorted(res.cloud_sizes)
        for i in range(1, 5):
            added = int((res.cloud.source_view == i).sum())
            assert added == res.cloud_sizes[i] - res.cloud_sizes[i - 1]
            assert added == int((~res.renders[i].mask).sum())

    def test_repeated_pose_adds_no_holes(self, scene, small_camera, small_frame):
        step = build_primitive(MotionPrimitive("pan", "right", 10, 2))
        tr = combine([step, Trajectory.identity(3)], "sequential")
        res = stage_one(small_frame, tr, small_camera, constant_filler(), extend_rendered_depth)
        assert res.hole_fractions[2] <= res.hole_fractions[1]
        assert res.hole_fractions[2] == 0.0

    def test_no_overlap_falls_back(self, scene, small_camera, small_frame):
        tr = build_primitive(MotionPrimitive("pan", "right", 180, 2))
        res = stage_one(small_frame, tr, small_camera, constant_filler(), scene.depth_provider(small_camera))
        assert res.depth_scales[1] == 1.0
        assert res.warnings and "view 1" in res.warnings[0]

    def test_depth_failure_has_view_index(self, small_camera, small_frame):
        def broken(color):
            raise ValueError("no depth")

        tr = build_primitive(MotionPrimitive("truck", "left", 0.3, 3))
        with pytest.raises(StageError) as info:
            stage_one(small_frame, tr, small_camera, constant_filler(), broken)
        assert info.value.index == 1 and info.value.stage == "depth"

    def test_matches_analytic_views(self, scene):
        # texture smoothness is tuned for rasters of 128 px and up
        cam = PinholeCamera.default(128, 128)
        tr = build_primitive(MotionPrimitive("zoom", "out", 0.5, 6))
        res = stage_one(scene.render(cam), tr, cam, scene.filler(cam), scene.depth_provider(cam))
        for frame, pre, pose in zip(res.frames, res.renders, tr):
            truth = scene.render(cam, pose).color
            assert np.abs(frame - truth)[pre.mask].max() < 1 / 255

    def test_return_to_start(self, scene):
        cam = PinholeCamera.default(128, 128)
        frame = scene.render(cam)
        tr = combine(
            [build_primitive(MotionPrimitive("truck", "right", 0.4, 4)), build_primitive(MotionPrimitive("truck", "left", 0.4, 4))],
            "sequential",
        )
        res = stage_one(frame, tr, cam, scene.filler(cam), scene.depth_provider(cam))
        assert np.abs(res.frames[-1] - res.frames[0])[frame.valid].max() < 1 / 255
