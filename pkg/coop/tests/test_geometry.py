import math

import numpy as np
import pytest

from rgf.errors import GeometryError
from rgf.geometry import (
    BevSpec,
    CameraRig,
    GridSectorConfig,
    Pose2,
    Transform2,
    build_sector,
    camera_origin_in_target,
    fov_span_in_target,
    grid_to_world,
    max_radius,
    normalize_angle,
    relative_transform,
    sector_coverage,
    sector_points,
    world_to_grid,
)


def test_normalize_angle():
    assert normalize_angle(math.pi) == math.pi
    assert normalize_angle(-math.pi) == pytest.approx(math.pi)
    assert normalize_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    assert normalize_angle(0.25) == 0.25


def test_pose_yaw_normalized():
    assert Pose2(0.0, 0.0, 5 * math.pi / 2).yaw == pytest.approx(math.pi / 2)


def test_relative_transform_same_pose_is_identity():
    pose = Pose2(3.0, -1.0, 0.7)
    assert relative_transform(pose, pose).is_close(Transform2.identity())


def test_relative_transform_translation():
    t = relative_transform(Pose2(1.0, 0.0, 0.0), Pose2(0.0, 0.0, 0.0))
    assert t.is_close(Transform2.from_yaw(0.0, (1.0, 0.0)))


def test_relative_transform_quarter_turn():
    t = relative_transform(Pose2(0.0, 0.0, math.pi / 2), Pose2())
    assert np.allclose(t.apply([1.0, 0.0]), [0.0, 1.0], atol=1e-12)


def test_relative_transforms_compose_to_identity():
    a, b = Pose2(2.0, 5.0, 1.1), Pose2(-4.0, 0.5, -2.9)
    assert (relative_transform(a, b) @ relative_transform(b, a)).is_close(Transform2.identity(), tol=1e-9)


def test_composition_is_associative():
    rng = np.random.default_rng(0)
    a, b, c = (Transform2.from_yaw(rng.uniform(-3, 3), rng.normal(size=2)) for _ in range(3))
    assert ((a @ b) @ c).is_close(a @ (b @ c), tol=1e-9)


def test_inverse_round_trip():
    t = Transform2.from_yaw(0.4, (1.0, -2.0))
    points = np.array([[0.5, 1.5], [-3.0, 2.0]])
    assert np.allclose(t.inverse().apply(t.apply(points)), points, atol=1e-12)


@pytest.mark.parametrize(
    "t_ij, mount_t, expected",
    [
        (Transform2.identity(), (2.0, 1.0), (2.0, 1.0)),
        (Transform2.from_yaw(0.0, (5.0, 0.0)), (0.0, 0.0), (5.0, 0.0)),
        (Transform2.from_yaw(math.pi / 2), (1.0, 0.0), (0.0, 1.0)),
    ],
)
def test_camera_origin_in_target(t_ij, mount_t, expected):
    mount = Transform2.from_yaw(0.0, mount_t)
    assert np.allclose(camera_origin_in_target(t_ij, mount), expected, atol=1e-12)


def test_fov_span_centered():
    start, span = fov_span_in_target(Transform2.identity(), Transform2.identity(), math.radians(100))
    assert start == pytest.approx(math.radians(-50))
    assert span == pytest.approx(math.radians(100))


def test_fov_span_crosses_branch_cut():
    start, span = fov_span_in_target(Transform2.from_yaw(math.pi), Transform2.identity(), math.radians(90))
    assert start == pytest.approx(math.radians(135))
    assert span == pytest.approx(math.radians(90))


@pytest.mark.parametrize("agent_yaw, mount_yaw", [(0.3, 0.0), (-1.2, 0.5), (2.0, 2.0)])
def test_fov_span_rotation_equivariant(agent_yaw, mount_yaw):
    fov = math.radians(70)
    base, _ = fov_span_in_target(Transform2.identity(), Transform2.identity(), fov)
    start, span = fov_span_in_target(Transform2.from_yaw(agent_yaw), Transform2.from_yaw(mount_yaw), fov)
    assert normalize_angle(start - base - agent_yaw - mount_yaw) == pytest.approx(0.0, abs=1e-12)
    assert span == fov


@pytest.mark.parametrize("fov", [0.0, math.pi, -0.1])
def test_fov_out_of_range(fov):
    with pytest.raises(GeometryError):
        fov_span_in_target(Transform2.identity(), Transform2.identity(), fov)


def test_camera_rig_rejects_bad_fov():
    with pytest.raises(GeometryError):
        CameraRig(Transform2.identity(), math.pi, 8, 4, 4)


def test_max_radius():
    assert max_radius(BevSpec(-102.4, 102.4, -51.2, 51.2, 0.8)) == pytest.approx(math.hypot(204.8, 102.4) / 2)
    assert max_radius(BevSpec(-1.0, 1.0, -1.0, 1.0, 0.5)) == pytest.approx(math.sqrt(2))


@pytest.mark.parametrize("bounds", [(0.0, 0.0, -1.0, 1.0, 0.5), (-1.0, 1.0, -1.0, 1.0, 0.0), (-1.0, 1.0, -1.0, 1.0, 0.3)])
def test_bev_spec_invariants(bounds):
    with pytest.raises(GeometryError):
        BevSpec(*bounds)


def test_bev_spec_extents():
    spec = BevSpec(-25.6, 25.6, -12.8, 12.8, 0.4)
    assert spec.shape == (64, 128)
    assert spec.scaled(2).shape == (32, 64)


def test_single_bin_sector():
    cfg, points = build_sector((1.0, 2.0), 0.2, 0.6, 1, 4.0, 1)
    assert points.shape == (1, 1, 2)
    assert np.allclose(points[0, 0], [1.0 + 2.0 * math.cos(0.5), 2.0 + 2.0 * math.sin(0.5)])
    assert cfg.theta_end == pytest.approx(0.8)


def test_sector_matches_polar_formula():
    rng = np.random.default_rng(3)
    origin = rng.normal(size=2)
    start, span, w2, radius, h = rng.uniform(-3, 3), rng.uniform(0.1, 3), 5, rng.uniform(1, 10), 7
    _, points = build_sector(origin, start, span, w2, radius, h)
    for r in range(h):
        for w in range(w2):
            theta = start + (w + 0.5) / w2 * span
            rho = (r + 0.5) / h * radius
            assert np.allclose(points[r, w], origin + rho * np.array([math.cos(theta), math.sin(theta)]), atol=1e-12)
    offsets = points - origin
    assert (np.hypot(offsets[..., 0], offsets[..., 1]) <= radius).all()


def test_sector_config_rejects_empty_span():
    with pytest.raises(GeometryError):
        GridSectorConfig((0.0, 0.0), 0.0, 0.0, 4, 1.0, 2)


def test_world_to_grid_conventions(spec):
    assert np.allclose(world_to_grid(spec, [spec.x_min + spec.cell / 2, spec.y_min + spec.cell / 2]), [0.0, 0.0])
    assert np.allclose(world_to_grid(spec, [spec.x_min, spec.y_min]), [-0.5, -0.5])
    p = np.array([[1.3, -2.7], [0.0, 3.9]])
    assert np.allclose(grid_to_world(spec, world_to_grid(spec, p)), p, atol=1e-12)


def test_sector_coverage_inside_and_outside(spec):
    cfg, _ = build_sector((0.0, 0.0), -1.0, 2.0, 4, 4.0, 4)
    assert sector_coverage(cfg, spec) == 1.0
    far, _ = build_sector((100.0, 100.0), -1.0, 2.0, 4, 5.0, 4)
    assert sector_coverage(far, spec) == 0.0


def test_sector_coverage_brute_force(spec):
    cfg, _ = build_sector((3.0, 0.0), -0.8, 1.6, 6, 5.0, 5)
    points = sector_points(cfg).reshape(-1, 2)
    inside = [spec.x_min <= x <= spec.x_max and spec.y_min <= y <= spec.y_max for x, y in points]
    assert sector_coverage(cfg, spec) == pytest.approx(sum(inside) / len(inside))
    assert 0.0 < sector_coverage(cfg, spec) < 1.0
