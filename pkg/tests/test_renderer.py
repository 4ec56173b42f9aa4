import numpy as np
import pytest

from radistill.fields import init_field
from radistill.renderer import (Camera, RenderConfig, RenderShapeError, composite, image_rays,
                                orbit_cameras, ray_for_pixel, render_image, render_rays,
                                render_rays_batched, sample_along_ray, transmittance)
from radistill.scenes import AnalyticScene, ConstantFog, SoftBox, get_scene


def _slab_length(o, d):
    with np.errstate(divide="ignore", invalid="ignore"):
        t1, t2 = (-1 - o) / d, (1 - o) / d
    tn = np.minimum(t1, t2).max(axis=1)
    tf = np.maximum(t1, t2).min(axis=1)
    return np.clip(tf - np.maximum(tn, 0), 0, None)


# ---------------------------------------------------------------- cameras and rays

def test_principal_ray_identity_pose():
    cam = Camera(4, 4, 10.0, 10.0, 2.5, 2.5)
    r = ray_for_pixel(cam, 2, 2)
    np.testing.assert_allclose(r.direction, [0, 0, -1], atol=1e-12)
    np.testing.assert_array_equal(r.origin, 0)


def test_image_rays_unit_norm():
    for cam in orbit_cameras(3, width=20, height=12, seed=5):
        _, d = image_rays(cam)
        assert d.shape == (240, 3)
        np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-6)


def test_translation_shifts_origins():
    cam = orbit_cameras(1, width=8, height=8, seed=2)[0]
    shift = np.array([0.3, -1.2, 0.7])
    pose = cam.pose.copy()
    pose[:, 3] += shift
    moved = Camera(cam.width, cam.height, cam.fx, cam.fy, cam.cx, cam.cy, pose)
    o0, d0 = image_rays(cam)
    o1, d1 = image_rays(moved)
    np.testing.assert_array_equal(o1, o0 + shift)
    np.testing.assert_array_equal(d1, d0)


def test_jitter_moves_within_pixel():
    cam = Camera(8, 8, 8.0, 8.0, 4.0, 4.0)
    a = ray_for_pixel(cam, 3, 3, jitter=(0.0, 0.0)).direction
    b = ray_for_pixel(cam, 3, 3, jitter=(0.999, 0.999)).direction
    c = ray_for_pixel(cam, 3, 3).direction
    assert not np.allclose(a, b)
    assert np.dot(c, a) > np.cos(np.deg2rad(10))


def test_out_of_frame_pixel():
    cam = Camera(4, 3, 5.0, 5.0, 2.0, 1.5)
    for i, j in [(4, 0), (-1, 0), (0, 3)]:
        with pytest.raises(IndexError):
            ray_for_pixel(cam, i, j)


def test_camera_validation():
    with pytest.raises(ValueError):
        Camera(4, 4, 0.0, 1.0, 2, 2)
    bad = np.eye(4)[:3].copy()
    bad[0, 0] = 2.0
    with pytest.raises(ValueError):
        Camera(4, 4, 1.0, 1.0, 2, 2, bad)


def test_orbit_cameras_look_at_origin():
    for cam in orbit_cameras(5, radius=4.0, seed=0):
        assert np.linalg.norm(cam.center) == pytest.approx(4.0)
        forward = -cam.pose[:, 2]
        np.testing.assert_allclose(forward, -cam.center / 4.0, atol=1e-12)


# ---------------------------------------------------------------- sampling

def test_bin_centres():
    t, delta = sample_along_ray(1, RenderConfig(n_samples=2, near=0.0, far=1.0))
    np.testing.assert_allclose(t[0], [0.25, 0.75])
    np.testing.assert_allclose(delta[0], [0.5, 0.25])


def test_stratified_samples_bounds_and_seed():
    cfg = RenderConfig(n_samples=16, near=2.0, far=6.0, stratified=True)
    t, delta = sample_along_ray(100, cfg, np.random.default_rng(7))
    assert np.all((t >= 2.0) & (t <= 6.0))
    assert np.all(np.diff(t, axis=1) > 0)
    assert np.all(delta.sum(axis=1) <= 4.0 + delta[:, -1] + 1e-12)
    edges = 2.0 + 0.25 * np.arange(16)
    assert np.all((t >= edges) & (t < edges + 0.25))
    t2, _ = sample_along_ray(100, cfg, np.random.default_rng(7))
    np.testing.assert_array_equal(t, t2)
    with pytest.raises(ValueError):
        sample_along_ray(1, cfg)


def test_render_config_validation():
    with pytest.raises(ValueError):
        RenderConfig(near=3.0, far=2.0)
    with pytest.raises(ValueError):
        RenderConfig(n_samples=1)


# ---------------------------------------------------------------- compositing

def test_transparent_ray():
    pix, acc, _ = composite(np.zeros(5), np.ones((5, 3)), np.full(5, 0.2))
    np.testing.assert_array_equal(pix, 0)
    assert acc == 0


def test_opaque_single_sample():
    c = np.array([[0.2, 0.5, 0.9]])
    pix, acc, _ = composite(np.array([50.0]), c, np.array([1.0]))
    np.testing.assert_allclose(pix, c[0], atol=1e-20 + 1e-12)
    assert acc == pytest.approx(1 - np.exp(-50))


def test_constant_medium_closed_form():
    n = 256
    pix, acc, _ = composite(np.full(n, 2.0), np.full((n, 3), 0.3), np.full(n, 1.0 / n))
    assert abs(acc - (1 - np.exp(-2))) <= 1e-3
    np.testing.assert_allclose(pix, 0.3 * acc, atol=1e-12)


def test_background_fills_remaining():
    pix, acc, _ = composite(np.array([0.5, 0.5]), np.zeros((2, 3)), np.array([1.0, 1.0]),
                            background=(1.0, 0.5, 0.0))
    np.testing.assert_allclose(pix, (1 - acc) * np.array([1.0, 0.5, 0.0]))


def test_negative_density_is_transparent():
    pix, acc, _ = composite(np.array([-5.0, -1.0]), np.ones((2, 3)), np.array([1.0, 1.0]))
    assert acc == 0


def test_composite_shape_errors():
    with pytest.raises(RenderShapeError):
        composite(np.zeros(3), np.zeros((4, 3)), np.zeros(3))
    with pytest.raises(RenderShapeError):
        composite(np.zeros(3), np.zeros((3, 3)), np.zeros(2))


def test_transmittance_and_weight_invariants(rng):
    sig = rng.uniform(-3, 10, (50, 32))
    delta = rng.uniform(0.01, 0.3, (50, 32))
    T = transmittance(sig, delta)
    assert np.all(T[:, 0] == 1)
    assert np.all(np.diff(T, axis=1) <= 0)
    assert np.all((T > 0) & (T <= 1))
    _, acc, _ = composite(sig, rng.random((50, 32, 3)), delta)
    w = T * (1 - np.exp(-np.maximum(sig, 0) * delta))
    assert np.all(w >= 0)
    np.testing.assert_allclose(acc, w.sum(axis=1), atol=1e-12)
    assert np.all(acc <= 1 + 1e-12)


# ---------------------------------------------------------------- field rendering

def test_empty_field_renders_background():
    cfg = RenderConfig(n_samples=16, background=(0.1, 0.2, 0.3))
    cam = orbit_cameras(1, width=6, height=6, seed=0)[0]
    empty = AnalyticScene("empty", (ConstantFog(0.0),))
    rgb, _ = render_image(empty, cam, cfg)
    np.testing.assert_allclose(rgb, np.broadcast_to([0.1, 0.2, 0.3], rgb.shape), atol=1e-15)


def test_fog_from_inside_closed_form():
    # camera at the centre of a fog-filled cube; every ray stays inside for t <= 1
    cam = Camera.look_at((0.0, 0.0, 0.0), target=(1.0, 0.3, 0.2), width=16, height=16)
    cfg = RenderConfig(n_samples=256, near=0.0, far=1.0, background=(1.0, 1.0, 1.0))
    rgb, _ = render_image(get_scene("fog"), cam, cfg)
    a = 1 - np.exp(-2.0)
    assert np.abs(rgb - (0.6 * a + (1 - a))).max() <= 2e-3


def test_fog_through_cube_converges():
    cam = orbit_cameras(1, width=24, height=24, seed=3)[0]
    o, d = image_rays(cam)
    a = 1 - np.exp(-2.0 * _slab_length(o, d))
    ref = 0.6 * a[:, None] + (1 - a)[:, None]
    errs = [np.abs(render_rays_batched(get_scene("fog"), o, d, RenderConfig(n_samples=n))["rgb"] - ref).max()
            for n in (64, 256, 1024)]
    # the density step at the cube faces limits convergence to first order
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] <= 2e-3


def test_sphere_quadrature_refinement():
    cam = orbit_cameras(1, width=32, height=32, seed=4)[0]
    sc = get_scene("sphere")
    coarse, _ = render_image(sc, cam, RenderConfig(n_samples=256))
    fine, _ = render_image(sc, cam, RenderConfig(n_samples=1024))
    mid, _ = render_image(sc, cam, RenderConfig(n_samples=64))
    assert np.abs(coarse - fine).max() <= 1e-2
    assert np.abs(coarse - fine).max() < np.abs(mid - fine).max()


def test_depth_of_opaque_plane():
    # a thin dense slab at z = 0.25 seen from straight above
    plane = AnalyticScene("plane", (SoftBox(center=(0, 0, 0.25), half_size=(1.0, 1.0, 0.02),
                                            sigma=1e4, softness=1e-3),))
    cam = Camera.look_at((0.0, 0.0, 4.0), up=(0.0, 1.0, 0.0), width=8, height=8, fov_x=np.deg2rad(5))
    cfg = RenderConfig(n_samples=256)
    o, d = image_rays(cam)
    r = render_rays_batched(plane, o, d, cfg)
    expected = (4.0 - 0.27) / -d[:, 2]
    spacing = (cfg.far - cfg.near) / cfg.n_samples
    assert np.all(np.abs(r["depth"] - expected) <= spacing)
    assert np.all(r["acc"] > 0.999)


def test_outside_points_not_evaluated():
    class Spy:
        dtype = np.float64

        def __init__(self):
            self.max_abs = 0.0

        def forward(self, x, d):
            from radistill.autograd import Tensor
            self.max_abs = max(self.max_abs, np.abs(x).max())
            return Tensor(np.ones(len(x))), Tensor(np.zeros((len(x), 3)))
    spy = Spy()
    cam = orbit_cameras(1, width=8, height=8, seed=0)[0]
    render_image(spy, cam, RenderConfig(n_samples=32))
    assert 0 < spy.max_abs <= 1.0


def test_batch_of_one_matches_image():
    field = init_field("hash", seed=1)
    field.params.values[:] = np.random.default_rng(0).normal(0, 0.5, len(field.params)).astype(np.float32)
    cam = orbit_cameras(1, width=6, height=5, seed=1)[0]
    cfg = RenderConfig(n_samples=32)
    img, depth = render_image(field, cam, cfg)
    for j, i in [(0, 0), (2, 3), (4, 5)]:
        r = ray_for_pixel(cam, i, j)
        one = render_rays_batched(field, r.origin[None], r.direction[None], cfg)
        assert one["rgb"][0].tobytes() == img[j, i].tobytes()
        assert one["depth"][0].tobytes() == depth[j, i].tobytes()


def test_batch_permutation_and_chunking():
    field = init_field("vm", seed=2)
    field.params.values[:] = np.random.default_rng(1).normal(0, 0.5, len(field.params)).astype(np.float32)
    cam = orbit_cameras(1, width=10, height=10, seed=2)[0]
    o, d = image_rays(cam)
    cfg = RenderConfig(n_samples=24)
    base = render_rays_batched(field, o, d, cfg)
    perm = np.random.default_rng(3).permutation(len(o))
    shuf = render_rays_batched(field, o[perm], d[perm], cfg)
    np.testing.assert_array_equal(shuf["rgb"], base["rgb"][perm])
    small = render_rays_batched(field, o, d, cfg, chunk_points=24 * 7)
    np.testing.assert_array_equal(small["rgb"], base["rgb"])
    assert set(base) >= {"rgb", "acc", "depth", "sigma", "color", "t"}


def test_render_rays_graph_and_empty_batch():
    field = init_field("grid", seed=0)
    cam = orbit_cameras(1, width=4, height=4, seed=0)[0]
    o, d = image_rays(cam)
    out = render_rays(field, o, d, RenderConfig(n_samples=8))
    assert out["rgb"].requires_grad
    with pytest.raises(RenderShapeError):
        render_rays_batched(field, np.zeros((0, 3)), np.zeros((0, 3)), RenderConfig())
