import numpy as np
import pytest

from matedit.materials import EditStrength, Material, apply_attribute_edits
from matedit.render import (Camera, GroundPlane, ProceduralSky, Scene,
                            SceneObject, Sphere, primary_object_mask,
                            render_image, trace_path, trace_paths)


class UniformEnv:
    def __init__(self, level=1.0):
        self.level = level

    def radiance(self, dirs):
        return np.full((len(np.atleast_2d(dirs)), 3), self.level)


def _simple_scene(mat=None, env=None, res=16):
    mat = mat or Material(base_color=(0.7, 0.3, 0.2), roughness=0.4, metallic=0.1)
    cam = Camera(position=(0, -3.0, 1.0), look_at=(0, 0, 0), vertical_fov=40,
                 resolution=(res, res))
    return Scene([SceneObject(Sphere((0, 0, 0), 1.0), mat, "sphere")],
                 env or ProceduralSky(), cam)


def test_miss_returns_environment_radiance(rng):
    scene = _simple_scene(env=UniformEnv(2.5))
    out = trace_path(scene, (0, -5, 0), (0, 0, 1), rng)  # points away
    assert out == pytest.approx([2.5, 2.5, 2.5])


def test_black_env_gives_zero(rng):
    scene = _simple_scene(env=UniformEnv(0.0))
    out = trace_paths(scene, np.array([[0, -5.0, 0]]), np.array([[0, 1.0, 0]]), rng)
    assert np.allclose(out, 0.0)


def test_white_furnace_mean_radiance():
    mat = Material(base_color=(1, 1, 1), roughness=1.0, metallic=0.0,
                   transmission=0.0)
    cam = Camera(position=(0, -4, 0), look_at=(0, 0, 0), vertical_fov=35,
                 resolution=(24, 24))
    scene = Scene([SceneObject(Sphere((0, 0, 0), 1.0), mat, "sphere")],
                  UniformEnv(1.0), cam)
    img = render_image(scene, spp=64, seed=1)
    assert img.pixels.mean() == pytest.approx(1.0, abs=0.02)


def test_render_determinism_and_thread_invariance():
    scene = Scene(
        [SceneObject(Sphere((0, 0, 0), 1.0),
                     Material(base_color=(0.7, 0.3, 0.2), roughness=0.3,
                              metallic=0.2), "sphere"),
         SceneObject(GroundPlane(-1.0),
                     Material(base_color=(0.5, 0.5, 0.5), roughness=0.8,
                              metallic=0.0), "ground")],
        ProceduralSky(),
        Camera(position=(0, -3, 1), look_at=(0, 0, 0), vertical_fov=40,
               resolution=(16, 16)))
    a = render_image(scene, spp=12, seed=5)
    b = render_image(scene, spp=12, seed=5)
    c = render_image(scene, spp=12, seed=5, threads=4)
    d = render_image(scene, spp=12, seed=6)
    assert np.array_equal(a.pixels, b.pixels)
    assert np.array_equal(a.pixels, c.pixels)
    assert not np.array_equal(a.pixels, d.pixels)


def test_spp_doubling_halves_variance():
    scene = _simple_scene(res=12)
    seeds = range(8)
    low = np.stack([render_image(scene, spp=8, seed=s).pixels for s in seeds])
    high = np.stack([render_image(scene, spp=16, seed=s).pixels for s in seeds])
    var_low = low.var(axis=0).mean()
    var_high = high.var(axis=0).mean()
    assert var_low / var_high == pytest.approx(2.0, rel=0.2)


def test_smooth_sphere_has_brighter_highlight_than_rough():
    # Mirrors the ground-truth attribute behavior the training data encodes.
    passes = 0
    for trial in range(10):
        r = np.random.default_rng(trial)
        env = ProceduralSky(
            horizon_color=r.uniform(0.3, 0.8, 3),
            zenith_color=r.uniform(0.1, 0.5, 3),
            sun_direction=[r.uniform(-1, 1), r.uniform(-1, 1), r.uniform(0.4, 1)],
            sun_intensity=r.uniform(10, 30))
        base = Material(base_color=tuple(r.uniform(0.2, 0.9, 3)), roughness=0.5,
                        metallic=float(r.uniform(0, 0.5)))
        cam = Camera(position=(0, -3.2, 1.2), look_at=(0, 0, 0),
                     vertical_fov=40, resolution=(32, 32))
        lums = []
        for s_r in (-1.0, 1.0):
            mat = apply_attribute_edits(base, EditStrength(s_r=s_r))
            scene = Scene([SceneObject(Sphere((0, 0, 0), 1.0), mat, "sphere")],
                          env, cam)
            img = render_image(scene, spp=32, seed=100 + trial)
            mask = primary_object_mask(scene)
            lums.append(img.luminance()[mask].max())
        passes += lums[0] > lums[1]
    assert passes >= 9


def test_max_depth_validates():
    scene = _simple_scene()
    with pytest.raises(ValueError):
        trace_paths(scene, np.zeros((1, 3)), np.ones((1, 3)), np.random.default_rng(0),
                    max_depth=0)


def test_scene_requires_objects_and_env():
    cam = Camera(position=(0, -3, 1), look_at=(0, 0, 0), vertical_fov=40,
                 resolution=(16, 16))
    with pytest.raises(ValueError):
        Scene([], ProceduralSky(), cam)
    with pytest.raises(ValueError):
        SceneObject(Sphere((0, 0, 0), 1.0), Material(), "")


def test_primary_object_mask_covers_sphere():
    scene = _simple_scene(res=32)
    mask = primary_object_mask(scene)
    assert mask.any()
    assert mask.mean() < 0.9  # not the whole frame
    # mask is centered-ish on the sphere
    ys, xs = np.nonzero(mask)
    assert abs(xs.mean() - 16) < 4
