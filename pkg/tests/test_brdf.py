import numpy as np
import pytest
from scipy.stats import chisquare

from matedit.materials import Material
from matedit.render.brdf import (ShadingParams, eval_brdf, eval_brdf_arrays,
                                 fresnel_dielectric, ggx_ndf,
                                 sample_brdf, sample_brdf_arrays,
                                 sample_cosine_hemisphere, shading_params)
from matedit.render.geometry import normalize

UP = np.array([0.0, 0.0, 1.0])


def _random_upper_dir(rng):
    v = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.05, 1)])
    return normalize(v)


def _uniform_hemisphere(rng, n):
    z = rng.random(n)
    phi = 2 * np.pi * rng.random(n)
    r = np.sqrt(np.clip(1 - z * z, 0, 1))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def test_black_albedo_leaves_only_fresnel_lobe(rng):
    mat = Material(base_color=(0.0, 0.0, 0.0), roughness=0.4, metallic=0.0,
                   transmission=0.0)
    wi = _random_upper_dir(rng)
    wo = _random_upper_dir(rng)
    val = eval_brdf(mat, UP, wi, wo)
    # No diffuse term; the specular lobe carries roughly the 0.04 F0.
    h = normalize(wi + wo)
    from matedit.render.brdf import schlick_fresnel, smith_g2
    f = schlick_fresnel(np.array([wo @ h]), np.array([0.04]))[0]
    d = ggx_ndf(np.array([h[2]]), np.array([0.4**2]))[0]
    g = smith_g2(np.array([wi[2]]), np.array([wo[2]]), np.array([0.4**2]))[0]
    expected = f * d * g / (4 * wi[2] * wo[2])
    assert val == pytest.approx([expected] * 3, rel=1e-9)


def test_metallic_one_has_no_diffuse(rng):
    from matedit.render.brdf import schlick_fresnel, smith_g2
    mat = Material(base_color=(0.9, 0.5, 0.2), roughness=0.6, metallic=1.0)
    wi = _random_upper_dir(rng)
    wo = _random_upper_dir(rng)
    val = eval_brdf(mat, UP, wi, wo)
    # the full value equals the bare microfacet lobe: no diffuse remains
    h = normalize(wi + wo)
    f = schlick_fresnel(np.array([wo @ h]), np.asarray(mat.base_color)[None, :])[0]
    d = ggx_ndf(np.array([h[2]]), np.array([0.6**2]))[0]
    g = smith_g2(np.array([wi[2]]), np.array([wo[2]]), np.array([0.6**2]))[0]
    expected = f * d * g / (4 * wi[2] * wo[2])
    assert val == pytest.approx(expected, rel=1e-9)


def test_degenerate_normal_rejected():
    with pytest.raises(ValueError):
        eval_brdf(Material(), (0, 0, 0), UP, UP)


def test_helmholtz_reciprocity_1000_samples():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        mat = Material(base_color=tuple(rng.uniform(0, 1, 3)),
                       roughness=float(rng.uniform(0.05, 1.0)),
                       metallic=float(rng.uniform(0, 1)), transmission=0.0)
        wi = _random_upper_dir(rng)
        wo = _random_upper_dir(rng)
        a = eval_brdf(mat, UP, wi, wo)
        b = eval_brdf(mat, UP, wo, wi)
        worst = max(worst, float(np.abs(a - b).max()))
    assert worst < 1e-6


def test_directional_albedo_never_exceeds_one():
    # Monte-Carlo hemisphere quadrature with >= 1e6 samples per material.
    rng = np.random.default_rng(42)
    n = 1_000_000
    wi = _uniform_hemisphere(rng, n)
    normals = np.broadcast_to(UP, (n, 3))
    for trial in range(100):
        mat = Material(base_color=tuple(rng.uniform(0.3, 1.0, 3)),
                       roughness=float(rng.uniform(0.03, 1.0)),
                       metallic=float(rng.uniform(0, 1)),
                       transmission=float(rng.choice([0.0, 0.0, 0.5])))
        p = shading_params(mat, np.zeros((n, 3)))
        wo = np.broadcast_to(_random_upper_dir(rng), (n, 3))
        f = eval_brdf_arrays(p, normals, wi, wo)
        albedo = (f * wi[:, 2:3]).mean(axis=0) * 2 * np.pi
        assert albedo.max() <= 1.0 + 1e-9, f"trial {trial}: albedo {albedo}"


def test_white_furnace_albedo_close_to_one():
    rng = np.random.default_rng(3)
    n = 1_000_000
    wi = _uniform_hemisphere(rng, n)
    normals = np.broadcast_to(UP, (n, 3))
    mat = Material(base_color=(1.0, 1.0, 1.0), roughness=1.0, metallic=0.0)
    p = shading_params(mat, np.zeros((n, 3)))
    for mu in (0.9, 0.4, 0.1):
        wo = np.broadcast_to(normalize(np.array([np.sqrt(1 - mu**2), 0, mu])), (n, 3))
        f = eval_brdf_arrays(p, normals, wi, wo)
        albedo = (f * wi[:, 2:3]).mean(axis=0) * 2 * np.pi
        assert albedo.mean() == pytest.approx(1.0, abs=0.02)


def test_ggx_ndf_projected_normalization_1e6():
    # integral of D(h) cos(theta) over the hemisphere must be 1.
    rng = np.random.default_rng(9)
    n = 1_000_000
    h = _uniform_hemisphere(rng, n)
    for roughness in (0.1, 0.35, 0.7, 1.0):
        alpha = np.full(n, roughness**2)
        integral = (ggx_ndf(h[:, 2], alpha) * h[:, 2]).mean() * 2 * np.pi
        assert integral == pytest.approx(1.0, rel=0.01)


def test_cosine_sampler_chi_square():
    rng = np.random.default_rng(11)
    n = 100_000
    nrm = np.broadcast_to(UP, (n, 3))
    dirs = sample_cosine_hemisphere(nrm, rng.random(n), rng.random(n))
    # For cosine-weighted sampling, cos^2(theta) is uniform on [0, 1].
    u = dirs[:, 2] ** 2
    counts, _ = np.histogram(u, bins=20, range=(0, 1))
    stat, pvalue = chisquare(counts)
    assert pvalue > 0.01


def test_snell_refraction_closed_form():
    mat = Material(base_color=(1, 1, 1), roughness=0.0, metallic=0.0,
                   transmission=1.0, ior=1.5)
    theta_i = np.radians(30.0)
    wo = np.array([np.sin(theta_i), 0.0, np.cos(theta_i)])
    rng = np.random.default_rng(0)
    expected = np.arcsin(np.sin(theta_i) / 1.5)
    saw_refraction = False
    for _ in range(64):
        wi, pdf, tp = sample_brdf(mat, UP, wo, rng)
        assert pdf > 0
        if wi[2] < 0:  # transmitted ray
            saw_refraction = True
            angle = np.arccos(np.clip(-wi[2], -1, 1))
            assert abs(angle - expected) < 1e-9
            assert wi[1] == pytest.approx(0.0, abs=1e-12)
    assert saw_refraction


def test_total_internal_reflection_falls_back_to_reflection():
    # Exiting glass at a grazing angle: eta = 1/1.5, incidence 60 deg.
    mat = Material(base_color=(1, 1, 1), roughness=0.0, metallic=0.0,
                   transmission=1.0, ior=1.5)
    p = shading_params(mat, np.zeros((1, 3)))
    p.ior = np.array([1.0 / 1.5])  # as the tracer does for inside hits
    theta = np.radians(60.0)
    wo = np.array([[np.sin(theta), 0.0, np.cos(theta)]])
    rng = np.random.default_rng(0)
    for _ in range(16):
        wi, _, _ = sample_brdf_arrays(p, UP[None, :], wo, rng)
        mirror = np.array([-np.sin(theta), 0.0, np.cos(theta)])
        assert np.allclose(wi[0], mirror, atol=1e-12)


def test_smooth_metal_samples_mirror_direction():
    mat = Material(base_color=(0.9, 0.7, 0.3), roughness=0.0, metallic=1.0)
    rng = np.random.default_rng(2)
    wo = normalize(np.array([0.4, -0.2, 0.8]))
    for _ in range(8):
        wi, pdf, tp = sample_brdf(mat, UP, wo, rng)
        mirror = np.array([-wo[0], -wo[1], wo[2]])
        assert np.allclose(wi, mirror, atol=1e-12)
        assert np.all(tp >= 0)


def test_importance_sampling_identity():
    # E[throughput] over sample_brdf must match the quadrature of eval*cos.
    rng = np.random.default_rng(21)
    n = 400_000
    for _ in range(4):
        mat = Material(base_color=tuple(rng.uniform(0.3, 0.9, 3)),
                       roughness=float(rng.uniform(0.2, 0.9)),
                       metallic=float(rng.uniform(0, 1)), transmission=0.0)
        wo_single = _random_upper_dir(rng)
        p = shading_params(mat, np.zeros((n, 3)))
        nrm = np.broadcast_to(UP, (n, 3))
        wo = np.broadcast_to(wo_single, (n, 3))
        _, _, tp = sample_brdf_arrays(p, nrm, wo, rng)
        sampled = tp.mean(axis=0)
        wi = _uniform_hemisphere(rng, n)
        f = eval_brdf_arrays(shading_params(mat, np.zeros((n, 3))), nrm, wi, wo)
        quadrature = (f * wi[:, 2:3]).mean(axis=0) * 2 * np.pi
        assert sampled == pytest.approx(quadrature, rel=0.03, abs=0.005)


def test_fresnel_dielectric_normal_incidence():
    f = fresnel_dielectric(np.array([1.0]), np.array([1.5]))
    assert f[0] == pytest.approx(((1.5 - 1) / (1.5 + 1)) ** 2, rel=1e-12)
