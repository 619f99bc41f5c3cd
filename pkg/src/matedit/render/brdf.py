"""Metallic-roughness BRDF: Lambertian diffuse + GGX microfacet specular with
Schlick Fresnel, plus a dielectric transmission branch.

The diffuse lobe is weighted by the specular lobe's directional albedo
(tabulated per roughness/angle) in the reciprocal form
(1 - E(mu_i)) (1 - E(mu_o)) / (1 - E_avg), so the combined reflectance never
exceeds 1 and a white Lambertian-limit material passes a furnace test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import normalize
from ..materials import Checker, Material

F0_DIELECTRIC = 0.04
ALPHA_MIN = 1e-4
SMOOTH_ROUGHNESS = 1e-3   # below this the specular/transmission lobes are deltas
_TABLE_SEED = 20240117
_TABLE_MARGIN = 0.005     # inflate tabulated albedo so energy errs on the low side


def luminance(rgb: np.ndarray) -> np.ndarray:
    return rgb @ np.array([0.2126, 0.7152, 0.0722])


# --- Microfacet pieces --------------------------------------------------------

def ggx_ndf(cos_h: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    a2 = alpha * alpha
    c2 = np.clip(cos_h, 0.0, 1.0) ** 2
    denom = c2 * (a2 - 1.0) + 1.0
    return a2 / np.maximum(np.pi * denom * denom, 1e-30)


def smith_g2(mu_i: np.ndarray, mu_o: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    a2 = alpha * alpha
    li = np.sqrt(a2 + (1 - a2) * mu_i**2)
    lo = np.sqrt(a2 + (1 - a2) * mu_o**2)
    return 2.0 * mu_i * mu_o / np.maximum(mu_o * li + mu_i * lo, 1e-12)


def schlick_fresnel(cos_theta: np.ndarray, f0: np.ndarray) -> np.ndarray:
    w = (1.0 - np.clip(cos_theta, 0.0, 1.0)) ** 5
    if f0.ndim == cos_theta.ndim:
        return f0 + (1.0 - f0) * w
    return f0 + (1.0 - f0) * w[..., None]


def fresnel_dielectric(cos_i: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Exact unpolarized Fresnel reflectance; eta = n_transmitted / n_incident."""
    cos_i = np.clip(cos_i, 0.0, 1.0)
    sin_t2 = (1.0 - cos_i**2) / np.maximum(eta**2, 1e-12)
    total = sin_t2 >= 1.0
    cos_t = np.sqrt(np.clip(1.0 - sin_t2, 0.0, 1.0))
    rs = (cos_i - eta * cos_t) / np.maximum(cos_i + eta * cos_t, 1e-12)
    rp = (cos_t - eta * cos_i) / np.maximum(cos_t + eta * cos_i, 1e-12)
    f = 0.5 * (rs * rs + rp * rp)
    return np.where(total, 1.0, f)


# --- Specular directional-albedo tables ---------------------------------------

@lru_cache(maxsize=1)
def _albedo_tables():
    """W(mu, alpha) and K(mu, alpha) so E = F0 (W - K) + K, plus cosine means.

    W integrates D*G2/(4 mu_o) over the hemisphere (Fresnel = 1); K is the same
    with the Schlick (1-c)^5 weight.  MC with NDF sampling, fixed seed.
    """
    n_alpha, n_mu, n_samp = 32, 32, 8192
    alphas = np.linspace(ALPHA_MIN, 1.0, n_alpha)
    mus = np.linspace(0.02, 1.0, n_mu)
    rng = np.random.default_rng(_TABLE_SEED)
    W = np.zeros((n_mu, n_alpha))
    K = np.zeros((n_mu, n_alpha))
    for ai, alpha in enumerate(alphas):
        u1 = rng.random((n_mu, n_samp))
        u2 = rng.random((n_mu, n_samp))
        cos_h = np.sqrt((1 - u1) / (1 + (alpha**2 - 1) * u1))
        sin_h = np.sqrt(np.clip(1 - cos_h**2, 0, 1))
        phi = 2 * np.pi * u2
        hx, hy, hz = sin_h * np.cos(phi), sin_h * np.sin(phi), cos_h
        mu_o = mus[:, None]
        sin_o = np.sqrt(np.clip(1 - mu_o**2, 0, 1))
        # wo in the local frame, h sampled around +z
        wo_dot_h = sin_o * hx + mu_o * hz
        wi_z = 2 * wo_dot_h * hz - mu_o
        valid = (wi_z > 1e-6) & (wo_dot_h > 1e-6)
        g2 = smith_g2(np.clip(wi_z, 1e-6, 1), np.broadcast_to(mu_o, wi_z.shape), alpha)
        est = np.where(valid, g2 * wo_dot_h / np.maximum(mu_o * cos_h, 1e-9), 0.0)
        W[:, ai] = est.mean(axis=1)
        K[:, ai] = (est * (1 - wo_dot_h) ** 5).mean(axis=1)
    W = np.clip(W, 0.0, 1.0)
    K = np.clip(K, 0.0, W)
    # Cosine-weighted means over mu for the reciprocal normalizer.
    w_mu = 2 * mus
    W_avg = np.trapezoid(W * w_mu[:, None], mus, axis=0)
    K_avg = np.trapezoid(K * w_mu[:, None], mus, axis=0)
    return mus, alphas, W, K, np.clip(W_avg, 0, 1), np.clip(K_avg, 0, 1)


def _bilerp(table, mus, alphas, mu, alpha):
    mi = np.clip(np.searchsorted(mus, mu) - 1, 0, len(mus) - 2)
    ai = np.clip(np.searchsorted(alphas, alpha) - 1, 0, len(alphas) - 2)
    fm = np.clip((mu - mus[mi]) / (mus[mi + 1] - mus[mi]), 0, 1)
    fa = np.clip((alpha - alphas[ai]) / (alphas[ai + 1] - alphas[ai]), 0, 1)
    t00 = table[mi, ai]; t10 = table[mi + 1, ai]
    t01 = table[mi, ai + 1]; t11 = table[mi + 1, ai + 1]
    return (t00 * (1 - fm) * (1 - fa) + t10 * fm * (1 - fa)
            + t01 * (1 - fm) * fa + t11 * fm * fa)


def specular_albedo(mu: np.ndarray, alpha: np.ndarray, f0: np.ndarray) -> np.ndarray:
    """Directional albedo of the GGX+Schlick lobe; f0 may be (N, 3)."""
    mus, alphas, W, K, _, _ = _albedo_tables()
    w = _bilerp(W, mus, alphas, mu, alpha)
    k = _bilerp(K, mus, alphas, mu, alpha)
    if f0.ndim == 2:
        w = w[:, None]; k = k[:, None]
    return np.clip(f0 * (w - k) + k + _TABLE_MARGIN, 0.0, 1.0)


def specular_albedo_avg(alpha: np.ndarray, f0: np.ndarray) -> np.ndarray:
    mus, alphas, _, _, W_avg, K_avg = _albedo_tables()
    ai = np.clip(np.searchsorted(alphas, alpha) - 1, 0, len(alphas) - 2)
    fa = np.clip((alpha - alphas[ai]) / (alphas[ai + 1] - alphas[ai]), 0, 1)
    w = W_avg[ai] * (1 - fa) + W_avg[ai + 1] * fa
    k = K_avg[ai] * (1 - fa) + K_avg[ai + 1] * fa
    if f0.ndim == 2:
        w = w[:, None]; k = k[:, None]
    return np.clip(f0 * (w - k) + k + _TABLE_MARGIN, 0.0, 0.98)


# --- Material evaluation at hit points -----------------------------------------

@dataclass
class ShadingParams:
    """Material channels evaluated per shading point."""

    base: np.ndarray      # (N, 3)
    roughness: np.ndarray  # (N,)
    metallic: np.ndarray   # (N,)
    transmission: np.ndarray  # (N,)
    ior: np.ndarray        # (N,)

    @property
    def alpha(self) -> np.ndarray:
        return np.clip(self.roughness**2, ALPHA_MIN, 1.0)

    @property
    def f0(self) -> np.ndarray:
        m = self.metallic[:, None]
        return F0_DIELECTRIC * (1 - m) + self.base * m


def shading_params(material: Material, points: np.ndarray) -> ShadingParams:
    points = np.atleast_2d(points)
    n = len(points)

    def channel(value, width):
        if isinstance(value, Checker):
            out = value.eval_at(points)
            return out if width == 3 else np.asarray(out, dtype=np.float64)
        arr = np.asarray(value, dtype=np.float64)
        if width == 3:
            return np.broadcast_to(arr, (n, 3)).copy()
        return np.full(n, float(arr))

    return ShadingParams(
        base=channel(material.base_color, 3),
        roughness=channel(material.roughness, 1),
        metallic=channel(material.metallic, 1),
        transmission=np.full(n, material.transmission),
        ior=np.full(n, material.ior),
    )


def _diffuse_weight(p: ShadingParams, mu_i, mu_o) -> np.ndarray:
    """Reciprocal energy-compensated diffuse factor, shape (N, 3)."""
    e_i = specular_albedo(mu_i, p.alpha, p.f0)
    e_o = specular_albedo(mu_o, p.alpha, p.f0)
    e_avg = specular_albedo_avg(p.alpha, p.f0)
    w = (1 - e_i) * (1 - e_o) / (1 - e_avg)
    scale = ((1 - p.metallic) * (1 - p.transmission))[:, None]
    return np.clip(w, 0.0, 1.0) * scale


def eval_brdf_arrays(p: ShadingParams, normals, w_in, w_out) -> np.ndarray:
    """Reflective BRDF value (N, 3); delta lobes contribute zero."""
    mu_i = np.einsum("ij,ij->i", normals, w_in)
    mu_o = np.einsum("ij,ij->i", normals, w_out)
    upper = (mu_i > 1e-7) & (mu_o > 1e-7)
    mu_i_c = np.clip(mu_i, 1e-7, 1.0)
    mu_o_c = np.clip(mu_o, 1e-7, 1.0)

    diffuse = p.base / np.pi * _diffuse_weight(p, mu_i_c, mu_o_c)

    h = normalize(w_in + w_out)
    cos_h = np.einsum("ij,ij->i", normals, h)
    oh = np.clip(np.einsum("ij,ij->i", w_out, h), 0.0, 1.0)
    d = ggx_ndf(cos_h, p.alpha)
    g = smith_g2(mu_i_c, mu_o_c, p.alpha)
    f = schlick_fresnel(oh, p.f0)
    spec = f * (d * g / (4.0 * mu_i_c * mu_o_c))[:, None]
    rough_enough = (p.roughness >= SMOOTH_ROUGHNESS)[:, None]
    out = (diffuse + np.where(rough_enough, spec, 0.0)) * upper[:, None]
    return out


def eval_brdf(material: Material, normal, incoming_dir, outgoing_dir) -> np.ndarray:
    """Reflectance density for single direction vectors (RGB)."""
    normal = np.asarray(normal, dtype=np.float64)
    if np.linalg.norm(normal) < 1e-9:
        raise ValueError("degenerate normal")
    n = normalize(normal.reshape(1, 3))
    wi = normalize(np.asarray(incoming_dir, dtype=np.float64).reshape(1, 3))
    wo = normalize(np.asarray(outgoing_dir, dtype=np.float64).reshape(1, 3))
    p = shading_params(material, np.zeros((1, 3)))
    return eval_brdf_arrays(p, n, wi, wo)[0]


# --- Sampling -------------------------------------------------------------------

def tangent_frame(n: np.ndarray):
    """Orthonormal (t1, t2) per normal; branchless Duff et al. construction."""
    sign = np.copysign(1.0, n[:, 2])
    a = -1.0 / (sign + n[:, 2])
    b = n[:, 0] * n[:, 1] * a
    t1 = np.stack([1.0 + sign * n[:, 0] ** 2 * a, sign * b, -sign * n[:, 0]], axis=1)
    t2 = np.stack([b, sign + n[:, 1] ** 2 * a, -n[:, 1]], axis=1)
    return t1, t2


def sample_cosine_hemisphere(n: np.ndarray, u1: np.ndarray, u2: np.ndarray):
    t1, t2 = tangent_frame(n)
    r = np.sqrt(u1)
    phi = 2 * np.pi * u2
    x = r * np.cos(phi)
    y = r * np.sin(phi)
    z = np.sqrt(np.clip(1 - u1, 0.0, 1.0))
    return x[:, None] * t1 + y[:, None] * t2 + z[:, None] * n


def _sample_ggx_h(n, alpha, u1, u2):
    cos_h = np.sqrt((1 - u1) / (1 + (alpha**2 - 1) * u1))
    sin_h = np.sqrt(np.clip(1 - cos_h**2, 0, 1))
    phi = 2 * np.pi * u2
    t1, t2 = tangent_frame(n)
    return (sin_h * np.cos(phi))[:, None] * t1 + (sin_h * np.sin(phi))[:, None] * t2 \
        + cos_h[:, None] * n


def _reflect(w, n):
    return 2 * np.einsum("ij,ij->i", w, n)[:, None] * n - w


def _refract(wo, n, eta):
    """Refract the direction opposite to wo across n; eta = n_t/n_i.

    Returns (direction, total_internal_reflection mask)."""
    cos_i = np.clip(np.einsum("ij,ij->i", wo, n), -1.0, 1.0)
    sin_t2 = (1 - cos_i**2) / eta**2
    tir = sin_t2 >= 1.0
    cos_t = np.sqrt(np.clip(1 - sin_t2, 0.0, 1.0))
    wt = (-wo + (cos_i[:, None] * n)) / eta[:, None] - cos_t[:, None] * n
    return normalize(wt), tir


def _pdf_spec(normals, w_in, w_out, alpha):
    h = normalize(w_in + w_out)
    cos_h = np.clip(np.einsum("ij,ij->i", normals, h), 0.0, 1.0)
    oh = np.clip(np.einsum("ij,ij->i", w_out, h), 1e-7, 1.0)
    return ggx_ndf(cos_h, alpha) * cos_h / (4.0 * oh)


def sample_brdf_arrays(p: ShadingParams, normals, w_out, rng: np.random.Generator):
    """Sample continuation directions for a batch of shading points.

    Returns (w_in, pdf, throughput) where throughput already includes
    f * cos / pdf (and lobe-choice weights for delta events).
    """
    n_pts = len(normals)
    mu_o = np.clip(np.einsum("ij,ij->i", normals, w_out), 1e-7, 1.0)
    alpha = p.alpha
    smooth = p.roughness < SMOOTH_ROUGHNESS

    f0_mean = p.f0.mean(axis=1)
    w_spec = np.clip(schlick_fresnel(mu_o, f0_mean), 0.04, 1.0)
    w_diff = p.base.mean(axis=1) * (1 - p.metallic) * (1 - p.transmission)
    p_trans = p.transmission
    denom = np.maximum(w_spec + w_diff, 1e-9)
    p_spec = (1 - p_trans) * w_spec / denom
    p_diff = (1 - p_trans) - p_spec

    u_lobe = rng.random(n_pts)
    u1 = rng.random(n_pts)
    u2 = rng.random(n_pts)
    u_fresnel = rng.random(n_pts)

    take_trans = u_lobe < p_trans
    take_spec = (~take_trans) & (u_lobe < p_trans + p_spec)
    take_diff = ~(take_trans | take_spec)

    w_in = np.zeros((n_pts, 3))
    pdf = np.ones(n_pts)
    throughput = np.zeros((n_pts, 3))

    # Reflection lobes share one mixture pdf so either choice is unbiased.
    refl = take_spec | take_diff
    if refl.any():
        idx = np.nonzero(refl)[0]
        nn, wo = normals[idx], w_out[idx]
        wi = np.zeros((len(idx), 3))
        s_local = take_spec[idx]
        if s_local.any():
            j = np.nonzero(s_local)[0]
            h = _sample_ggx_h(nn[j], alpha[idx][j], u1[idx][j], u2[idx][j])
            wi[j] = _reflect(wo[j], h)
        if (~s_local).any():
            j = np.nonzero(~s_local)[0]
            wi[j] = sample_cosine_hemisphere(nn[j], u1[idx][j], u2[idx][j])
        mu_i = np.einsum("ij,ij->i", nn, wi)
        good = mu_i > 1e-6
        pdf_d = np.clip(mu_i, 0, 1) / np.pi
        pdf_s = _pdf_spec(nn, wi, wo, alpha[idx])
        sm = smooth[idx]
        mix = p_diff[idx] * pdf_d + np.where(sm, 0.0, p_spec[idx] * pdf_s)
        # Delta specular: mirror reflection with Fresnel throughput.
        if (sm & s_local).any():
            j = np.nonzero(sm & s_local)[0]
            wi[j] = _reflect(wo[j], nn[j])
            f = schlick_fresnel(np.clip(mu_o[idx][j], 0, 1), p.f0[idx][j])
            sub = idx[j]
            w_in[sub] = wi[j]
            throughput[sub] = f / p_spec[idx][j][:, None]
            pdf[sub] = p_spec[idx][j]
        rough_rows = ~(sm & s_local)
        if rough_rows.any():
            j = np.nonzero(rough_rows)[0]
            sub = idx[j]
            ok = good[j] & (mix[j] > 1e-12)
            pp = ShadingParams(p.base[sub], p.roughness[sub], p.metallic[sub],
                               p.transmission[sub], p.ior[sub])
            f_val = eval_brdf_arrays(pp, nn[j], wi[j], wo[j])
            tp = f_val * (np.clip(mu_i[j], 0, 1) / np.maximum(mix[j], 1e-12))[:, None]
            w_in[sub] = wi[j]
            throughput[sub] = np.where(ok[:, None], tp, 0.0)
            pdf[sub] = np.maximum(mix[j], 1e-12)

    if take_trans.any():
        idx = np.nonzero(take_trans)[0]
        nn, wo = normals[idx], w_out[idx]
        a = alpha[idx]
        sm = smooth[idx]
        h = np.where(sm[:, None], nn, _sample_ggx_h(nn, a, u1[idx], u2[idx]))
        h = normalize(h)
        # Flip h toward wo's side so Fresnel/refraction geometry is consistent.
        oh = np.einsum("ij,ij->i", wo, h)
        h = np.where((oh < 0)[:, None], -h, h)
        oh = np.abs(oh)
        eta = p.ior[idx]
        f = fresnel_dielectric(oh, eta)
        mu_h = np.clip(np.abs(np.einsum("ij,ij->i", nn, h)), 1e-7, 1.0)
        # Rough lobes keep a shadowing correction (<= 1, never gains energy);
        # smooth ones pass through untouched.
        g_corr = np.where(sm, 1.0, np.clip(
            smith_g2(oh, np.clip(mu_o[idx], 1e-6, 1.0), a) * oh
            / np.maximum(mu_o[idx] * mu_h, 1e-9), 0.0, 1.0))
        reflect_evt = u_fresnel[idx] < f
        wt, tir = _refract(wo, h, eta)
        reflect_evt = reflect_evt | tir
        wi = np.where(reflect_evt[:, None], _reflect(wo, h), wt)
        tint = np.where(reflect_evt[:, None], 1.0, p.base[idx])
        w_in[idx] = wi
        # Fresnel/transmission event probabilities cancel against the lobe pdf.
        throughput[idx] = tint * g_corr[:, None]
        pdf[idx] = np.maximum(p_trans[idx], 1e-9)

    return w_in, pdf, throughput


def sample_brdf(material: Material, normal, outgoing_dir, rng: np.random.Generator):
    """Single-sample convenience wrapper around sample_brdf_arrays."""
    n = normalize(np.asarray(normal, dtype=np.float64).reshape(1, 3))
    wo = normalize(np.asarray(outgoing_dir, dtype=np.float64).reshape(1, 3))
    p = shading_params(material, np.zeros((1, 3)))
    w_in, pdf, throughput = sample_brdf_arrays(p, n, wo, rng)
    return w_in[0], float(pdf[0]), throughput[0]
