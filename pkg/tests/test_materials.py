import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from matedit.materials import (Checker, EditStrength, Material,
                               apply_attribute_edits, is_null_edit)


def test_roughness_additive_clamps_high():
    base = Material(base_color=(0.5, 0.5, 0.5), roughness=0.5, metallic=0.0)
    edited = apply_attribute_edits(base, EditStrength(s_r=1.0))
    assert edited.roughness == pytest.approx(1.0, abs=1e-6)


def test_zero_strength_is_identity():
    base = Material(base_color=(0.3, 0.7, 0.2), roughness=0.42, metallic=0.9,
                    transmission=0.1, ior=1.5)
    edited = apply_attribute_edits(base, EditStrength.zero())
    assert edited == base


def test_full_albedo_mix_is_exact_gray():
    base = Material(base_color=(0.8, 0.2, 0.4), roughness=0.5, metallic=0.0)
    edited = apply_attribute_edits(base, EditStrength(s_a=1.0))
    assert edited.base_color == pytest.approx((0.5, 0.5, 0.5), abs=1e-6)


def test_half_albedo_mix_is_linear_midpoint():
    base = Material(base_color=(0.8, 0.2, 0.4))
    edited = apply_attribute_edits(base, EditStrength(s_a=0.5))
    assert edited.base_color == pytest.approx((0.65, 0.35, 0.45), abs=1e-6)


def test_full_transparency_drops_roughness_and_metallic():
    base = Material(base_color=(0.5, 0.5, 0.5), roughness=0.7, metallic=0.4)
    edited = apply_attribute_edits(base, EditStrength(s_t=1.0))
    assert edited.transmission == pytest.approx(1.0)
    assert edited.roughness == pytest.approx(0.0, abs=1e-6)
    assert edited.metallic == pytest.approx(0.0, abs=1e-6)


def test_transparency_white_overlay_tints_albedo():
    base = Material(base_color=(0.8, 0.2, 0.4))
    edited = apply_attribute_edits(base, EditStrength(s_t=1.0), k_overlay=0.5)
    assert edited.base_color == pytest.approx((0.9, 0.6, 0.7), abs=1e-6)


def test_checker_channels_edit_per_texel():
    base = Material(base_color=Checker((0.9, 0.1, 0.1), (0.1, 0.1, 0.9)),
                    roughness=Checker(0.2, 0.8), metallic=0.0)
    edited = apply_attribute_edits(base, EditStrength(s_a=1.0, s_r=0.5))
    assert edited.base_color.a == pytest.approx((0.5, 0.5, 0.5), abs=1e-6)
    assert edited.base_color.b == pytest.approx((0.5, 0.5, 0.5), abs=1e-6)
    assert edited.roughness.a == pytest.approx(0.7)
    assert edited.roughness.b == pytest.approx(1.0)


def test_rejects_non_finite_strengths():
    base = Material()
    with pytest.raises(ValueError):
        apply_attribute_edits(base, EditStrength(s_r=float("nan")))
    with pytest.raises(ValueError):
        apply_attribute_edits(base, EditStrength(s_t=float("inf")))


def test_null_edit_saturated_roughness():
    base = Material(base_color=(0.5, 0.5, 0.5), roughness=1.0, metallic=0.5)
    assert is_null_edit(base, EditStrength(s_r=0.5))


def test_null_edit_zero_vector_and_interior_move():
    base = Material(roughness=0.5)
    assert is_null_edit(base, EditStrength.zero())
    assert not is_null_edit(base, EditStrength(s_r=-0.3))


def test_invalid_material_channels_rejected():
    with pytest.raises(ValueError):
        Material(base_color=(1.2, 0.0, 0.0))
    with pytest.raises(ValueError):
        Material(roughness=-0.1)
    with pytest.raises(ValueError):
        Material(ior=0.9)


finite_strengths = st.builds(
    EditStrength,
    s_r=st.floats(-2, 2), s_m=st.floats(-2, 2),
    s_a=st.floats(-2, 2), s_t=st.floats(-2, 2),
)
materials = st.builds(
    Material,
    base_color=st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)),
    roughness=st.floats(0, 1), metallic=st.floats(0, 1),
    transmission=st.floats(0, 1), ior=st.floats(1.0, 2.5),
)


@settings(max_examples=200, deadline=None)
@given(base=materials, s=finite_strengths)
def test_outputs_always_in_range(base, s):
    edited = apply_attribute_edits(base, s)
    assert 0.0 <= edited.roughness <= 1.0
    assert 0.0 <= edited.metallic <= 1.0
    assert 0.0 <= edited.transmission <= 1.0
    assert all(0.0 <= c <= 1.0 for c in edited.base_color)


@settings(max_examples=200, deadline=None)
@given(base=materials, s=finite_strengths)
def test_second_zero_edit_is_idempotent(base, s):
    once = apply_attribute_edits(base, s)
    twice = apply_attribute_edits(once, EditStrength.zero())
    assert twice == once


@settings(max_examples=100, deadline=None)
@given(base=materials, lo=st.floats(-2, 2), hi=st.floats(-2, 2))
def test_roughness_metallic_monotone_in_strength(base, lo, hi):
    lo, hi = min(lo, hi), max(lo, hi)
    e_lo = apply_attribute_edits(base, EditStrength(s_r=lo, s_m=lo))
    e_hi = apply_attribute_edits(base, EditStrength(s_r=hi, s_m=hi))
    assert e_hi.roughness >= e_lo.roughness - 1e-12
    assert e_hi.metallic >= e_lo.metallic - 1e-12


@settings(max_examples=100, deadline=None)
@given(base=materials, lo=st.floats(0, 2), hi=st.floats(0, 2))
def test_albedo_mix_contracts_toward_gray(base, lo, hi):
    lo, hi = min(lo, hi), max(lo, hi)
    e_lo = apply_attribute_edits(base, EditStrength(s_a=lo))
    e_hi = apply_attribute_edits(base, EditStrength(s_a=hi))
    for c_lo, c_hi in zip(e_lo.base_color, e_hi.base_color):
        assert abs(c_hi - 0.5) <= abs(c_lo - 0.5) + 1e-12


@settings(max_examples=100, deadline=None)
@given(base=materials)
def test_zero_transparency_touches_nothing(base):
    edited = apply_attribute_edits(base, EditStrength(s_t=0.0))
    assert edited == base


@settings(max_examples=100, deadline=None)
@given(base=materials, s=finite_strengths)
def test_is_null_edit_matches_apply(base, s):
    predicted = is_null_edit(base, s)
    edited = apply_attribute_edits(base, s)
    actually_null = (
        np.allclose(edited.base_color, base.base_color, atol=1e-6)
        and math.isclose(edited.roughness, base.roughness, abs_tol=1e-6)
        and math.isclose(edited.metallic, base.metallic, abs_tol=1e-6)
        and math.isclose(edited.transmission, base.transmission, abs_tol=1e-6))
    assert predicted == actually_null
