"""matedit: desk-scale material editing with a path-traced dataset and a
strength-conditioned diffusion model."""

__version__ = "0.1.0"

from .materials import (  # noqa: F401
    ATTRIBUTES,
    ATTRIBUTE_RANGES,
    OVERDRIVE_RANGE,
    Checker,
    EditStrength,
    Material,
    apply_attribute_edits,
    is_null_edit,
)
