from .brdf import eval_brdf, sample_brdf, shading_params  # noqa: F401
from .camera import Camera  # noqa: F401
from .env import EnvironmentMap, ProceduralSky  # noqa: F401
from .geometry import Box, GroundPlane, Sphere, TriangleMesh, make_icosphere  # noqa: F401
from .image import DISPLAY, LINEAR, ImageBuffer, mean_squared_error, tonemap  # noqa: F401
from .imageio import (  # noqa: F401
    read_fimg,
    read_hdr,
    read_obj,
    read_png,
    write_fimg,
    write_hdr,
    write_png,
)
from .tracer import (  # noqa: F401
    Scene,
    SceneObject,
    primary_object_mask,
    render_image,
    trace_path,
    trace_paths,
)
