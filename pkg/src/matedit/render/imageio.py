"""File I/O: 8-bit PNG, Radiance RGBE .hdr, raw-float FIMG, Wavefront OBJ."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .image import DISPLAY, LINEAR, ImageBuffer

FIMG_MAGIC = b"FIMG"


def write_png(path, image: ImageBuffer) -> None:
    if image.encoding != DISPLAY:
        raise ValueError("PNG output expects a display-encoded image")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.clip(image.pixels * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def read_png(path) -> ImageBuffer:
    path = Path(path)
    try:
        with Image.open(path) as im:
            data = np.asarray(im.convert("RGB"), dtype=np.float64)
    except Exception as exc:
        raise ValueError(f"cannot decode PNG {path}: {exc}") from exc
    return ImageBuffer(data / 255.0, DISPLAY)


def write_fimg(path, image: ImageBuffer) -> None:
    """Raw little-endian float32 RGB with a 16-byte header (magic, w, h, pad)."""
    if image.encoding != LINEAR:
        raise ValueError("FIMG output expects a linear-encoded image")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = FIMG_MAGIC + struct.pack("<III", image.width, image.height, 0)
    with open(path, "wb") as f:
        f.write(header)
        f.write(image.pixels.astype("<f4").tobytes())


def read_fimg(path) -> ImageBuffer:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != FIMG_MAGIC:
        raise ValueError(f"{path} is not a FIMG file")
    width, height, _ = struct.unpack("<III", raw[4:16])
    expected = 16 + width * height * 3 * 4
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    pixels = np.frombuffer(raw, dtype="<f4", offset=16).reshape(height, width, 3)
    return ImageBuffer(pixels.astype(np.float64), LINEAR)


# --- Radiance RGBE (.hdr) ---------------------------------------------------

def _rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    exp = rgbe[..., 3].astype(np.int32)
    scale = np.ldexp(1.0, exp - 136)  # (c + 0.5) / 256 * 2**(e - 128)
    rgb = (rgbe[..., :3].astype(np.float64) + 0.5) * scale[..., None]
    rgb[exp == 0] = 0.0
    return rgb


def _float_to_rgbe(rgb: np.ndarray) -> np.ndarray:
    rgb = np.maximum(rgb, 0.0)
    maxc = rgb.max(axis=-1)
    rgbe = np.zeros(rgb.shape[:-1] + (4,), dtype=np.uint8)
    nz = maxc >= 1e-32
    mantissa, exp = np.frexp(maxc[nz])
    scale = mantissa * 256.0 / maxc[nz]
    rgbe[nz, :3] = np.clip(rgb[nz] * scale[:, None], 0, 255).astype(np.uint8)
    rgbe[nz, 3] = (exp + 128).astype(np.uint8)
    return rgbe


def read_hdr(path) -> ImageBuffer:
    """Read a lat-long Radiance picture (plain or adaptive-RLE scanlines)."""
    path = Path(path)
    raw = path.read_bytes()
    if not (raw.startswith(b"#?RADIANCE") or raw.startswith(b"#?RGBE")):
        raise ValueError(f"{path} is not a Radiance .hdr file")
    pos = 0
    width = height = None
    while True:
        end = raw.index(b"\n", pos)
        line = raw[pos:end]
        pos = end + 1
        if line.startswith(b"-Y"):
            parts = line.split()
            if len(parts) != 4 or parts[0] != b"-Y" or parts[2] != b"+X":
                raise ValueError(f"{path}: unsupported resolution line {line!r}")
            height, width = int(parts[1]), int(parts[3])
            break
        # header key=value lines and the blank separator are skipped
    if width is None or height is None or width <= 0 or height <= 0:
        raise ValueError(f"{path}: missing image resolution")

    data = np.frombuffer(raw, dtype=np.uint8, offset=pos)
    rows = np.zeros((height, width, 4), dtype=np.uint8)
    cursor = 0
    for y in range(height):
        if (8 <= width <= 32767 and cursor + 4 <= len(data)
                and data[cursor] == 2 and data[cursor + 1] == 2
                and (int(data[cursor + 2]) << 8 | int(data[cursor + 3])) == width):
            cursor += 4
            for c in range(4):
                x = 0
                while x < width:
                    if cursor >= len(data):
                        raise ValueError(f"{path}: truncated RLE scanline")
                    count = int(data[cursor]); cursor += 1
                    if count > 128:  # run
                        run = count - 128
                        rows[y, x:x + run, c] = data[cursor]
                        cursor += 1
                        x += run
                    else:  # literal
                        rows[y, x:x + count, c] = data[cursor:cursor + count]
                        cursor += count
                        x += count
        else:
            need = width * 4
            if cursor + need > len(data):
                raise ValueError(f"{path}: truncated scanline data")
            rows[y] = data[cursor:cursor + need].reshape(width, 4)
            cursor += need
    pixels = _rgbe_to_float(rows)
    if not np.all(np.isfinite(pixels)) or pixels.min() < 0:
        raise ValueError(f"{path}: non-finite or negative radiance")
    return ImageBuffer(pixels, LINEAR)


def write_hdr(path, image: ImageBuffer) -> None:
    """Write plain (non-RLE) RGBE scanlines; readable by read_hdr and others."""
    if image.encoding != LINEAR:
        raise ValueError("HDR output expects a linear-encoded image")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rgbe = _float_to_rgbe(image.pixels)
    with open(path, "wb") as f:
        f.write(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n")
        f.write(f"-Y {image.height} +X {image.width}\n".encode())
        f.write(rgbe.tobytes())


# --- Wavefront OBJ ----------------------------------------------------------

def read_obj(path):
    """Load positions and (optional) normals from an OBJ file.

    Returns (vertices (V, 3), faces (F, 3) int, vertex_normals or None,
    face_normal_indices or None).  Polygons are fan-triangulated.
    """
    path = Path(path)
    verts: list[list[float]] = []
    normals: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    face_normals: list[tuple[int, int, int]] = []

    def resolve(idx: int, n: int) -> int:
        return idx - 1 if idx > 0 else n + idx

    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "vn":
            normals.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            corner_v = []
            corner_n = []
            for token in parts[1:]:
                fields = token.split("/")
                corner_v.append(resolve(int(fields[0]), len(verts)))
                if len(fields) >= 3 and fields[2]:
                    corner_n.append(resolve(int(fields[2]), len(normals)))
            if len(corner_v) < 3:
                raise ValueError(f"{path}:{lineno}: face with fewer than 3 vertices")
            for i in range(1, len(corner_v) - 1):
                faces.append((corner_v[0], corner_v[i], corner_v[i + 1]))
                if len(corner_n) == len(corner_v):
                    face_normals.append((corner_n[0], corner_n[i], corner_n[i + 1]))
    if not verts or not faces:
        raise ValueError(f"{path}: no geometry found")
    v = np.asarray(verts, dtype=np.float64)
    f = np.asarray(faces, dtype=np.int64)
    if face_normals and len(face_normals) == len(faces):
        return v, f, np.asarray(normals, dtype=np.float64), np.asarray(face_normals, dtype=np.int64)
    return v, f, None, None
