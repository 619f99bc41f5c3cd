"""Versioned binary model checkpoints.

Layout: magic ``MEDN`` | u32 version | u32 header length | UTF-8 JSON header |
raw little-endian tensors in header order (parameters first, then optimizer
moments when present).  The header pins the architecture descriptor, the
conditioning channel order, schedule constants, codec mode, prompt vocabulary
and the optimizer hyperparameters.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .optim import OptimizerState
from .unet import ArchDescriptor, Denoiser

MAGIC = b"MEDN"
VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def _entries(tensors: dict) -> list:
    return [{"name": k, "shape": list(v.shape), "dtype": str(v.dtype)}
            for k, v in sorted(tensors.items())]


def save_model(path, denoiser: Denoiser, optimizer: OptimizerState = None,
               lr: float = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "arch": denoiser.arch.to_dict(),
        "vocab": denoiser.vocab,
        "active_attributes": list(denoiser.active_attributes),
        "channel_order": {"n_latent": 3, "n_context": 3,
                          "strength_attributes": list(denoiser.active_attributes)},
        "schedule": denoiser.schedule_config,
        "codec_mode": denoiser.codec_mode,
        "train_resolution": denoiser.train_resolution,
        "lr": lr if lr is not None else (optimizer.lr if optimizer else None),
        "params": _entries(denoiser.params),
        "optimizer": None,
    }
    blobs = [denoiser.params[e["name"]] for e in header["params"]]
    if optimizer is not None:
        moments = {}
        for k, v in optimizer.m.items():
            moments[f"m.{k}"] = v
        for k, v in optimizer.v.items():
            moments[f"v.{k}"] = v
        header["optimizer"] = {
            "step": optimizer.step, "lr": optimizer.lr,
            "betas": list(optimizer.betas), "eps": optimizer.eps,
            "entries": _entries(moments),
        }
        blobs.extend(moments[e["name"]] for e in header["optimizer"]["entries"])
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            dtype = _DTYPES[str(blob.dtype)]
            f.write(np.ascontiguousarray(blob, dtype=dtype).tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise ValueError(f"truncated checkpoint while reading {what} "
                         f"(wanted {n} bytes, got {len(data)})")
    return data


def load_model(path, with_optimizer: bool = False):
    """Returns a Denoiser, or (Denoiser, OptimizerState|None) when asked."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise ValueError(f"{path} is not a model checkpoint (bad magic {magic!r})")
        version, header_len = struct.unpack("<II", _read_exact(f, 8, "header size"))
        if version != VERSION:
            raise ValueError(f"checkpoint version {version} unsupported (want {VERSION})")
        header = json.loads(_read_exact(f, header_len, "header").decode("utf-8"))

        def read_tensors(entries):
            out = {}
            for e in entries:
                dtype = _DTYPES[e["dtype"]]
                count = int(np.prod(e["shape"])) if e["shape"] else 1
                raw = _read_exact(f, count * np.dtype(dtype).itemsize,
                                  f"tensor {e['name']}")
                out[e["name"]] = np.frombuffer(raw, dtype=dtype).reshape(
                    e["shape"]).copy()
            return out

        params = read_tensors(header["params"])
        opt_state = None
        if header.get("optimizer"):
            oh = header["optimizer"]
            moments = read_tensors(oh["entries"])
            opt_state = OptimizerState(lr=oh["lr"], betas=tuple(oh["betas"]),
                                       eps=oh["eps"], step=oh["step"])
            for k, v in moments.items():
                kind, name = k.split(".", 1)
                (opt_state.m if kind == "m" else opt_state.v)[name] = v
        extra = f.read(1)
        if extra:
            raise ValueError(f"{path}: trailing bytes after declared tensors")
    denoiser = Denoiser(
        arch=ArchDescriptor.from_dict(header["arch"]),
        params=params,
        vocab=header["vocab"],
        active_attributes=tuple(header["active_attributes"]),
        schedule_config=header["schedule"],
        codec_mode=header.get("codec_mode", "identity"),
        train_resolution=header.get("train_resolution", 32),
    )
    denoiser.lr = header.get("lr")
    if with_optimizer:
        return denoiser, opt_state
    return denoiser


def checkpoint_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
