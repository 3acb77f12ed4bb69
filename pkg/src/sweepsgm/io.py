"""PFM/PGM maps, pose files and ``key = value`` configuration files.

Float maps are stored as PFM with invalid pixels written as ``-inf``; in
memory the package marks invalid pixels with NaN.
"""

from __future__ import annotations

import re
from dataclasses import fields
from pathlib import Path
from typing import Iterable

import numpy as np

from .evalkit import Patch, SceneDescription
from .geometry import CameraView
from .pipeline import PipelineConfig


class FormatError(ValueError):
    pass


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------


def write_pfm(path: str | Path, data: np.ndarray) -> None:
    """Write a 1- or 3-channel float map, little-endian, rows bottom-to-top."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        header = "Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        header = "PF"
    else:
        raise FormatError(f"PFM needs an (H, W) or (H, W, 3) array, got {arr.shape}")
    arr = np.where(np.isnan(arr), np.float32(-np.inf), arr)
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"{header}\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(arr[::-1]).astype("<f4").tobytes())


def _read_token_lines(raw: bytes, count: int) -> tuple[list[str], int]:
    lines, pos = [], 0
    while len(lines) < count:
        end = raw.find(b"\n", pos)
        if end < 0:
            raise FormatError("truncated PFM header")
        line = raw[pos:end].strip()
        pos = end + 1
        if line:
            lines.append(line.decode("ascii", errors="replace"))
    return lines, pos


def read_pfm(path: str | Path, invalid_to_nan: bool = True) -> np.ndarray:
    """Read a PFM map; ``-inf`` pixels become NaN unless ``invalid_to_nan`` is false."""
    raw = Path(path).read_bytes()
    (kind, dims, scale_line), offset = _read_token_lines(raw, 3)
    if kind not in ("Pf", "PF"):
        raise FormatError(f"{path}: bad PFM magic {kind!r}")
    try:
        w, h = (int(v) for v in dims.split())
        scale = float(scale_line)
    except ValueError:
        raise FormatError(f"{path}: malformed PFM header") from None
    if w < 1 or h < 1 or scale == 0:
        raise FormatError(f"{path}: malformed PFM header")
    channels = 3 if kind == "PF" else 1
    expected = w * h * channels * 4
    payload = raw[offset:]
    if len(payload) < expected:
        raise FormatError(f"{path}: truncated PFM payload, expected {expected} bytes, got {len(payload)}")
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(payload[:expected], dtype=dtype).astype(np.float32)
    arr = arr.reshape((h, w, 3) if channels == 3 else (h, w))[::-1].copy()
    if invalid_to_nan:
        arr[np.isneginf(arr)] = np.nan
    return arr


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------


def write_pgm(path: str | Path, img: np.ndarray) -> None:
    """Write an 8-bit binary PGM, rounding and clipping to ``[0, 255]``."""
    arr = np.clip(np.rint(np.asarray(img, dtype=np.float64)), 0, 255).astype(np.uint8)
    if arr.ndim != 2:
        raise FormatError("PGM needs a 2-D array")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary (P5) or ASCII (P2) PGM as float64."""
    raw = Path(path).read_bytes()
    # strip comments from the header region only
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)").match(raw, pos)
        if m is None:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(m.group(2))
        pos = m.end()
    magic = tokens[0]
    if magic not in (b"P5", b"P2"):
        raise FormatError(f"{path}: not a PGM file")
    w, h, maxval = (int(t) for t in tokens[1:])
    if magic == b"P2":
        values = np.array(raw[pos:].split()[: w * h], dtype=np.float64)
        if values.size != w * h:
            raise FormatError(f"{path}: truncated PGM payload")
        return values.reshape(h, w)
    pos += 1
    dtype = np.uint8 if maxval < 256 else ">u2"
    nbytes = w * h * np.dtype(dtype).itemsize
    if len(raw) - pos < nbytes:
        raise FormatError(f"{path}: truncated PGM payload, expected {nbytes} bytes, got {len(raw) - pos}")
    return np.frombuffer(raw[pos : pos + nbytes], dtype=dtype).reshape(h, w).astype(np.float64)


# ---------------------------------------------------------------------------
# Poses
# ---------------------------------------------------------------------------

POSE_FIELDS = 20


def format_pose(cam_id: str, view: CameraView) -> str:
    K = view.K
    values = [K[0, 0], K[1, 1], K[0, 2], K[1, 2], K[0, 1], *view.R.ravel(), *view.C]
    return " ".join([cam_id] + [repr(float(v)) for v in values] + [str(view.width), str(view.height)])


def write_poses(path: str | Path, views: dict[str, CameraView]) -> None:
    with open(path, "w") as fh:
        fh.write("# id fx fy cx cy skew r11 r12 r13 r21 r22 r23 r31 r32 r33 Cx Cy Cz width height\n")
        for cam_id, view in views.items():
            fh.write(format_pose(cam_id, view) + "\n")


def read_poses(path: str | Path) -> dict[str, CameraView]:
    """Read one camera per line: ``id fx fy cx cy skew R(row-major) C width height``."""
    views: dict[str, CameraView] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != POSE_FIELDS:
            raise FormatError(f"{path}:{lineno}: expected {POSE_FIELDS} fields, got {len(parts)}")
        try:
            fx, fy, cx, cy, skew = (float(v) for v in parts[1:6])
            R = np.array([float(v) for v in parts[6:15]]).reshape(3, 3)
            C = np.array([float(v) for v in parts[15:18]])
            size = (int(parts[18]), int(parts[19]))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        K = np.array([[fx, skew, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        views[parts[0]] = CameraView(K, R, C, size)
    return views


def match_poses(image_paths: Iterable[str | Path], views: dict[str, CameraView]) -> list[CameraView]:
    """Pair images with poses by file name, stem, or else by file order."""
    paths = [Path(p) for p in image_paths]
    out = []
    for p in paths:
        for key in (p.name, p.stem, str(p)):
            if key in views:
                out.append(views[key])
                break
        else:
            break
    if len(out) == len(paths):
        return out
    if len(views) == len(paths):
        return list(views.values())
    raise FormatError("could not associate every image with a pose")


# ---------------------------------------------------------------------------
# key = value files
# ---------------------------------------------------------------------------


def parse_key_values(text: str, source: str = "<config>") -> list[tuple[str, str, int]]:
    """``(key, value, line)`` triples; ``#`` starts a comment."""
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out.append((key, value, lineno))
    return out


_CONFIG_FIELDS = {f.name: f for f in fields(PipelineConfig)}
_INT_KEYS = {"levels", "delta_d", "max_index_jump"}
_WINDOW_KEYS = {"census_window", "ncc_window", "gestalt_kernel", "median_kernel"}
_STR_KEYS = {"cost", "variant", "p2_mode"}


def _parse_window(value: str) -> tuple[int, int]:
    m = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", value)
    if m is None:
        raise ValueError(f"expected WxH, got {value!r}")
    return int(m.group(1)), int(m.group(2))


def _parse_value(key: str, value: str):
    if key in _STR_KEYS:
        return value
    if key in _INT_KEYS:
        return int(value)
    if key in _WINDOW_KEYS:
        return _parse_window(value)
    if key == "P2" and value.lower() in ("none", "adaptive"):
        return None
    return float(value)


def load_config_overrides(path: str | Path) -> dict[str, object]:
    """Typed overrides from a config file; unknown or repeated keys are errors."""
    text = Path(path).read_text()
    out: dict[str, object] = {}
    for key, value, lineno in parse_key_values(text, str(path)):
        if key not in _CONFIG_FIELDS:
            raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate config key '{key}'")
        try:
            out[key] = _parse_value(key, value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for '{key}': {exc}") from None
    return out


def build_config(overrides: dict[str, object]) -> PipelineConfig:
    """Published defaults for the chosen cost and P2 mode, then ``overrides``."""
    overrides = dict(overrides)
    for key in ("d_min", "d_max"):
        if key not in overrides:
            raise ConfigError(f"missing required config key '{key}'")
    cost = str(overrides.pop("cost", "ncc"))
    p2_mode = str(overrides.pop("p2_mode", "gradient"))
    d_min = float(overrides.pop("d_min"))
    d_max = float(overrides.pop("d_max"))
    return PipelineConfig.published_defaults(d_min, d_max, cost=cost, p2_mode=p2_mode, **overrides)


def _format_value(value: object) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return "x".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg: PipelineConfig) -> str:
    """``key = value`` lines that :func:`load_config_overrides` reads back."""
    return "".join(f"{key} = {_format_value(value)}\n" for key, value in cfg.items())


# ---------------------------------------------------------------------------
# Scene descriptions
# ---------------------------------------------------------------------------

_SCENE_SCALARS = {
    "width": int,
    "height": int,
    "focal": float,
    "baseline": float,
    "noise": float,
    "seed": int,
    "d_min": float,
    "d_max": float,
    "background": float,
}


def parse_scene(text: str, source: str = "<scene>") -> SceneDescription:
    """Scene file: scalar keys plus one or more ``patch`` lines.

    ``patch = cx cy cz nx ny nz half_u half_v texture_scale seed``
    """
    kwargs: dict[str, object] = {}
    patches = []
    for key, value, lineno in parse_key_values(text, source):
        try:
            if key == "patch":
                parts = value.split()
                if len(parts) != 10:
                    raise ValueError(f"patch needs 10 values, got {len(parts)}")
                nums = [float(v) for v in parts[:9]]
                n = np.asarray(nums[3:6])
                if not np.linalg.norm(n) > 0:
                    raise ValueError("patch normal must be non-zero")
                patches.append(
                    Patch(tuple(nums[0:3]), tuple(nums[3:6]), (nums[6], nums[7]), nums[8], int(parts[9]))
                )
            elif key in _SCENE_SCALARS:
                kwargs[key] = _SCENE_SCALARS[key](value)
            else:
                raise ValueError(f"unknown scene key '{key}'")
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    if not patches:
        raise ConfigError(f"{source}: scene has no patches")
    return SceneDescription(patches=tuple(patches), **kwargs)


def format_scene(desc: SceneDescription) -> str:
    lines = [f"{key} = {getattr(desc, key)!r}" for key in _SCENE_SCALARS]
    for p in desc.patches:
        vals = [*p.center, *p.normal, *p.half_extent, p.texture_scale]
        lines.append("patch = " + " ".join(repr(float(v)) for v in vals) + f" {p.seed}")
    return "\n".join(lines) + "\n"

