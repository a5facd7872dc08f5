"""Binary PGM/PPM images of occupancy, flow and agent-ID grids.

Flow uses a color wheel: hue is the flow direction ``atan2(dy, dx)`` and
saturation and value both grow with magnitude up to ``max_magnitude``.
"""

from __future__ import annotations

import numpy as np

from .gridio import atomic_write_bytes


def occupancy_image(values) -> np.ndarray:
    """8-bit gray levels ``round(255 * p)``."""
    p = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.round(255.0 * p).astype(np.uint8)


def hsv_to_rgb(h, s, v) -> np.ndarray:
    """Vectorized HSV to RGB, all channels in [0, 1]; returns (..., 3) floats."""
    h = np.mod(h, 1.0) * 6.0
    i = np.floor(h).astype(int) % 6
    f = h - np.floor(h)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    choices = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    rgb = np.zeros(np.shape(h) + (3,))
    for k, (r, g, b) in enumerate(choices):
        sel = i == k
        rgb[sel] = np.stack([np.broadcast_to(c, np.shape(h))[sel] for c in (r, g, b)], axis=-1)
    return rgb


def flow_image(flow, max_magnitude: float = 1.0, occupancy=None) -> np.ndarray:
    """Color-wheel RGB image (h, w, 3) uint8; optionally dimmed by occupancy."""
    if not max_magnitude > 0:
        raise ValueError("max_magnitude must be positive")
    flow = np.asarray(flow, dtype=np.float64)
    angle = np.arctan2(flow[..., 1], flow[..., 0])
    mag = np.minimum(1.0, np.hypot(flow[..., 0], flow[..., 1]) / max_magnitude)
    rgb = hsv_to_rgb(angle / (2 * np.pi), mag, mag)
    if occupancy is not None:
        rgb = rgb * np.clip(np.asarray(occupancy, dtype=np.float64), 0.0, 1.0)[..., None]
    return np.round(255.0 * rgb).astype(np.uint8)


def id_color(ids) -> np.ndarray:
    """Deterministic color per agent ID (multiplicative hash); ID 0 is black."""
    ids = np.asarray(ids, dtype=np.uint64)
    hashed = (ids * np.uint64(2654435761)) & np.uint64(0xFFFFFF)
    rgb = np.stack([(hashed >> np.uint64(s)) & np.uint64(0xFF) for s in (16, 8, 0)], axis=-1)
    # Keep every agent visibly different from the empty background.
    rgb = np.where(ids[..., None] == 0, 0, rgb | np.uint64(0x40))
    return rgb.astype(np.uint8)


def encode_pgm(gray: np.ndarray) -> bytes:
    gray = np.asarray(gray, dtype=np.uint8)
    h, w = gray.shape
    return f"P5\n{w} {h}\n255\n".encode() + gray.tobytes()


def encode_ppm(rgb: np.ndarray) -> bytes:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes()


def decode_pnm(data: bytes) -> np.ndarray:
    """Parse a binary P5/P6 image written by this module."""
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] not in (b"P5", b"P6"):
        raise ValueError("not a binary PGM/PPM image")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only 8-bit images are supported")
    channels = 1 if parts[0] == b"P5" else 3
    pixels = np.frombuffer(data[len(data) - w * h * channels:], dtype=np.uint8)
    return pixels.reshape((h, w) if channels == 1 else (h, w, 3))


def write_pgm(path, gray) -> None:
    atomic_write_bytes(path, encode_pgm(gray))


def write_ppm(path, rgb) -> None:
    atomic_write_bytes(path, encode_ppm(rgb))
