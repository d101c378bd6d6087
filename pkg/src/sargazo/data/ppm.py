"""Binary PPM (P6) and PGM (P5) reading and writing, maxval 255 only."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import DecodeError

_WHITESPACE = b" \t\r\n\x0b\x0c"


def _header_tokens(data: bytes, count: int):
    """Read ``count`` header tokens, skipping comments; return tokens and payload offset."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos] in _WHITESPACE:
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos] not in _WHITESPACE and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise DecodeError("truncated header")
        tokens.append(data[start:pos])
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise DecodeError("header must end with a single whitespace byte")
    return tokens, pos + 1


def decode_bytes(data: bytes) -> np.ndarray:
    """Decode P6 or P5 bytes into a uint8 array of shape (H, W, 3) or (H, W)."""
    magic = data[:2]
    if magic not in (b"P6", b"P5"):
        raise DecodeError(f"bad magic {magic!r}, expected P6 or P5")
    tokens, offset = _header_tokens(data[2:], 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise DecodeError(f"non-numeric header fields {tokens!r}") from None
    if width < 1 or height < 1:
        raise DecodeError(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise DecodeError(f"maxval must be 255, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    payload = data[2 + offset:]
    expected = width * height * channels
    if len(payload) < expected:
        raise DecodeError(f"truncated payload: {len(payload)} of {expected} bytes")
    pixels = np.frombuffer(payload[:expected], dtype=np.uint8)
    if channels == 3:
        return pixels.reshape(height, width, 3).copy()
    return pixels.reshape(height, width).copy()


def encode_bytes(pixels: np.ndarray) -> bytes:
    """Encode uint8 (H, W, 3) as P6 or (H, W) as P5."""
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise ValueError(f"pixels must be uint8, got {pixels.dtype}")
    if pixels.ndim == 3 and pixels.shape[2] == 3:
        magic = b"P6"
    elif pixels.ndim == 2:
        magic = b"P5"
    else:
        raise ValueError(f"expected (H, W, 3) or (H, W), got {pixels.shape}")
    h, w = pixels.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels).tobytes()


def read_ppm(path) -> np.ndarray:
    """Raw uint8 pixels (H, W, 3) of a P6 file."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DecodeError(f"{path}: {exc.strerror}") from None
    try:
        pixels = decode_bytes(data)
    except DecodeError as exc:
        raise DecodeError(f"{path}: {exc}") from None
    if pixels.ndim != 3:
        raise DecodeError(f"{path}: expected a color P6 image")
    return pixels


def decode_image(path) -> np.ndarray:
    """Channel-first float32 tensor (3, H, W) with values byte/255."""
    return (read_ppm(path).transpose(2, 0, 1) / np.float32(255)).astype(np.float32)


def to_bytes_image(img: np.ndarray) -> np.ndarray:
    """Inverse of :func:`decode_image`: (3, H, W) floats in [0, 1] to uint8 (H, W, 3)."""
    scaled = np.floor(np.clip(img, 0.0, 1.0) * 255 + 0.5).astype(np.uint8)
    return scaled.transpose(1, 2, 0)


def write_ppm(path, pixels: np.ndarray) -> None:
    Path(path).write_bytes(encode_bytes(pixels))


def write_pgm(path, gray: np.ndarray) -> None:
    if gray.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got {gray.shape}")
    Path(path).write_bytes(encode_bytes(gray.astype(np.uint8)))
