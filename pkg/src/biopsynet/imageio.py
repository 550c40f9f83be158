"""Image file IO. Binary PPM (P6, maxval 255) is the mandatory lossless
format; PNG is available when Pillow is installed."""

import os

import numpy as np


class ImageFormatError(ValueError):
    """Malformed or truncated image file; message carries the byte offset."""


def _read_token(data: bytes, pos: int) -> tuple:
    """Next whitespace-delimited PPM header token, skipping # comments."""
    n = len(data)
    while pos < n:
        ch = data[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            while pos < n and data[pos : pos + 1] != b"\n":
                pos += 1
        else:
            break
    if pos >= n:
        raise ImageFormatError(f"unexpected end of header at byte {pos}")
    start = pos
    while pos < n and not data[pos : pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode binary PPM bytes to an (H, W, 3) uint8 array."""
    magic, pos = _read_token(data, 0)
    if magic != b"P6":
        raise ImageFormatError(f"bad magic {magic!r} at byte 0 (expected P6)")
    fields = []
    for _ in range(3):
        token, pos = _read_token(data, pos)
        if not token.isdigit():
            raise ImageFormatError(
                f"non-numeric header token {token!r} at byte {pos - len(token)}"
            )
        fields.append(int(token))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ImageFormatError(f"invalid dimensions {width}x{height}")
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval} (only 255)")
    pos += 1  # single whitespace byte after maxval
    expected = width * height * 3
    payload = data[pos : pos + expected]
    if len(payload) != expected:
        raise ImageFormatError(
            f"truncated payload at byte {pos + len(payload)}: "
            f"expected {expected} bytes, got {len(payload)}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()


def encode_ppm(image: np.ndarray) -> bytes:
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 3) uint8 image, got {image.shape} {image.dtype}")
    h, w = image.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(image).tobytes()


def read_image(path) -> np.ndarray:
    path = os.fspath(path)
    if path.endswith(".png"):
        return _read_png(path)
    with open(path, "rb") as f:
        return decode_ppm(f.read())


def write_image(path, image: np.ndarray) -> None:
    """Atomic write: the file appears only once fully written."""
    path = os.fspath(path)
    if path.endswith(".png"):
        _write_png(path, image)
        return
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(encode_ppm(image))
    os.replace(tmp, path)


def _read_png(path) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - depends on extras
        raise ImageFormatError("PNG support requires Pillow (pip extra 'png')") from exc
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def _write_png(path, image: np.ndarray) -> None:
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - depends on extras
        raise ImageFormatError("PNG support requires Pillow (pip extra 'png')") from exc
    tmp = path + ".tmp"
    Image.fromarray(image, mode="RGB").save(tmp, format="PNG")
    os.replace(tmp, path)
