"""Binary PGM/PPM writers for frames with values in [0, 1]."""

import numpy as np


def to_bytes(image: np.ndarray) -> bytes:
    """Encode a ``(H, W)`` grey or ``(H, W, 3)`` colour image as P5/P6."""
    image = np.asarray(image, float)
    if image.ndim == 2:
        magic = b"P5"
    elif image.ndim == 3 and image.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"expected (H, W) or (H, W, 3), got {image.shape}")
    if np.any(image < 0.0) or np.any(image > 1.0):
        raise ValueError("pixel values must lie in [0, 1]")
    h, w = image.shape[:2]
    pixels = np.round(image * 255.0).astype(np.uint8)
    return magic + f"\n{w} {h}\n255\n".encode() + pixels.tobytes()


def write_image(path, image: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(image))


def read_image(path) -> np.ndarray:
    """Inverse of ``write_image`` for files it produced."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic, dims, maxval, rest = data.split(b"\n", 3)
    w, h = (int(v) for v in dims.split())
    channels = 3 if magic == b"P6" else 1
    pixels = np.frombuffer(rest, dtype=np.uint8).astype(float) / int(maxval)
    return pixels.reshape((h, w, 3) if channels == 3 else (h, w))
