"""Image containers, PNG/JPEG I/O and sRGB <-> CIE L*a*b* conversion.

Everything downstream works on :class:`LabImage` / :class:`GrayImage`, whose
channels are float64 arrays of shape ``(height, width)``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

# sRGB (D65) -> XYZ
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
# reference white taken from the matrix itself so that (255,255,255) -> (100,0,0) exactly
WHITE = _RGB_TO_XYZ.sum(axis=1)

_EPS = (6.0 / 29.0) ** 3
_KAPPA = 3.0 * (6.0 / 29.0) ** 2


class DecodeError(ValueError):
    """Raised when an encoded image stream cannot be decoded."""


@dataclass(frozen=True, eq=False)
class RgbImage:
    """8-bit sRGB image; ``pixels`` has shape (height, width, 3), dtype uint8."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim != 3 or p.shape[2] != 3 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError(f"expected (H, W, 3) pixel array, got shape {p.shape}")
        p = np.ascontiguousarray(p, dtype=np.uint8)
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other):
        return isinstance(other, RgbImage) and np.array_equal(self.pixels, other.pixels)


def _freeze(arr, shape=None) -> np.ndarray:
    a = np.array(arr, dtype=np.float64)
    if shape is not None and a.shape != shape:
        raise ValueError(f"channel shape {a.shape} does not match {shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Luminance-only image, ``L`` in [0, 100]."""

    L: np.ndarray

    def __post_init__(self):
        L = _freeze(self.L)
        if L.ndim != 2 or L.shape[0] < 1 or L.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-D luminance array, got shape {L.shape}")
        object.__setattr__(self, "L", L)

    @property
    def height(self) -> int:
        return self.L.shape[0]

    @property
    def width(self) -> int:
        return self.L.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.L.shape

    def __eq__(self, other):
        return isinstance(other, GrayImage) and np.array_equal(self.L, other.L)


@dataclass(frozen=True, eq=False)
class LabImage:
    """CIE L*a*b* image (D65, 2 degree observer)."""

    L: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        L = _freeze(self.L)
        if L.ndim != 2 or L.shape[0] < 1 or L.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-D luminance array, got shape {L.shape}")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "a", _freeze(self.a, L.shape))
        object.__setattr__(self, "b", _freeze(self.b, L.shape))

    @property
    def height(self) -> int:
        return self.L.shape[0]

    @property
    def width(self) -> int:
        return self.L.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.L.shape

    def chroma(self) -> np.ndarray:
        """(H, W, 2) stack of the a and b channels."""
        return np.stack([self.a, self.b], axis=-1)

    def gray(self) -> GrayImage:
        return GrayImage(self.L)

    def __eq__(self, other):
        return (
            isinstance(other, LabImage)
            and np.array_equal(self.L, other.L)
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.b, other.b)
        )


def decode(data: bytes) -> RgbImage:
    """Decode a PNG or JPEG byte stream into an 8-bit sRGB image."""
    try:
        with Image.open(io.BytesIO(data)) as im:
            if im.format not in ("PNG", "JPEG"):
                raise DecodeError(f"unsupported format {im.format!r}; only PNG and JPEG are accepted")
            im.load()
            arr = _to_rgb8(im)
    except DecodeError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode image stream ({len(data)} bytes): {exc}") from exc
    return RgbImage(arr)


def _to_rgb8(im: Image.Image) -> np.ndarray:
    # 16-bit and 32-bit integer grayscale need explicit rescaling; PIL's convert() would clip
    if im.mode in ("I;16", "I;16B", "I;16L", "I"):
        a = np.asarray(im).astype(np.float64)
        top = 65535.0 if im.mode.startswith("I;16") or a.max() > 255 else 255.0
        g = np.clip(np.rint(a * 255.0 / top), 0, 255).astype(np.uint8)
        return np.repeat(g[:, :, None], 3, axis=2)
    if im.mode in ("RGBA", "LA", "P", "PA"):
        im = im.convert("RGBA").convert("RGB")
    elif im.mode != "RGB":
        im = im.convert("RGB")
    return np.asarray(im, dtype=np.uint8)


def read_image(path) -> RgbImage:
    with open(path, "rb") as fh:
        return decode(fh.read())


def encode_png(img: RgbImage) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(img.pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def write_png(img: RgbImage, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_png(img))


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c: np.ndarray) -> np.ndarray:
    c = np.clip(c, 0.0, None)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1.0 / 2.4) - 0.055)


def _f(t):
    return np.where(t > _EPS, np.cbrt(t), t / _KAPPA + 4.0 / 29.0)


def _finv(t):
    return np.where(t > 6.0 / 29.0, t**3, _KAPPA * (t - 4.0 / 29.0))


def rgb_array_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Convert an (..., 3) array of 8-bit sRGB values to (..., 3) L*a*b*."""
    lin = _srgb_to_linear(np.asarray(rgb, dtype=np.float64) / 255.0)
    xyz = lin @ _RGB_TO_XYZ.T / WHITE
    fx, fy, fz = _f(xyz[..., 0]), _f(xyz[..., 1]), _f(xyz[..., 2])
    L = np.clip(116.0 * fy - 16.0, 0.0, 100.0)
    return np.stack([L, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)


def lab_array_to_rgb(lab: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb_array_to_lab` with per-component clamping to [0, 255]."""
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_finv(fx), _finv(fy), _finv(fz)], axis=-1) * WHITE
    srgb = _linear_to_srgb(xyz @ _XYZ_TO_RGB.T)
    return np.clip(np.rint(srgb * 255.0), 0, 255).astype(np.uint8)


def rgb_to_lab(img: RgbImage) -> LabImage:
    lab = rgb_array_to_lab(img.pixels)
    return LabImage(lab[..., 0], lab[..., 1], lab[..., 2])


def lab_to_rgb(img: LabImage) -> RgbImage:
    return RgbImage(lab_array_to_rgb(np.stack([img.L, img.a, img.b], axis=-1)))


def to_gray(img: RgbImage | LabImage) -> GrayImage:
    """Luminance of an image; chrominance is discarded."""
    if isinstance(img, LabImage):
        return GrayImage(img.L)
    return GrayImage(rgb_to_lab(img).L)


def gray_to_rgb(gray: GrayImage) -> RgbImage:
    """Render a luminance image as an achromatic sRGB image."""
    z = np.zeros_like(gray.L)
    return lab_to_rgb(LabImage(gray.L, z, z))


def with_chroma(gray: GrayImage, a: np.ndarray, b: np.ndarray) -> LabImage:
    return LabImage(gray.L, a, b)
