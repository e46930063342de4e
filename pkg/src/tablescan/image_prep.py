"""Page-image normalization: grayscale, fixed-width resize, padding, strip slicing.

Every downstream stage works on the "working image": an 8-bit single-channel
raster (a 2-D uint8 numpy array, height x width) resized to a fixed width and
padded top/bottom with white. A ScaleMap records the transform so detected
coordinates invert exactly back to the original image.

Strips are 64-row overlapping slices of the padded working image, stepped by
32 rows; each strip is classified only through its innermost 32 rows, so the
inner windows of consecutive strips tile the page without gaps or overlap.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from PIL import Image

from .util import round_half_up

STRIP_HEIGHT = 64
STRIP_STEP = 32
INNER_MARGIN = 16  # rows ignored at the top and bottom of each strip

# ITU-R BT.601 luminance weights; alpha channels are ignored.
_LUMA = (0.299, 0.587, 0.114)

WHITE = 255


class InputFormatError(ValueError):
    """Raised for rasters this pipeline cannot interpret."""


class DegenerateInputError(ValueError):
    """Raised when an image is too small for the requested operation."""


@dataclass(frozen=True)
class ScaleMap:
    """Mapping between working-image and original-image coordinates.

    scale_x / scale_y are original-over-working ratios. pad_top / pad_bottom
    are white rows added to the working image after resizing. Mappings are
    kept in floating point; callers round (half-up) once, at final emission,
    so forward-then-inverse round-trips are exact.
    """

    scale_x: float = 1.0
    scale_y: float = 1.0
    pad_top: int = 0
    pad_bottom: int = 0

    def to_original_x(self, x: float) -> float:
        return x * self.scale_x

    def to_original_y(self, y: float) -> float:
        return (y - self.pad_top) * self.scale_y

    def to_working_x(self, x: float) -> float:
        return x / self.scale_x

    def to_working_y(self, y: float) -> float:
        return y / self.scale_y + self.pad_top


@dataclass(frozen=True)
class Strip:
    """One 64-row slice of the padded working image."""

    origin_y: int
    pixels: np.ndarray

    @property
    def inner_window(self) -> tuple[int, int]:
        """Padded-image row range [start, end) this strip is responsible for."""
        return (self.origin_y + INNER_MARGIN,
                self.origin_y + STRIP_HEIGHT - INNER_MARGIN)


def as_gray_image(arr: np.ndarray) -> np.ndarray:
    """Validate and coerce an array to the 2-D uint8 raster convention."""
    a = np.asarray(arr)
    if a.ndim != 2 or a.size == 0:
        raise InputFormatError(f"expected a non-empty 2-D raster, got shape {a.shape}")
    if a.dtype != np.uint8:
        if a.min() < 0 or a.max() > 255:
            raise InputFormatError("intensities outside [0, 255]")
        a = a.astype(np.uint8)
    return a


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Collapse a 1-, 3- or 4-channel raster to single-channel luminance.

    3- and 4-channel inputs are combined with BT.601 weights (alpha ignored);
    single-channel inputs pass through unchanged.
    """
    arr = np.asarray(image)
    if arr.ndim == 2:
        return as_gray_image(arr)
    if arr.ndim == 3 and arr.shape[2] == 1:
        return as_gray_image(arr[:, :, 0])
    if arr.ndim == 3 and arr.shape[2] in (3, 4):
        rgb = arr[:, :, :3].astype(np.float64)
        luma = rgb[:, :, 0] * _LUMA[0] + rgb[:, :, 1] * _LUMA[1] + rgb[:, :, 2] * _LUMA[2]
        return np.clip(round_half_up(luma), 0, 255).astype(np.uint8)
    raise InputFormatError(f"unsupported channel layout, shape {arr.shape}")


def resize(img: np.ndarray, width: int, height: int) -> np.ndarray:
    """Resample to width x height: area-averaging when shrinking, bilinear when enlarging."""
    img = as_gray_image(img)
    h, w = img.shape
    if (w, h) == (width, height):
        return img.copy()
    shrinking = width * height < w * h
    method = Image.Resampling.BOX if shrinking else Image.Resampling.BILINEAR
    out = Image.fromarray(img, mode="L").resize((width, height), resample=method)
    return np.asarray(out, dtype=np.uint8)


def resize_to_width(img: np.ndarray, target_width: int = 800) -> tuple[np.ndarray, ScaleMap]:
    """Scale to a fixed width, height proportional (round half-up, min 1)."""
    img = as_gray_image(img)
    h, w = img.shape
    if w == target_width:
        return img.copy(), ScaleMap()
    target_height = max(1, round_half_up(h * target_width / w))
    out = resize(img, target_width, target_height)
    return out, ScaleMap(scale_x=w / target_width, scale_y=h / target_height)


def pad_vertical(img: np.ndarray, scale: ScaleMap, pad: int = 16) -> tuple[np.ndarray, ScaleMap]:
    """Add `pad` white rows at the top and bottom; record them in the ScaleMap."""
    img = as_gray_image(img)
    if pad == 0:
        return img.copy(), scale
    out = np.pad(img, ((pad, pad), (0, 0)), mode="constant", constant_values=WHITE)
    return out, replace(scale, pad_top=scale.pad_top + pad, pad_bottom=scale.pad_bottom + pad)


def slice_strips(img: np.ndarray) -> list[Strip]:
    """Cut the padded working image into overlapping 64-row strips.

    Origins run 0, 32, 64, ...; the image is white-extended at the bottom when
    needed so the last strip fits, which makes the inner windows tile every
    content row exactly once.
    """
    img = as_gray_image(img)
    h, w = img.shape
    extended = max(h, STRIP_HEIGHT)
    overhang = (extended - STRIP_HEIGHT) % STRIP_STEP
    if overhang:
        extended += STRIP_STEP - overhang
    if extended != h:
        img = np.pad(img, ((0, extended - h), (0, 0)), mode="constant", constant_values=WHITE)
    return [Strip(origin_y=y, pixels=img[y:y + STRIP_HEIGHT])
            for y in range(0, extended - STRIP_HEIGHT + 1, STRIP_STEP)]


def load_image(path) -> np.ndarray:
    """Load a PNG/JPEG page image as a grayscale raster."""
    with Image.open(path) as im:
        if im.mode == "P":
            im = im.convert("RGB")
        elif im.mode == "LA":
            im = im.convert("L")
        elif im.mode not in ("L", "RGB", "RGBA"):
            try:
                im = im.convert("RGB")
            except Exception as exc:
                raise InputFormatError(f"unsupported image mode {im.mode!r}") from exc
        arr = np.asarray(im)
    return to_grayscale(arr)


def save_image(path, img: np.ndarray) -> None:
    Image.fromarray(as_gray_image(img), mode="L").save(path)
