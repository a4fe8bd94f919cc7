"""Pixel-domain foundation: buffers, metrics, edits, JPEG channel."""

from .buffer import as_image, luminance, read_image, resize, write_image
from .corpus import seed_corpus, seed_image
from .jpeg import jpeg_roundtrip
from .metrics import jnd_mask, psnr, ssim
from .transforms import COMBINED, ROBUSTNESS_SET, TransformSpec, apply_transform

__all__ = [
    "COMBINED", "ROBUSTNESS_SET", "TransformSpec", "apply_transform", "as_image",
    "jnd_mask", "jpeg_roundtrip", "luminance", "psnr", "read_image", "resize",
    "seed_corpus", "seed_image", "ssim", "write_image",
]
