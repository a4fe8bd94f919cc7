"""Image edits applied between embedding and extraction.

Each edit is described by a :class:`TransformSpec`; :func:`apply_transform`
executes it. Specs round-trip through a compact text form, e.g.
``"crop:0.5"``, ``"jpeg:80"`` or ``"combined:crop:0.5+brightness:1.5+jpeg:80"``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .buffer import MIN_SIDE, luminance, resize, resize_matrix
from .jpeg import jpeg_roundtrip

KINDS = (
    "identity", "crop", "resize", "rotate90", "jpeg", "brightness",
    "contrast", "saturation", "sharpness", "text_overlay", "combined",
)
_ENHANCE = ("brightness", "contrast", "saturation", "sharpness")
SMOOTH_KERNEL = np.array([[1, 1, 1], [1, 5, 1], [1, 1, 1]], dtype=np.float64) / 13.0


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    param: float | None = None
    children: tuple["TransformSpec", ...] = field(default=())

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        p = self.param
        if self.kind in ("crop", "resize") and not (p is not None and 0 < p <= 1):
            raise ValueError(f"{self.kind} area ratio must be in (0, 1], got {p}")
        if self.kind == "jpeg" and not (p is not None and 1 <= p <= 100 and float(p).is_integer()):
            raise ValueError(f"jpeg quality must be an integer in [1, 100], got {p}")
        if self.kind in _ENHANCE and not (p is not None and p >= 0):
            raise ValueError(f"{self.kind} factor must be >= 0, got {p}")
        if self.kind == "combined" and not self.children:
            raise ValueError("combined transform needs at least one child")

    @property
    def label(self) -> str:
        if self.kind == "combined":
            return "combined:" + "+".join(c.label for c in self.children)
        if self.param is None:
            return self.kind
        p = int(self.param) if float(self.param).is_integer() else self.param
        return f"{self.kind}:{p}"

    def __str__(self) -> str:
        return self.label

    @classmethod
    def parse(cls, text: str) -> "TransformSpec":
        text = text.strip()
        if text.startswith("combined:"):
            parts = text[len("combined:"):].split("+")
            return cls("combined", children=tuple(cls.parse(p) for p in parts))
        kind, _, raw = text.partition(":")
        if not raw:
            if kind in ("identity", "rotate90"):
                return cls(kind)
            if kind == "text_overlay":
                return cls(kind, 0)
            if kind == "combined":
                return COMBINED
            raise ValueError(f"transform {kind!r} needs a parameter, e.g. {kind}:0.5")
        return cls(kind, float(raw))


COMBINED = TransformSpec.parse("combined:crop:0.5+brightness:1.5+jpeg:80")

# Transformation set of the robustness tables.
ROBUSTNESS_SET = tuple(TransformSpec.parse(s) for s in (
    "identity", "crop:0.1", "jpeg:50", "resize:0.7", "brightness:2.0",
    "contrast:2.0", "saturation:2.0", "sharpness:2.0", "rotate90",
    "text_overlay:0",
)) + (COMBINED,)


def scaled_side(side: int, area_ratio: float) -> int:
    out = int(math.floor(side * math.sqrt(area_ratio)))
    if out < MIN_SIDE:
        raise ValueError(f"transform leaves a side of {out} px (< {MIN_SIDE})")
    return out


def center_crop_box(h: int, w: int, area_ratio: float) -> tuple[int, int, int, int]:
    """``(top, left, height, width)`` of the centred crop keeping ``area_ratio``."""
    ch, cw = scaled_side(h, area_ratio), scaled_side(w, area_ratio)
    return (h - ch) // 2, (w - cw) // 2, ch, cw


def _gray(x: np.ndarray) -> np.ndarray:
    return np.repeat(luminance(x)[..., None], 3, axis=-1)


def _blend(degenerate: np.ndarray, x: np.ndarray, f: float) -> np.ndarray:
    return np.clip(degenerate + f * (x - degenerate), 0.0, 1.0)


# 5x7 dot-matrix glyphs, one string of five bits per row.
GLYPHS = {
    "0": ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    "1": ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    "2": ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    "3": ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    "4": ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    "5": ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    "6": ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    "7": ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    "8": ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    "9": ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
    "A": ("01110", "10001", "10001", "11111", "10001", "10001", "10001"),
    "E": ("11111", "10000", "10000", "11110", "10000", "10000", "11111"),
    "K": ("10001", "10010", "10100", "11000", "10100", "10010", "10001"),
    "M": ("10001", "11011", "10101", "10101", "10001", "10001", "10001"),
    "R": ("11110", "10001", "10001", "11110", "10100", "10010", "10001"),
    "T": ("11111", "00100", "00100", "00100", "00100", "00100", "00100"),
    "W": ("10001", "10001", "10001", "10101", "10101", "10101", "01010"),
    " ": ("00000",) * 7,
}
_GLYPH_ARRAYS = {c: np.array([[b == "1" for b in row] for row in g]) for c, g in GLYPHS.items()}
_TEXT_CHARS = "".join(c for c in GLYPHS if c != " ")


def render_text(text: str) -> np.ndarray:
    """Boolean bitmap of ``text`` with one blank column between glyphs."""
    cols = []
    for i, ch in enumerate(text):
        if i:
            cols.append(np.zeros((7, 1), dtype=bool))
        cols.append(_GLYPH_ARRAYS[ch])
    return np.concatenate(cols, axis=1)


def text_overlay(x: np.ndarray, seed: int, max_area: float = 0.05) -> np.ndarray:
    """Stamp a seeded opaque dot-matrix string whose bounding box covers <= ``max_area``."""
    rng = np.random.default_rng(seed)
    h, w = x.shape[:2]
    text = "".join(rng.choice(list(_TEXT_CHARS), size=int(rng.integers(4, 9))))
    bitmap = render_text(text)
    bh, bw = bitmap.shape
    scale = int(math.floor(math.sqrt(max_area * h * w / (bh * bw))))
    scale = min(scale, w // bw, h // bh)
    if scale < 1:
        return x.copy()
    big = np.kron(bitmap, np.ones((scale, scale), dtype=bool))
    top = int(rng.integers(0, h - big.shape[0] + 1))
    left = int(rng.integers(0, w - big.shape[1] + 1))
    color = rng.random(3)
    out = x.copy()
    region = out[top: top + big.shape[0], left: left + big.shape[1]]
    region[big] = color
    return out


def apply_transform(x: np.ndarray, t: TransformSpec, rng_seed: int = 0) -> np.ndarray:
    """Apply edit ``t`` to image ``x``; deterministic for a fixed ``rng_seed``."""
    kind, p = t.kind, t.param
    h, w = x.shape[:2]
    if kind == "identity":
        return x.copy()
    if kind == "crop":
        top, left, ch, cw = center_crop_box(h, w, p)
        return x[top: top + ch, left: left + cw].copy()
    if kind == "resize":
        return np.clip(resize(x, scaled_side(h, p), scaled_side(w, p)), 0.0, 1.0)
    if kind == "rotate90":
        return np.ascontiguousarray(np.rot90(x, 1, axes=(0, 1)))
    if kind == "jpeg":
        return jpeg_roundtrip(x, int(p))
    if kind == "brightness":
        return np.clip(p * x, 0.0, 1.0)
    if kind == "contrast":
        return _blend(np.full_like(x, luminance(x).mean()), x, p)
    if kind == "saturation":
        return _blend(_gray(x), x, p)
    if kind == "sharpness":
        smooth = ndimage.correlate(x, SMOOTH_KERNEL[..., None], mode="reflect")
        return _blend(smooth, x, p)
    if kind == "text_overlay":
        return text_overlay(x, int(rng_seed + (p or 0)))
    if kind == "combined":
        out = x
        for i, child in enumerate(t.children):
            out = apply_transform(out, child, rng_seed + i)
        return out
    raise ValueError(f"unknown transform kind {kind!r}")


def output_shape(t: TransformSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    h, w = shape[:2]
    rest = tuple(shape[2:])
    if t.kind in ("crop", "resize"):
        return (scaled_side(h, t.param), scaled_side(w, t.param)) + rest
    if t.kind == "rotate90":
        return (w, h) + rest
    if t.kind == "combined":
        for child in t.children:
            shape = output_shape(child, shape)
        return tuple(shape)
    return tuple(shape)


def linear_adjoint(t: TransformSpec, g: np.ndarray, in_shape: tuple[int, ...]) -> np.ndarray:
    """Back-propagate ``g`` (gradient at the output of ``t``) to its input.

    Geometric edits and brightness are handled exactly, ignoring clamping.
    Everything else, JPEG included, passes the gradient straight through.
    Works on 2-D planes as well as ``(H, W, 3)`` arrays.
    """
    h, w = in_shape[:2]
    if t.kind == "crop":
        top, left, ch, cw = center_crop_box(h, w, t.param)
        out = np.zeros(tuple(in_shape[:2]) + g.shape[2:])
        out[top: top + ch, left: left + cw] = g
        return out
    if t.kind == "resize":
        rh = resize_matrix(h, g.shape[0])
        rw = resize_matrix(w, g.shape[1])
        if g.ndim == 2:
            return rh.T @ g @ rw
        return np.einsum("ji,jkc,kl->ilc", rh, g, rw, optimize=True)
    if t.kind == "rotate90":
        return np.rot90(g, -1, axes=(0, 1))
    if t.kind == "brightness":
        return t.param * g
    if t.kind == "combined":
        shapes = [tuple(in_shape)]
        for child in t.children[:-1]:
            shapes.append(output_shape(child, shapes[-1]))
        for child, shape in zip(reversed(t.children), reversed(shapes)):
            g = linear_adjoint(child, g, shape)
        return g
    return g
