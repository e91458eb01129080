"""Random photometric and geometric augmentation of line images."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from ..errors import ConfigError
from .render import LineImage

ALL_AUGMENTATIONS = ("blur_sharpen", "elastic", "shear", "rotate", "translate", "scale", "gamma", "background")

# Hard limits for each sampled range; a spec outside them is rejected.
SAFE_BOUNDS = {
    "blur_sigma": (0.0, 2.0),
    "sharpen_amount": (0.0, 2.0),
    "elastic_alpha": (0.0, 8.0),
    "elastic_sigma": (1.0, 20.0),
    "shear": (-0.3, 0.3),
    "rotate_deg": (-5.0, 5.0),
    "translate_px": (-8.0, 8.0),
    "scale": (0.8, 1.2),
    "gamma": (0.5, 2.0),
    "background_opacity": (0.0, 0.6),
}


@dataclass(frozen=True)
class AugmentationSpec:
    """Which augmentations run and the (low, high) range each samples from.

    Equal bounds pin a value. ``seed`` makes the outcome reproducible.
    """

    enabled: frozenset = field(default_factory=lambda: frozenset(ALL_AUGMENTATIONS))
    blur_sigma: tuple[float, float] = (0.0, 0.8)
    sharpen_amount: tuple[float, float] = (0.0, 0.8)
    elastic_alpha: tuple[float, float] = (0.0, 1.5)
    elastic_sigma: tuple[float, float] = (4.0, 8.0)
    shear: tuple[float, float] = (-0.15, 0.15)
    rotate_deg: tuple[float, float] = (-1.0, 1.0)
    translate_px: tuple[float, float] = (-2.0, 2.0)
    scale: tuple[float, float] = (0.92, 1.05)
    gamma: tuple[float, float] = (0.7, 1.4)
    background_opacity: tuple[float, float] = (0.0, 0.3)
    seed: int = 0

    def validate(self) -> None:
        unknown = set(self.enabled) - set(ALL_AUGMENTATIONS)
        if unknown:
            raise ConfigError(f"unknown augmentations: {sorted(unknown)}")
        for name, (lo_safe, hi_safe) in SAFE_BOUNDS.items():
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
            if lo < lo_safe or hi > hi_safe:
                raise ConfigError(f"{name} range ({lo}, {hi}) outside safe bounds ({lo_safe}, {hi_safe})")

    def with_seed(self, seed: int) -> "AugmentationSpec":
        return replace(self, seed=seed)


NO_AUGMENTATION = AugmentationSpec(enabled=frozenset())


def _affine(ink: np.ndarray, shear: float, angle_deg: float, scale: float, tx: float, ty: float) -> np.ndarray:
    h, w = ink.shape
    theta = np.deg2rad(angle_deg)
    c, s = np.cos(theta), np.sin(theta)
    # forward map in (row, col) coordinates about the image centre
    rot = np.array([[c, -s], [s, c]])
    shr = np.array([[1.0, 0.0], [-shear, 1.0]])
    fwd = rot @ shr * scale
    inv = np.linalg.inv(fwd)
    centre = np.array([(h - 1) / 2, (w - 1) / 2])
    offset = centre - inv @ (centre + np.array([ty, tx]))
    return ndimage.affine_transform(ink, inv, offset=offset, order=1, mode="constant", cval=0.0)


def _elastic(ink: np.ndarray, alpha: float, sigma: float, rng) -> np.ndarray:
    fields = []
    for _ in range(2):
        f = ndimage.gaussian_filter(rng.uniform(-1, 1, ink.shape), sigma, mode="constant")
        peak = np.abs(f).max()
        fields.append(f / peak * alpha if peak > 0 else f)
    rows, cols = np.meshgrid(np.arange(ink.shape[0]), np.arange(ink.shape[1]), indexing="ij")
    coords = np.array([rows + fields[0], cols + fields[1]])
    return ndimage.map_coordinates(ink, coords, order=1, mode="constant", cval=0.0)


def _value_noise(shape, rng, cell: int = 16) -> np.ndarray:
    gh = max(shape[0] // cell, 1) + 2
    gw = max(shape[1] // cell, 1) + 2
    grid = rng.uniform(0, 1, (gh, gw))
    zoom = ((shape[0]) / (gh - 1), (shape[1]) / (gw - 1))
    tex = ndimage.zoom(grid, zoom, order=1)[: shape[0], : shape[1]]
    if tex.shape != tuple(shape):
        tex = np.pad(tex, ((0, shape[0] - tex.shape[0]), (0, shape[1] - tex.shape[1])), mode="edge")
    return tex


def augment(img: LineImage, spec: AugmentationSpec) -> LineImage:
    """Apply the enabled augmentations in a fixed order.

    Geometry (shear, rotate, scale, translate) and elastic warping act on
    the ink map; blur/sharpen, gamma and background blending act on
    intensities. The transcription is never touched.
    """
    spec.validate()
    on = spec.enabled
    if not on:
        return LineImage(img.pixels.copy(), img.text)
    rng = np.random.default_rng(spec.seed)

    def draw(name):
        lo, hi = getattr(spec, name)
        return float(rng.uniform(lo, hi)) if hi > lo else float(lo)

    ink = 1.0 - img.pixels.astype(np.float64) / 255.0
    if on & {"shear", "rotate", "scale", "translate"}:
        shear = draw("shear") if "shear" in on else 0.0
        angle = draw("rotate_deg") if "rotate" in on else 0.0
        scale = draw("scale") if "scale" in on else 1.0
        tx = draw("translate_px") if "translate" in on else 0.0
        ty = draw("translate_px") if "translate" in on else 0.0
        if (shear, angle, scale, tx, ty) != (0.0, 0.0, 1.0, 0.0, 0.0):
            ink = _affine(ink, shear, angle, scale, tx, ty)
    if "elastic" in on:
        alpha, sigma = draw("elastic_alpha"), draw("elastic_sigma")
        if alpha > 0:
            ink = _elastic(ink, alpha, sigma, rng)
    out = 255.0 * (1.0 - np.clip(ink, 0.0, 1.0))
    if "blur_sharpen" in on:
        if rng.random() < 0.5:
            sigma = draw("blur_sigma")
            if sigma > 0:
                out = ndimage.gaussian_filter(out, sigma)
        else:
            amount = draw("sharpen_amount")
            if amount > 0:
                out = out + amount * (out - ndimage.gaussian_filter(out, 1.0))
        out = np.clip(out, 0.0, 255.0)
    if "gamma" in on:
        g = draw("gamma")
        if g != 1.0:
            out = 255.0 * np.power(out / 255.0, g)
    if "background" in on:
        opacity = draw("background_opacity")
        if opacity > 0:
            tex = _value_noise(out.shape, rng)
            out = out * (1.0 - opacity * tex)
    return LineImage(np.clip(np.round(out), 0, 255).astype(np.uint8), img.text)
