"""Colour transfer: pixel colours as 3-D clouds, mapped pixel by pixel.

Images are binary PPM (P6, maxval 255).  Colours are normalised to [-1, 1]
on the way in and clamped and rounded back to bytes on the way out.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .oracle import energy_distance
from .solvers import TrainState

DATA_DIR = Path(__file__).parent / "data"
FIXTURE_SOURCE = DATA_DIR / "fixture_source.ppm"
FIXTURE_TARGET = DATA_DIR / "fixture_target.ppm"

SCORE_SAMPLES = 2000
SCORE_SEED = 0
_CHUNK = 8192


class ImageError(ValueError):
    pass


@dataclass
class ImageRGB:
    width: int
    height: int
    pixels: np.ndarray  # (height, width, 3) uint8, row-major

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.dtype != np.uint8 or px.shape != (self.height, self.width, 3):
            raise ImageError(
                f"expected uint8 pixels of shape {(self.height, self.width, 3)}, got {px.dtype} {px.shape}"
            )
        self.pixels = px

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()


_HEADER = re.compile(rb"P6(?:\s+|#[^\n]*\n)+?(\d+)(?:\s+|#[^\n]*\n)+?(\d+)(?:\s+|#[^\n]*\n)+?(\d+)\s")


def load_image(path) -> ImageRGB:
    data = Path(path).read_bytes()
    m = _HEADER.match(data)
    if m is None:
        raise ImageError(f"{path}: not a binary PPM (P6) file")
    width, height, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ImageError(f"{path}: only maxval 255 is supported, got {maxval}")
    if width < 1 or height < 1:
        raise ImageError(f"{path}: empty image {width}x{height}")
    payload = data[m.end():]
    need = width * height * 3
    if len(payload) < need:
        raise ImageError(f"{path}: truncated payload, {len(payload)} of {need} bytes")
    if len(payload) > need:
        raise ImageError(f"{path}: {len(payload) - need} trailing bytes after pixel data")
    px = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()
    return ImageRGB(width, height, px)


def save_image(img: ImageRGB, path):
    header = f"P6\n{img.width} {img.height}\n255\n".encode()
    Path(path).write_bytes(header + img.tobytes())


def image_to_cloud(img: ImageRGB) -> np.ndarray:
    return img.pixels.reshape(-1, 3).astype(np.float64) * (2.0 / 255.0) - 1.0


def cloud_to_image(cloud, width: int, height: int) -> ImageRGB:
    """Clamp to [-1, 1] and round to the nearest byte."""
    c = np.clip(np.asarray(cloud, dtype=np.float64), -1.0, 1.0)
    v = np.rint((c + 1.0) * (255.0 / 2.0)).astype(np.uint8)
    return ImageRGB(width, height, v.reshape(height, width, 3))


def pixel_sampler(cloud):
    """Uniform draws with replacement, so each colour counts by pixel frequency."""
    cloud = np.asarray(cloud, dtype=np.float64)

    def draw(n, rng):
        return cloud[rng.integers(0, len(cloud), n)]
    return draw


def apply_generator(G: nn.GeneratorNet, cloud, z) -> np.ndarray:
    out = np.empty_like(cloud)
    for s in range(0, len(cloud), _CHUNK):
        out[s : s + _CHUNK] = nn.generator_forward(G, cloud[s : s + _CHUNK], z[s : s + _CHUNK])
    return out


def transfer(state: TrainState, src_img: ImageRGB, z_policy: str = "fixed", seed=0) -> ImageRGB:
    """Map every pixel through ``G_xy``.

    ``fixed`` shares one noise vector across the image, which makes the result a
    pure per-pixel colour map; ``per-pixel`` draws fresh noise for each pixel.
    """
    G = state.nets["G_xy"]
    if G.d_in != 3:
        raise ValueError(f"colour transfer needs a model with d_in = 3, this one has d_in = {G.d_in}")
    cloud = image_to_cloud(src_img)
    rng = np.random.default_rng(seed)
    if z_policy == "fixed":
        z = np.repeat(rng.uniform(-1.0, 1.0, (1, G.d_z)), len(cloud), axis=0)
    elif z_policy == "per-pixel":
        z = rng.uniform(-1.0, 1.0, (len(cloud), G.d_z))
    else:
        raise ValueError(f"unknown z policy {z_policy!r}; use 'fixed' or 'per-pixel'")
    return cloud_to_image(apply_generator(G, cloud, z), src_img.width, src_img.height)


def _subsample(img: ImageRGB, n: int, seed) -> np.ndarray:
    cloud = image_to_cloud(img)
    if len(cloud) <= n:
        return cloud
    return cloud[np.random.default_rng(seed).choice(len(cloud), n, replace=False)]


def histogram_match_score(a: ImageRGB, b: ImageRGB, n: int = SCORE_SAMPLES, seed=SCORE_SEED) -> float:
    """Energy distance between fixed-seed colour subsamples of two images.

    Each image is subsampled by its own generator seeded identically, so the
    score is symmetric and equal images score exactly zero.
    """
    return energy_distance(_subsample(a, n, seed), _subsample(b, n, seed))


# ---------------------------------------------------------------------------
# bundled fixture

def make_fixture_pair(width: int = 64, height: int = 48) -> tuple[ImageRGB, ImageRGB]:
    """A warm, posterised landscape and a cool, smoothly shaded one.

    The source uses a few flat colour bands; the target varies continuously,
    so reaching it requires a one-to-many colour map.
    """
    rng = np.random.default_rng(7)
    yy, xx = np.mgrid[0:height, 0:width] / np.array([height - 1, width - 1])[:, None, None]
    horizon = 0.55 + 0.08 * np.sin(2 * np.pi * xx * 1.5)
    sky = yy < horizon

    src = np.empty((height, width, 3))
    t = np.clip(yy / horizon, 0, 1)
    src[sky] = (np.array([0.95, 0.55, 0.25]) * (1 - t[sky, None]) + np.array([0.55, 0.25, 0.45]) * t[sky, None])
    g = np.clip((yy - horizon) / (1 - horizon), 0, 1)
    src[~sky] = np.array([0.45, 0.3, 0.15]) * (1 - 0.6 * g[~sky, None])
    src = np.floor(src * 5) / 5 + 0.1  # posterise to flat bands

    tgt = np.empty((height, width, 3))
    tgt[sky] = (np.array([0.55, 0.75, 0.95]) * (1 - t[sky, None]) + np.array([0.15, 0.3, 0.6]) * t[sky, None])
    tgt[~sky] = (np.array([0.2, 0.55, 0.3]) * (1 - g[~sky, None]) + np.array([0.05, 0.2, 0.1]) * g[~sky, None])
    tgt += 0.06 * rng.standard_normal(tgt.shape)

    to_img = lambda a: ImageRGB(width, height, np.rint(np.clip(a, 0, 1) * 255).astype(np.uint8))
    return to_img(src), to_img(tgt)


def write_fixture_pair(directory=DATA_DIR):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    src, tgt = make_fixture_pair()
    save_image(src, directory / FIXTURE_SOURCE.name)
    save_image(tgt, directory / FIXTURE_TARGET.name)
