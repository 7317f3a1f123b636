"""Synthetic, offline fixture data.

Writes 16 style paintings (4 artists x 2 periods x 2 genres) and 8 content
photos plus both manifests. Each artist owns a distinct hue, so the style
set is colour-separable by construction. Period scales brightness and genre
selects a texture. Cezanne is never painted in surrealism, which leaves that
combination for zero-shot checks.
"""

import json
import logging
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np
from PIL import Image

from painting_data import CONTENT_MANIFEST, STYLE_MANIFEST

logger = logging.getLogger(__name__)

FIXTURE_ARTIST_COLORS: Dict[str, Tuple[int, int, int]] = {
    "picasso": (40, 70, 210),
    "cezanne": (40, 170, 60),
    "monet": (215, 80, 175),
    "vangogh": (235, 200, 30),
}
FIXTURE_ARTIST_GENRES: Dict[str, Tuple[str, str]] = {
    "picasso": ("cubism", "surrealism"),
    "cezanne": ("cubism", "impressionism"),
    "monet": ("impressionism", "surrealism"),
    "vangogh": ("impressionism", "surrealism"),
}
FIXTURE_PERIOD_BRIGHTNESS: Dict[str, float] = {"early": 0.7, "late": 1.0}
N_CONTENT_IMAGES = 8
NOISE_LEVEL = 6.0


def _texture(genre: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """Modulation map in [0, 1] characteristic of a genre."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    if genre == "cubism":
        block = max(2, size // 8)
        cells = rng.random((size // block + 1, size // block + 1))
        return np.kron(cells, np.ones((block, block)))[:size, :size]
    if genre == "impressionism":
        texture = np.zeros((size, size))
        for _ in range(size):
            cy, cx = rng.random(2)
            radius = rng.uniform(0.02, 0.06)
            texture[(yy - cy) ** 2 + (xx - cx) ** 2 < radius ** 2] = rng.random()
        return texture
    # surrealism: smooth swirl
    phase = rng.uniform(0, 2 * np.pi)
    return 0.5 + 0.5 * np.sin(6 * np.hypot(yy - 0.5, xx - 0.5) * np.pi + phase)


def _style_image(artist: str, period: str, genre: str, size: int, rng: np.random.Generator) -> np.ndarray:
    color = np.array(FIXTURE_ARTIST_COLORS[artist], dtype=np.float64)
    modulation = 0.6 + 0.4 * _texture(genre, size, rng)
    pixels = color[None, None, :] * modulation[..., None] * FIXTURE_PERIOD_BRIGHTNESS[period]
    pixels += rng.normal(0, NOISE_LEVEL, pixels.shape)
    return np.clip(np.round(pixels), 0, 255).astype(np.uint8)


def _content_image(size: int, rng: np.random.Generator) -> np.ndarray:
    """Muted gradient with a few grey shapes; no artist hue."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    angle = rng.uniform(0, 2 * np.pi)
    base = 90 + 80 * (np.cos(angle) * xx + np.sin(angle) * yy)
    for _ in range(3):
        cy, cx = rng.random(2)
        radius = rng.uniform(0.1, 0.25)
        base[(yy - cy) ** 2 + (xx - cx) ** 2 < radius ** 2] = rng.uniform(40, 220)
    tint = rng.uniform(-10, 10, size=3)
    pixels = base[..., None] + tint[None, None, :] + rng.normal(0, NOISE_LEVEL, (size, size, 3))
    return np.clip(np.round(pixels), 0, 255).astype(np.uint8)


def write_fixture(root: Union[str, Path], seed: int = 0, image_size: int = 64) -> Tuple[Path, Path]:
    """Write the fixture under `root`; returns (style manifest, content manifest)."""
    root = Path(root)
    (root / "style").mkdir(parents=True, exist_ok=True)
    (root / "content").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    style_lines = []
    for artist, genres in FIXTURE_ARTIST_GENRES.items():
        for period in FIXTURE_PERIOD_BRIGHTNESS:
            for genre in genres:
                relative = f"style/{artist}_{period}_{genre}.png"
                Image.fromarray(_style_image(artist, period, genre, image_size, rng)).save(root / relative)
                style_lines.append({"path": relative, "artist": artist, "period": period, "genre": genre})

    content_lines = []
    for i in range(N_CONTENT_IMAGES):
        relative = f"content/content_{i:02d}.png"
        Image.fromarray(_content_image(image_size, rng)).save(root / relative)
        content_lines.append({"path": relative})

    style_manifest = root / STYLE_MANIFEST
    content_manifest = root / CONTENT_MANIFEST
    style_manifest.write_text("".join(json.dumps(r) + "\n" for r in style_lines), encoding="utf-8")
    content_manifest.write_text("".join(json.dumps(r) + "\n" for r in content_lines), encoding="utf-8")
    logger.info(f"Wrote fixture with {len(style_lines)} style and {len(content_lines)} content images to {root}")
    return style_manifest, content_manifest
