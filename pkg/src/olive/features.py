"""Binary feature extraction from screens."""

from __future__ import annotations

import numpy as np

VAE_THRESHOLD = 0.9


def extract_tile_basic(screen: np.ndarray, grid: int = 8, levels: int = 8) -> np.ndarray:
    """Tile/intensity-bin atoms: bit ``(c, v)`` is set iff tile ``c`` has mean intensity in bin ``v``.

    Returns a boolean vector of length ``grid * grid * levels`` with exactly
    ``grid * grid`` bits set.
    """
    h, w = screen.shape
    if grid <= 0 or h % grid or w % grid:
        raise ValueError(f"grid={grid} does not divide a {h}x{w} screen")
    th, tw = h // grid, w // grid
    means = screen.reshape(grid, th, grid, tw).mean(axis=(1, 3), dtype=np.float64) / 255.0
    bins = np.minimum((means * levels).astype(np.int64), levels - 1).ravel()
    bits = np.zeros(grid * grid * levels, dtype=bool)
    bits[np.arange(grid * grid) * levels + bins] = True
    return bits


def logits_to_bits(logits: np.ndarray, threshold: float = VAE_THRESHOLD) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if np.isnan(logits).any():
        raise FloatingPointError("NaN in encoder logits")
    return 1.0 / (1.0 + np.exp(-logits)) > threshold


def extract_vae(screen: np.ndarray, model, threshold: float = VAE_THRESHOLD) -> np.ndarray:
    """Deterministic VAE features: bit j set iff sigmoid(logit_j) > threshold."""
    return logits_to_bits(model.encode(screen[None])[0], threshold)


class TileExtractor:
    kind = "tile-basic"

    def __init__(self, grid: int = 8, levels: int = 8):
        self.grid, self.levels = grid, levels
        self.size = grid * grid * levels

    def __call__(self, screen: np.ndarray) -> np.ndarray:
        return extract_tile_basic(screen, self.grid, self.levels)


class VaeExtractor:
    """Adapter over a trained VAE.  Results are cached by screen bytes.

    The model must not be retrained while an extractor is in use; build a new
    extractor after every retrain.
    """

    kind = "vae"

    def __init__(self, model, threshold: float = VAE_THRESHOLD):
        self.model, self.threshold = model, threshold
        self.size = model.latent
        self._cache: dict[bytes, np.ndarray] = {}

    def __call__(self, screen: np.ndarray) -> np.ndarray:
        key = screen.tobytes()
        bits = self._cache.get(key)
        if bits is None:
            bits = extract_vae(screen, self.model, self.threshold)
            self._cache[key] = bits
        return bits
