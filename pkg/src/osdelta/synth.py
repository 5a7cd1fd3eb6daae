"""Seeded synthetic fine-tuning updates: low rank + sparse spikes + noise."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .matio import LayerSet
from .osd import importance_from_gradient


@dataclass(frozen=True)
class SynthLayer:
    pretrained: np.ndarray
    delta: np.ndarray
    gradient: np.ndarray
    importance: np.ndarray

    @property
    def finetuned(self) -> np.ndarray:
        return (self.pretrained + self.delta).astype(np.float32)


def _support(rng, rows, cols, density):
    # every column keeps at least one entry so no component vanishes
    mask = rng.random((rows, cols)) < density
    mask[rng.integers(0, rows, size=cols), np.arange(cols)] = True
    return mask


def planted_layer(rng: np.random.Generator, n: int, d: int, true_rank: int = 8,
                  spike_frac: float = 0.01, noise: float = 0.0,
                  scale: float = 1e-2, factor_density: float = 0.2,
                  spike_size: float = 1.0, importance_spread: float = 0.5,
                  grad_alignment: float = 1.0) -> SynthLayer:
    """One synthetic layer.

    The update is a rank-``true_rank`` product of sparse Gaussian factors
    (each entry nonzero with probability ``factor_density``, component ``i``
    weighted by ``1/i``) rescaled to RMS ``scale``, plus ``spike_frac * n * d``
    random spikes of magnitude ``spike_size * scale * (1 + Exp(1))``, plus
    Gaussian noise of RMS ``noise * scale``.

    The gradient is Gaussian with log-normal row and column scales
    (``importance_spread``) plus ``grad_alignment`` times the normalized
    update, since fine-tuning updates are accumulated gradients. The
    importance map is ``|gradient * finetuned_weights|``.
    """
    if n < 1 or d < 1:
        raise ArgumentError(f"degenerate size {n}x{d}")
    if not 0 <= true_rank <= min(n, d):
        raise ArgumentError(f"true_rank={true_rank} outside [0, {min(n, d)}]")
    if not 0.0 <= spike_frac <= 1.0 or noise < 0:
        raise ArgumentError("spike_frac must be in [0, 1] and noise >= 0")

    delta = np.zeros((n, d), dtype=np.float64)
    if true_rank:
        u = rng.standard_normal((n, true_rank)) * _support(rng, n, true_rank, factor_density)
        v = rng.standard_normal((d, true_rank)) * _support(rng, d, true_rank, factor_density)
        s = 1.0 / np.arange(1, true_rank + 1)
        low = (u * s) @ v.T
        delta += low * (scale / np.sqrt(np.mean(low ** 2)))
    n_spikes = int(round(spike_frac * n * d))
    if n_spikes:
        pos = rng.choice(n * d, size=n_spikes, replace=False)
        mags = spike_size * scale * (1.0 + rng.exponential(size=n_spikes))
        delta.ravel()[pos] += mags * rng.choice([-1.0, 1.0], size=n_spikes)
    if noise:
        delta += noise * scale * rng.standard_normal((n, d))

    w = rng.standard_normal((n, d)) / np.sqrt(d)
    row = rng.lognormal(0.0, importance_spread, size=(n, 1))
    col = rng.lognormal(0.0, importance_spread, size=(1, d))
    g = rng.standard_normal((n, d)) * row * col
    if grad_alignment:
        rms = np.sqrt(np.mean(delta ** 2)) or 1.0
        g = g + grad_alignment * delta / rms
    delta = delta.astype(np.float32)
    w = w.astype(np.float32)
    g = g.astype(np.float32)
    z = importance_from_gradient(g, w + delta)
    return SynthLayer(w, delta, g, z)


def planted_model(seed: int, num_layers: int, n: int, d: int, **kw) -> dict[str, LayerSet]:
    """Seeded multi-layer model keyed by manifest role."""
    if num_layers < 1:
        raise ArgumentError(f"need at least one layer, got {num_layers}")
    rng = np.random.default_rng(seed)
    layers = [planted_layer(rng, n, d, **kw) for _ in range(num_layers)]
    ids = [f"layer{i}" for i in range(num_layers)]

    def collect(attr):
        return LayerSet.from_pairs((lid, getattr(lay, attr)) for lid, lay in zip(ids, layers))

    return {
        "pretrained": collect("pretrained"),
        "finetuned": collect("finetuned"),
        "delta": collect("delta"),
        "gradient": collect("gradient"),
        "importance": collect("importance"),
    }
