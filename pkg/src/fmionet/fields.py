"""Synthetic heterogeneous reservoir property maps.

Gaussian random fields stand in for geostatistical permeability modeling:
log-permeability is smoothed white noise scaled into the physical range,
anisotropy ratios are assigned per permeability bin, and porosity follows
log-permeability loosely plus Gaussian noise.
"""
from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .records import FieldMaps

LOG10_KX_BOUNDS = (-3.0, 4.0)        # 0.001 .. 10000 mD
ANISO_BOUNDS = (1.0, 150.0)
POROSITY_NOISE_VAR = 0.001
THICKNESS_BOUNDS = (12.5, 200.0)


def gen_random_fields(seed, nz: int, nr: int,
                      correlation_lengths=(2.0, 6.0),
                      mean: float = 1.5, std: float = 1.2,
                      n_aniso_bins: int = 6,
                      thickness: float | None = None) -> FieldMaps:
    """Draw one case's (kx, ky, porosity) maps on an (nz, nr) grid.

    ``mean`` and ``std`` are in log10-mD units; ``correlation_lengths`` are
    smoothing lengths in cells for the (z, r) axes. ``std == 0`` gives a
    homogeneous map at ``mean``. Raises on negative std.
    """
    if nz < 1 or nr < 1:
        raise ValueError(f"invalid grid dims ({nz}, {nr})")
    if std < 0:
        raise ValueError("std must be nonnegative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    if thickness is None:
        thickness = float(rng.uniform(*THICKNESS_BOUNDS))

    if std == 0:
        log_kx = np.full((nz, nr), mean)
    else:
        noise = rng.standard_normal((nz, nr))
        smooth = gaussian_filter(noise, sigma=correlation_lengths, mode="reflect")
        smooth = (smooth - smooth.mean()) / max(smooth.std(), 1e-12)
        log_kx = mean + std * smooth
    log_kx = np.clip(log_kx, *LOG10_KX_BOUNDS)
    kx = 10.0 ** log_kx

    # bin log-kx into quantile classes, one anisotropy ratio per class
    if n_aniso_bins < 1:
        raise ValueError("n_aniso_bins must be >= 1")
    ratios = rng.uniform(*ANISO_BOUNDS, size=n_aniso_bins)
    if n_aniso_bins == 1 or std == 0:
        bin_idx = np.zeros((nz, nr), dtype=int)
    else:
        edges = np.quantile(log_kx, np.linspace(0, 1, n_aniso_bins + 1)[1:-1])
        bin_idx = np.digitize(log_kx, edges)
    ky = kx / ratios[bin_idx]

    # porosity loosely correlated with log-permeability, plus noise
    base = 0.05 + 0.30 * (log_kx - LOG10_KX_BOUNDS[0]) / (LOG10_KX_BOUNDS[1] - LOG10_KX_BOUNDS[0])
    phi = base + rng.normal(0.0, np.sqrt(POROSITY_NOISE_VAR), size=(nz, nr))
    phi = np.clip(phi, 0.01, 0.45)

    return FieldMaps(kx=kx.astype(np.float64), ky=ky.astype(np.float64),
                     phi=phi.astype(np.float64), thickness=thickness)
