"""Dataset schema: per-case field maps, scalar parameters, masks, outputs,
and the normalization between physical units and model-ready tensors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEPTH_M = 200.0          # vertical extent covered by the (nz, nr) grid

SCALAR_RANGES = {
    "q": (0.2, 2.0),             # injection rate, MT/y
    "p_init": (100.0, 300.0),    # initial pressure at reservoir top, bar
    "temperature": (35.0, 170.0),  # deg C
    "s_wi": (0.1, 0.3),          # irreducible water saturation
    "lam": (0.3, 0.7),           # capillary-pressure scaling factor
    "perf_top": (0.0, 200.0),    # m below reservoir top
    "perf_bottom": (0.0, 200.0),
}
SCALAR_ORDER = tuple(SCALAR_RANGES)

LOG10_KX_BOUNDS = (-3.0, 4.0)
# ky can undershoot kx by the max anisotropy ratio
LOG10_KY_BOUNDS = (-3.0 - math.log10(150.0), 4.0)


@dataclass
class ScalarParams:
    q: float
    p_init: float
    temperature: float
    s_wi: float
    lam: float
    perf_top: float
    perf_bottom: float

    def validate(self) -> None:
        for name in SCALAR_ORDER:
            lo, hi = SCALAR_RANGES[name]
            v = getattr(self, name)
            if not (lo <= v <= hi):
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")
        if self.perf_top > self.perf_bottom:
            raise ValueError("perf_top must lie above perf_bottom")

    def as_vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in SCALAR_ORDER], dtype=np.float64)

    @classmethod
    def from_vector(cls, vec) -> "ScalarParams":
        return cls(**{n: float(v) for n, v in zip(SCALAR_ORDER, vec)})

    @classmethod
    def sample(cls, rng: np.random.Generator, thickness: float) -> "ScalarParams":
        vals = {n: float(rng.uniform(*SCALAR_RANGES[n])) for n in SCALAR_ORDER}
        a, b = sorted(rng.uniform(0.0, thickness, size=2))
        vals["perf_top"], vals["perf_bottom"] = float(a), float(b)
        return cls(**vals)


@dataclass
class FieldMaps:
    kx: np.ndarray        # (nz, nr), mD
    ky: np.ndarray        # (nz, nr), mD
    phi: np.ndarray       # (nz, nr), fraction
    thickness: float      # m, in [12.5, 200]


@dataclass
class SampleRecord:
    """One reservoir case: inputs, mask and output snapshot stacks."""

    fields: FieldMaps
    scalars: ScalarParams
    mask: np.ndarray      # (nz, nr) bool, active reservoir rows
    sg: np.ndarray        # (n_t, nz, nr) gas saturation in [0, 1]
    dp: np.ndarray        # (n_t, nz, nr) pressure buildup, bar
    times_days: tuple

    @property
    def grid_shape(self) -> tuple:
        return self.mask.shape

    def validate(self) -> None:
        self.scalars.validate()
        nz, nr = self.mask.shape
        for name, arr in (("kx", self.fields.kx), ("ky", self.fields.ky),
                          ("phi", self.fields.phi)):
            if arr.shape != (nz, nr):
                raise ValueError(f"{name} shape {arr.shape} != mask shape {(nz, nr)}")
        n_t = len(self.times_days)
        if self.sg.shape != (n_t, nz, nr) or self.dp.shape != (n_t, nz, nr):
            raise ValueError("snapshot stacks inconsistent with schedule/grid")
        out = ~self.mask
        if np.any(self.sg[:, out] != 0) or np.any(self.dp[:, out] != 0):
            raise ValueError("outputs must be zero outside the mask")
        if self.sg.min() < 0 or self.sg.max() > 1 + 1e-6:
            raise ValueError("gas saturation outside [0, 1]")


def build_mask(thickness: float, nz: int, cell_height: float, nr: int = 1) -> np.ndarray:
    """Active-cell map: the top ceil(thickness / cell_height) rows are true."""
    if thickness <= 0:
        raise ValueError("thickness must be positive")
    n_active = min(nz, math.ceil(thickness / cell_height - 1e-9))
    row = np.zeros(nz, dtype=bool)
    row[:n_active] = True
    return np.repeat(row[:, None], nr, axis=1)


def apply_mask(fields: FieldMaps, mask: np.ndarray) -> FieldMaps:
    """Zero property maps outside the active region (in place)."""
    out = ~mask
    for arr in (fields.kx, fields.ky, fields.phi):
        arr[out] = 0.0
    return fields


class Normalizer:
    """Physical units <-> model inputs.

    Per-channel transforms: log10 + min-max for the permeability maps,
    identity for porosity, normalized cell-index coordinates for the two
    grid channels, Table-range min-max for scalars. SG targets are already
    in [0, 1]; dP is scaled by the dataset maximum (fit on training data).
    """

    def __init__(self, dp_max: float = 1.0):
        self.dp_max = float(dp_max)

    @classmethod
    def fit(cls, records) -> "Normalizer":
        dp_max = max((float(r.dp.max()) for r in records), default=1.0)
        return cls(dp_max=max(dp_max, 1e-12))

    # -- fields ------------------------------------------------------------
    def field_channels(self, record: SampleRecord) -> np.ndarray:
        """(nz, nr, 5): normalized log-kx, log-ky, porosity, r-coord, z-coord.

        Log channels are 0 outside the mask (where permeability is 0).
        """
        nz, nr = record.grid_shape
        mask = record.mask
        out = np.zeros((nz, nr, 5), dtype=np.float64)
        lo, hi = LOG10_KX_BOUNDS
        with np.errstate(divide="ignore"):
            out[..., 0] = np.where(mask, (np.log10(np.maximum(record.fields.kx, 1e-30)) - lo) / (hi - lo), 0.0)
        lo_y, hi_y = LOG10_KY_BOUNDS
        with np.errstate(divide="ignore"):
            out[..., 1] = np.where(mask, (np.log10(np.maximum(record.fields.ky, 1e-30)) - lo_y) / (hi_y - lo_y), 0.0)
        out[..., 2] = record.fields.phi
        out[..., 3] = np.arange(nr)[None, :] / max(nr - 1, 1)
        out[..., 4] = np.arange(nz)[:, None] / max(nz - 1, 1)
        return out

    def invert_field_channels(self, channels: np.ndarray, mask: np.ndarray) -> tuple:
        """(kx, ky, phi) maps from normalized channels; zero outside mask."""
        lo, hi = LOG10_KX_BOUNDS
        kx = np.where(mask, 10.0 ** (channels[..., 0] * (hi - lo) + lo), 0.0)
        lo_y, hi_y = LOG10_KY_BOUNDS
        ky = np.where(mask, 10.0 ** (channels[..., 1] * (hi_y - lo_y) + lo_y), 0.0)
        phi = channels[..., 2].copy()
        return kx, ky, phi

    # -- scalars -----------------------------------------------------------
    def scalar_vector(self, scalars: ScalarParams) -> np.ndarray:
        vec = scalars.as_vector()
        out = np.empty_like(vec)
        for i, name in enumerate(SCALAR_ORDER):
            lo, hi = SCALAR_RANGES[name]
            out[i] = (vec[i] - lo) / (hi - lo)
        return out

    def invert_scalar_vector(self, vec: np.ndarray) -> ScalarParams:
        out = np.empty_like(np.asarray(vec, dtype=np.float64))
        for i, name in enumerate(SCALAR_ORDER):
            lo, hi = SCALAR_RANGES[name]
            out[i] = vec[i] * (hi - lo) + lo
        return ScalarParams.from_vector(out)

    # -- targets -----------------------------------------------------------
    def target(self, record: SampleRecord, which: str) -> np.ndarray:
        if which == "sg":
            return record.sg.astype(np.float64)
        if which == "dp":
            return record.dp.astype(np.float64) / self.dp_max
        raise ValueError(f"unknown target {which!r}")

    def invert_target(self, pred: np.ndarray, which: str) -> np.ndarray:
        if which == "sg":
            return pred
        if which == "dp":
            return pred * self.dp_max
        raise ValueError(f"unknown target {which!r}")

    def to_dict(self) -> dict:
        return {"dp_max": self.dp_max}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(dp_max=d["dp_max"])
