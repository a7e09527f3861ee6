"""Synthetic two-source register simulation.

Generates the nonnegative M x T readout matrix that feeds the blind
separation pipeline, together with the ground truth needed to score it
afterwards.  The register holds two sources: the target input system
(channel 0) and a residual system (channel 1) whose overall magnitude is
controlled by ``residual_strength``.

Each source is a sparse spectral envelope over ``dim`` components: the
evolution horizon is split into one time window per component, component
``i`` contributes a raised-cosine bump inside window ``i``, and the two
sources occupy disjoint component bands (target: low indices, residual:
high indices).  This gives the separation stage identifiable structure and
gives the verification stage a well-defined component spectrum for each
register state.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DimensionError

NUM_SOURCES = 2  # target + residual; the whole pipeline is specialized to this

# Band width (components per source) and target row magnitude.  Narrow
# disjoint bands keep the two sources' level-energies far apart, which is
# what the verification stage measures; the RMS scale puts the readout in
# the factorization's informative count regime.
_BAND_WIDTH_CAP = 4
_ROW_RMS = 25.0


@dataclass(frozen=True)
class RegisterConfig:
    """Configuration of a synthetic register run.

    Parameters
    ----------
    horizon : int
        Number of evolution steps T (columns of the observation).
    dim : int
        Number of input components n (the spectral axis).
    residual_strength : float
        Frobenius-norm ratio of the residual row to the target row, in
        [0, 1].  Zero yields a clean register.
    seed : int
        64-bit seed; every stochastic draw flows from it.
    num_sources : int
        Fixed at 2 (target + residual).
    """

    horizon: int
    dim: int
    residual_strength: float = 0.3
    seed: int = 0
    num_sources: int = NUM_SOURCES

    def __post_init__(self):
        if self.num_sources != NUM_SOURCES:
            raise ConfigurationError(
                f"num_sources must be exactly {NUM_SOURCES}, got {self.num_sources}"
            )
        if self.horizon < 1:
            raise ConfigurationError(f"horizon must be >= 1, got {self.horizon}")
        if self.dim < 1:
            raise ConfigurationError(f"dim must be >= 1, got {self.dim}")
        if not 0.0 <= self.residual_strength <= 1.0:
            raise ConfigurationError(
                "residual_strength must lie in [0, 1], got "
                f"{self.residual_strength}"
            )
        if self.seed < 0:
            raise ConfigurationError(f"seed must be nonnegative, got {self.seed}")

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "dim": self.dim,
            "residual_strength": self.residual_strength,
            "seed": self.seed,
            "num_sources": self.num_sources,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegisterConfig":
        return cls(
            horizon=int(d["horizon"]),
            dim=int(d["dim"]),
            residual_strength=float(d.get("residual_strength", 0.3)),
            seed=int(d.get("seed", 0)),
            num_sources=int(d.get("num_sources", NUM_SOURCES)),
        )


@dataclass(frozen=True)
class GroundTruth:
    """Planted sources underlying one register observation.

    ``source_rows`` holds the magnitude time series of the target (row 0)
    and the residual (row 1).  ``input_weights`` is the target's component
    power spectrum (sums to one); ``residual_weights`` is the residual's
    component power spectrum scaled by ``residual_strength**2`` so the two
    vectors are directly comparable.
    """

    source_rows: np.ndarray
    input_weights: np.ndarray
    residual_weights: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.source_rows, dtype=float)
        if rows.ndim != 2 or rows.shape[0] != NUM_SOURCES:
            raise DimensionError(
                f"source_rows must be {NUM_SOURCES} x T, got shape {rows.shape}"
            )
        if np.any(rows < 0) or not np.all(np.isfinite(rows)):
            raise ConfigurationError("source_rows must be finite and nonnegative")
        w = np.asarray(self.input_weights, dtype=float)
        if np.any(w < 0):
            raise ConfigurationError("input_weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ConfigurationError(
                f"input_weights must sum to 1 within 1e-12, got {w.sum()!r}"
            )

    @property
    def horizon(self) -> int:
        return self.source_rows.shape[1]

    def to_dict(self) -> dict:
        return {
            "source_rows": self.source_rows.tolist(),
            "input_weights": self.input_weights.tolist(),
            "residual_weights": self.residual_weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(
            source_rows=np.asarray(d["source_rows"], dtype=float),
            input_weights=np.asarray(d["input_weights"], dtype=float),
            residual_weights=np.asarray(d["residual_weights"], dtype=float),
        )


@dataclass(frozen=True)
class ObservationMatrix:
    """The M x T nonnegative register readout plus its per-step aggregate."""

    values: np.ndarray
    metadata: RegisterConfig
    aggregate: np.ndarray = field(default=None)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        expected = (self.metadata.num_sources, self.metadata.horizon)
        if vals.shape != expected:
            raise DimensionError(
                f"observation must have shape {expected}, got {vals.shape}"
            )
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise ConfigurationError("observation entries must be finite and >= 0")
        if self.aggregate is None:
            object.__setattr__(self, "aggregate", vals.sum(axis=0))

    def to_dict(self) -> dict:
        return {
            "config": self.metadata.to_dict(),
            "values": self.values.tolist(),
            "aggregate": self.aggregate.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObservationMatrix":
        return cls(
            values=np.asarray(d["values"], dtype=float),
            metadata=RegisterConfig.from_dict(d["config"]),
        )


def component_windows(horizon: int, dim: int) -> list[slice]:
    """Time window assigned to each component (window i hosts component i)."""
    edges = np.linspace(0, horizon, dim + 1).astype(int)
    return [slice(edges[i], edges[i + 1]) for i in range(dim)]


def _bump(length: int) -> np.ndarray:
    """Raised-cosine envelope on ``length`` samples (all positive inside)."""
    if length <= 0:
        return np.zeros(0)
    t = np.arange(length)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * (t + 0.5) / length))

def _bands(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint dominant supports: target low indices, residual high."""
    width = max(1, min(_BAND_WIDTH_CAP, dim // 8))
    hi = np.arange(dim - width, dim)
    # skip component 0 when possible so the target spectrum has nonzero
    # energy under the number-operator Hamiltonian
    lo_start = 1 if dim - width > 1 else 0
    lo = np.arange(lo_start, min(lo_start + width, dim - width))
    if lo.size == 0:
        lo = np.arange(0, max(1, dim - width))
    if lo.size == 0:
        lo = hi
    return lo, hi


def _row_from_weights(weights: np.ndarray, windows: list[slice], horizon: int) -> np.ndarray:
    row = np.zeros(horizon)
    for i, w in enumerate(weights):
        if w <= 0.0:
            continue
        win = windows[i]
        row[win] += np.sqrt(w) * _bump(win.stop - win.start)
    return row


def generate_input(cfg: RegisterConfig) -> GroundTruth:
    """Generate the planted target and residual sources.

    Row 0 is the target source built from the low component band; row 1 is
    the residual built from the high band and rescaled so its Frobenius
    norm is exactly ``residual_strength`` times the target's.  Deterministic
    for a fixed seed.  Components beyond the horizon get empty time windows,
    so ``horizon >= dim`` keeps every component observable.
    """
    rng = np.random.default_rng(cfg.seed)
    n, horizon = cfg.dim, cfg.horizon
    windows = component_windows(horizon, n)

    lo, hi = _bands(n)

    input_weights = np.zeros(n)
    raw = rng.random(lo.size) + 0.2
    input_weights[lo] = raw / raw.sum()

    residual_shape = np.zeros(n)
    raw = rng.random(hi.size) + 0.2
    residual_shape[hi] = raw / raw.sum()

    target_row = _row_from_weights(input_weights, windows, horizon)
    rms = np.sqrt(np.mean(target_row**2))
    if rms > 0:
        target_row = target_row * (_ROW_RMS / rms)
    residual_row = _row_from_weights(residual_shape, windows, horizon)

    strength = cfg.residual_strength
    if strength == 0.0:
        residual_row = np.zeros(horizon)
        residual_weights = np.zeros(n)
    else:
        norm_t = np.linalg.norm(target_row)
        norm_r = np.linalg.norm(residual_row)
        if norm_r > 0:
            residual_row = residual_row * (strength * norm_t / norm_r)
        residual_weights = residual_shape * strength**2

    rows = np.vstack([target_row, residual_row])
    return GroundTruth(
        source_rows=rows,
        input_weights=input_weights,
        residual_weights=residual_weights,
    )


def observe(gt: GroundTruth, cfg: RegisterConfig) -> ObservationMatrix:
    """Read the register out as per-channel magnitudes of the mixed state.

    Channel m carries source m's magnitude series; the per-step aggregate
    (the summed register magnitude) is recorded alongside.
    """
    rows = np.asarray(gt.source_rows, dtype=float)
    if rows.shape != (cfg.num_sources, cfg.horizon):
        raise DimensionError(
            f"ground truth shape {rows.shape} does not match config "
            f"({cfg.num_sources}, {cfg.horizon})"
        )
    if gt.input_weights.shape != (cfg.dim,):
        raise DimensionError(
            f"input_weights length {gt.input_weights.shape[0]} does not match "
            f"dim {cfg.dim}"
        )
    return ObservationMatrix(values=rows.copy(), metadata=cfg)


def input_state(gt: GroundTruth) -> np.ndarray:
    """Unit-norm component-space wavefunction of the target input."""
    amps = np.sqrt(gt.input_weights).astype(complex)
    return amps / np.linalg.norm(amps)


def register_state(gt: GroundTruth) -> np.ndarray:
    """Unit-norm component-space wavefunction of the contaminated register."""
    power = gt.input_weights + gt.residual_weights
    amps = np.sqrt(power).astype(complex)
    return amps / np.linalg.norm(amps)


def spectrum_from_row(row: np.ndarray, horizon: int, dim: int) -> np.ndarray:
    """Project a magnitude time series back onto component powers.

    The power captured in each component's time window, normalized to sum
    to one (all-zero rows map to the zero vector).
    """
    row = np.asarray(row, dtype=float)
    windows = component_windows(horizon, dim)
    power = np.array([float(np.sum(row[w] ** 2)) for w in windows])
    total = power.sum()
    return power / total if total > 0 else power


def observation_to_csv(obs: ObservationMatrix, path: str | Path) -> None:
    """Write the observation as rows=channels CSV with header ``m,t0..``."""
    horizon = obs.metadata.horizon
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m"] + [f"t{t}" for t in range(horizon)])
        for m in range(obs.values.shape[0]):
            writer.writerow([m] + [repr(float(v)) for v in obs.values[m]])


def ground_truth_to_csv(gt: GroundTruth, path: str | Path) -> None:
    """Write the planted source rows in the same channels-by-time layout."""
    horizon = gt.horizon
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m"] + [f"t{t}" for t in range(horizon)])
        for m in range(gt.source_rows.shape[0]):
            writer.writerow([m] + [repr(float(v)) for v in gt.source_rows[m]])


def observation_from_csv(path: str | Path, cfg: RegisterConfig) -> ObservationMatrix:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "m":
            raise ValueError(f"unexpected observation CSV header: {header!r}")
        rows = [[float(v) for v in row[1:]] for row in reader]
    return ObservationMatrix(values=np.asarray(rows), metadata=cfg)


def ground_truth_to_json(gt: GroundTruth, cfg: RegisterConfig, path: str | Path) -> None:
    doc = {"config": cfg.to_dict(), **gt.to_dict()}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def ground_truth_from_json(path: str | Path) -> tuple[GroundTruth, RegisterConfig]:
    with open(path) as fh:
        doc = json.load(fh)
    return GroundTruth.from_dict(doc), RegisterConfig.from_dict(doc["config"])
