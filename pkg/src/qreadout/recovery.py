"""Target-source recovery: inverse constant-Q, regrouping, concentration.

Chains the inverse constant-Q transform over the partitioned bases, builds
the anchored register superposition for the two clusters, applies the
unit-window inverse short-time transform to concentrate the target
cluster's mass on one measurable position, and finishes with a DFT that
leaves the uniform target state over the recovered bases.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError
from .partition import BasisPartition
from .transforms import (
    ProbTable,
    SpectralState,
    WindowSpec,
    dft,
    icqt,
    idstft,
    superposition,
    synthesize_offsets,
)


@dataclass(frozen=True)
class ClusteredBases:
    """Inverse-transformed bases split into per-source groups.

    ``groups[m]`` holds the M x K_m block of cluster m's bases after the
    inverse constant-Q transform; ``composite`` is the recombined M x K
    matrix in original basis order, and ``composite_product`` its product
    with the activations when those were supplied.
    """

    groups: tuple
    composite: np.ndarray
    composite_product: np.ndarray | None = None

    @property
    def sizes(self) -> list[int]:
        return [g.shape[1] for g in self.groups]


@dataclass(frozen=True)
class RecoveryResult:
    """Outcome of the recovery chain for the target cluster."""

    phi_star: SpectralState
    prob_table: ProbTable | None
    fidelity_vs_target: float
    recovered_bases: tuple = ()

    def __post_init__(self):
        if not 0.0 <= self.fidelity_vs_target <= 1.0 + 1e-12:
            raise ValidationError(
                f"fidelity must lie in [0, 1], got {self.fidelity_vs_target}"
            )

    def to_dict(self) -> dict:
        return {
            "phi_star": self.phi_star.to_json(),
            "prob_table": None if self.prob_table is None else self.prob_table.to_dict(),
            "fidelity_vs_target": float(self.fidelity_vs_target),
            "recovered_bases": [int(k) for k in self.recovered_bases],
        }


def regroup(
    c_b: np.ndarray,
    part: BasisPartition,
    w: WindowSpec,
    k: int = 0,
    activations: np.ndarray | None = None,
) -> ClusteredBases:
    """Invert the constant-Q transform and split bases by cluster."""
    c_b = np.asarray(c_b, dtype=complex)
    if c_b.ndim != 2:
        raise DimensionError(f"transformed bases must be a matrix, got ndim={c_b.ndim}")
    if part.assignment.shape[0] != c_b.shape[1]:
        raise DimensionError(
            f"partition covers {part.assignment.shape[0]} bases but the "
            f"transformed matrix has {c_b.shape[1]} columns"
        )
    rows = [icqt(SpectralState(row, "cqt"), w, k).amplitudes for row in c_b]
    theta = np.vstack(rows)
    groups = tuple(
        theta[:, part.members(m)] for m in range(1, part.num_clusters + 1)
    )
    product = None
    if activations is not None:
        activations = np.asarray(activations, dtype=float)
        if activations.shape[0] != theta.shape[1]:
            raise DimensionError(
                f"activations have {activations.shape[0]} rows but there are "
                f"{theta.shape[1]} bases"
            )
        product = theta @ activations
    return ClusteredBases(groups=groups, composite=theta, composite_product=product)


def build_superposition(
    part: BasisPartition,
    k1: int,
    offsets=None,
) -> SpectralState:
    """Anchored register superposition for the partitioned bases.

    Every target-cluster member carries offset zero (coherent accumulation
    on the anchor position); residual members carry the given or canonical
    distinct nonzero offsets.
    """
    sizes = part.cluster_sizes
    K = int(sum(sizes))
    K1 = sizes[0]
    if offsets is None:
        offsets = synthesize_offsets(K, K1)
    offsets = np.asarray(offsets, dtype=int)
    residual_count = K - K1
    if offsets.shape != (residual_count,):
        raise ValidationError(
            f"expected {residual_count} residual offsets, got {offsets.shape[0]}"
        )
    per_cluster = [np.zeros(K1, dtype=int)]
    start = 0
    for size in sizes[1:]:
        per_cluster.append(offsets[start : start + size])
        start += size
    return superposition(K, k1, per_cluster)


def extract_target(state: SpectralState, k1: int, K: int) -> tuple[SpectralState, ProbTable]:
    """Concentrate the anchored superposition and read the peak mass.

    Applies the unit-window inverse short-time transform literally and
    builds the measurement table: the coherent anchor amplitude lands on
    position K/k1 with its squared mass over K, other positions carry no
    table mass, and the unconcentrated cross-term mass is reported as
    ``residual_mass``.
    """
    if state.basis_size != K:
        raise DimensionError(
            f"state length {state.basis_size} does not match register size {K}"
        )
    if k1 < 1 or K % k1 != 0:
        raise ValidationError(
            f"k1={k1} must divide the register size K={K} for the "
            "measurement position K/k1 to sit on the register grid"
        )
    spec = WindowSpec(shift=0, size=K, unit_window=True)
    out = idstft(state, spec)

    anchor = k1 % K
    peak = (K // k1) % K
    anchor_mass = float(np.abs(state.amplitudes[anchor]) ** 2)
    probs = np.zeros(K)
    probs[peak] = anchor_mass / K
    residual = (float(np.sum(np.abs(state.amplitudes) ** 2)) - anchor_mass) / K
    return out, ProbTable(probabilities=probs, peak_index=peak, residual_mass=residual)


def choose_carrier(K: int, K1: int) -> int:
    """Anchor frequency for the concentration step: k1 = K / gcd(K, K1).

    Always divides K; when the target-cluster size divides the register
    size the measurement peak lands exactly on position K1.
    """
    if K < 1:
        raise ValidationError(f"register size must be >= 1, got {K}")
    K1 = max(int(K1), 1)
    return K // math.gcd(K, K1)


def set_overlap_fidelity(recovered, target) -> float:
    """Squared overlap of uniform states over two basis-index sets."""
    a = set(int(v) for v in recovered)
    b = set(int(v) for v in target)
    if not a or not b:
        return 0.0
    inter = len(a & b)
    return inter * inter / (len(a) * len(b))


def finalize(
    state: SpectralState,
    K1: int,
    prob_table: ProbTable | None = None,
    recovered_bases=None,
    target_bases=None,
) -> RecoveryResult:
    """Apply the final DFT and score the recovered target state.

    The concentrated register collapses onto the peak position, so the
    DFT input is the corresponding basis state of the K1-sized output
    register and phi_star comes out uniform with amplitude 1/sqrt(K1).
    Fidelity is the squared overlap between the uniform state over the
    recovered basis set and the one over the true target set; with no
    reference set the recovered state is its own reference.
    """
    if K1 < 1:
        raise ValidationError(f"output register size must be >= 1, got {K1}")
    if state.basis_size < K1:
        raise DimensionError(
            f"output register size {K1} exceeds the concentrated register "
            f"length {state.basis_size}"
        )
    collapsed = np.zeros(K1, dtype=complex)
    collapsed[0] = 1.0
    phi_star = dft(SpectralState(collapsed, "idstft"), K1)

    if recovered_bases is None:
        recovered_bases = tuple(range(K1))
    if target_bases is None:
        fidelity = 1.0
    else:
        fidelity = set_overlap_fidelity(recovered_bases, target_bases)
    return RecoveryResult(
        phi_star=phi_star,
        prob_table=prob_table,
        fidelity_vs_target=fidelity,
        recovered_bases=tuple(int(k) for k in recovered_bases),
    )


def recovery_to_json(result: RecoveryResult, path) -> None:
    with open(path, "w") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
