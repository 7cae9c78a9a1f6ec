"""Cascade formulation: evolve with the raw truncated matrix, no unitarization.

The stacked vectors y_t = V^t psi0 for t = 1..T solve a lower block-bidiagonal
linear system with identity diagonal blocks, -V sub-diagonal blocks, and the
right-hand side (V psi0, 0, ..., 0). Forward substitution solves it exactly
and is how this module evolves; the dense TN x TN matrix is materialized only
for small shape checks. Because V is not unitary, the cascade trajectory
loses norm where truncation leaks probability, which is the point of
comparing it against the unitarized trajectory and a classical reference.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import LengthMismatchError
from .evolution import StateVector
from .propagator import PropagatorMatrix

_DENSE_LIMIT = 8  # materialize the stacked system only for tiny shape tests


@dataclass(frozen=True)
class CascadeSystem:
    V: PropagatorMatrix
    psi0: StateVector
    T: int

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("cascade horizon T must be at least 1")
        if self.psi0.basis != self.V.basis:
            raise ValueError("state and matrix bases differ")


def solve_cascade(sys: CascadeSystem) -> np.ndarray:
    """Forward substitution: y_1 = V psi0, y_{t+1} = V y_t; returns (T, N)."""
    V = sys.V.entries
    y = np.empty((sys.T, sys.V.N), dtype=complex)
    cur = np.array(sys.psi0.amplitudes, dtype=complex)
    for t in range(sys.T):
        cur = V @ cur
        y[t] = cur
    return y


def assemble_dense(sys: CascadeSystem) -> tuple[np.ndarray, np.ndarray]:
    """Materialize the TN x TN system matrix and its right-hand side.

    Intended for structural tests only; refuses N above 8 because the
    stacked system is never needed in dense form at production sizes.
    """
    N, T = sys.V.N, sys.T
    if N > _DENSE_LIMIT:
        raise ValueError(f"dense cascade assembly is limited to N <= {_DENSE_LIMIT}")
    A = np.eye(T * N, dtype=complex)
    for t in range(1, T):
        A[t * N:(t + 1) * N, (t - 1) * N:t * N] = -sys.V.entries
    rhs = np.zeros(T * N, dtype=complex)
    rhs[:N] = sys.V.entries @ sys.psi0.amplitudes
    return A, rhs


@dataclass
class ErrorTable:
    """Per-step comparison of cascade, unitarized, and reference trajectories."""

    t: np.ndarray
    global_rel_err: np.ndarray
    max_local_rel_err: np.ndarray
    unitary_vs_cascade_gap: np.ndarray
    divergence_step: Optional[int]

    CSV_HEADER = "t,global_rel_err,max_local_rel_err,unitary_vs_cascade_gap"

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.CSV_HEADER + "\n")
            for i, t in enumerate(self.t):
                f.write(f"{int(t)},{self.global_rel_err[i]:.17g},"
                        f"{self.max_local_rel_err[i]:.17g},"
                        f"{self.unitary_vs_cascade_gap[i]:.17g}\n")


def compare_errors(y: np.ndarray, u_traj: np.ndarray, reference: np.ndarray,
                   amplitude_floor: float = 1e-6,
                   gap_threshold: float = 0.05) -> ErrorTable:
    """Error profile of the cascade solution against a classical reference.

    All three trajectories are (T, N) arrays for t = 1..T on the same basis.
    Per step: the global relative error ||y_t - ref_t|| / ||ref_t||, the
    maximum per-cell relative error over cells where the reference amplitude
    exceeds `amplitude_floor`, and the gap ||u_t - y_t|| between the
    unitarized and cascade trajectories. The divergence step is the first t
    where that gap exceeds `gap_threshold` (None if it never does).
    """
    y = np.asarray(y)
    u_traj = np.asarray(u_traj)
    reference = np.asarray(reference)
    if not (y.shape == u_traj.shape == reference.shape):
        raise LengthMismatchError(
            f"trajectory shapes differ: {y.shape}, {u_traj.shape}, {reference.shape}"
        )
    T = y.shape[0]
    glob = np.empty(T)
    loc = np.empty(T)
    gap = np.empty(T)
    for i in range(T):
        ref = reference[i]
        nref = np.linalg.norm(ref)
        glob[i] = np.linalg.norm(y[i] - ref) / nref if nref > 0 else np.nan
        mask = np.abs(ref) > amplitude_floor
        if np.any(mask):
            loc[i] = float(np.max(np.abs(y[i][mask] - ref[mask]) / np.abs(ref[mask])))
        else:
            loc[i] = np.nan
        gap[i] = float(np.linalg.norm(u_traj[i] - y[i]))
    over = np.nonzero(gap > gap_threshold)[0]
    step = int(over[0]) + 1 if len(over) else None
    return ErrorTable(t=np.arange(1, T + 1), global_rel_err=glob,
                      max_local_rel_err=loc, unitary_vs_cascade_gap=gap,
                      divergence_step=step)
