"""Dispatching-necessity evaluation: which set-point changes actually apply.

Every generator's proposed adjustment is scored

    D = omega_p * |dP|' + (phi_r - R) * dP + (phi_l - L) * dP

where |dP|' is the min-max-normalized adjustment magnitude, R the unit's
current utilization and L the worst loading ratio of the branches at its
bus.  The n_dis highest-scoring adjustments go through; everything else
reverts to the previous set-point.  Zero adjustments are never selected
(their patch would be a no-op), so exactly min(n_dis, #nonzero) entries of
the patched action differ from the previous one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DispatcherError(ValueError):
    pass


@dataclass
class NecessityConfig:
    omega_p: float = 1.0
    phi_r: float = 0.8
    phi_l: float = 0.8
    n_dis: int = 40

    def __post_init__(self):
        if not (0.0 < self.phi_r < 1.0 and 0.0 < self.phi_l < 1.0):
            raise DispatcherError("phi_r and phi_l must lie strictly between 0 and 1")
        if self.n_dis < 1:
            raise DispatcherError("n_dis must be at least 1")


@dataclass
class NecessityScore:
    gen: int
    delta_p: float
    delta_norm: float
    utilization: float
    branch_load: float
    score: float


def normalize_deltas(delta_p: np.ndarray) -> np.ndarray:
    """Min-max squash of |dP| into [0, 1]; an all-equal vector maps to zeros."""
    mag = np.abs(np.asarray(delta_p, dtype=np.float64))
    lo, hi = mag.min(), mag.max()
    if hi - lo <= 0.0:
        return np.zeros_like(mag)
    return (mag - lo) / (hi - lo)


def necessity_scores(delta_p: np.ndarray, utilization: np.ndarray, branch_load: np.ndarray,
                     config: NecessityConfig) -> list[NecessityScore]:
    delta_p = np.asarray(delta_p, dtype=np.float64)
    utilization = np.asarray(utilization, dtype=np.float64)
    branch_load = np.asarray(branch_load, dtype=np.float64)
    if not (delta_p.shape == utilization.shape == branch_load.shape):
        raise DispatcherError(
            f"length mismatch: {delta_p.shape}, {utilization.shape}, {branch_load.shape}")
    norm = normalize_deltas(delta_p)
    d = config.omega_p * norm + (config.phi_r - utilization) * delta_p \
        + (config.phi_l - branch_load) * delta_p
    return [
        NecessityScore(gen=i, delta_p=float(delta_p[i]), delta_norm=float(norm[i]),
                       utilization=float(utilization[i]), branch_load=float(branch_load[i]),
                       score=float(d[i]))
        for i in range(len(delta_p))
    ]


def select_top(scores: list[NecessityScore], n_dis: int) -> list[int]:
    """Generators whose adjustment goes through: the n_dis highest scores
    among nonzero adjustments, ties broken by lower generator id."""
    candidates = [s for s in scores if s.delta_p != 0.0]
    candidates.sort(key=lambda s: (-s.score, s.gen))
    return sorted(s.gen for s in candidates[:n_dis])


def select_and_patch(previous: np.ndarray, proposed: np.ndarray,
                     scores: list[NecessityScore], n_dis: int) -> np.ndarray:
    previous = np.asarray(previous, dtype=np.float64)
    proposed = np.asarray(proposed, dtype=np.float64)
    if previous.shape != proposed.shape or len(scores) != len(previous):
        raise DispatcherError("previous, proposed and scores must align")
    if n_dis > len(previous):
        raise DispatcherError(f"n_dis {n_dis} exceeds generator count {len(previous)}")
    patched = previous.copy()
    for g in select_top(scores, n_dis):
        patched[g] = proposed[g]
    return patched


def patch_action(previous: np.ndarray, proposed: np.ndarray, utilization: np.ndarray,
                 branch_load: np.ndarray, config: NecessityConfig) -> tuple[np.ndarray, list[int]]:
    """Score + select + patch in one call; returns (patched action, kept ids)."""
    scores = necessity_scores(np.asarray(proposed) - np.asarray(previous),
                              utilization, branch_load, config)
    kept = select_top(scores, config.n_dis)
    patched = np.asarray(previous, dtype=np.float64).copy()
    for g in kept:
        patched[g] = np.asarray(proposed, dtype=np.float64)[g]
    return patched, kept
