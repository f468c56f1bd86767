"""Hard projections onto the set of ablation paths.

The admissible set asks for three things: pinned endpoints (all-zero and
all-one masks), per-pixel monotonicity in time, and a mean mask mass equal
to ``t`` at every time sample. :func:`project_admissible` restores all
three after an unconstrained update.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import AblationPath


class ConstraintError(ValueError):
    """Input does not satisfy the precondition of a projection step."""


def monotonise(samples) -> np.ndarray:
    """Closest nondecreasing sequence in the sup norm.

    Decreasing runs are replaced by their centerline, the flat pieces are
    widened until they meet the samples, and neighbouring pieces whose
    levels would drop are merged and re-centred, until nothing changes.
    Samples outside the flattened intervals are returned unchanged.

    The optimum is not unique in general; the result may differ pointwise
    from ``(cummax + reverse cummin) / 2`` while having the same sup
    distance to the input.
    """
    p = np.asarray(samples, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError(f"expected a 1-d sequence, got shape {p.shape}")
    if np.isnan(p).any():
        raise ValueError("monotonise: NaN in input")
    if p.size == 0:
        return p.copy()
    return kernels.monotonise_rows(p[None, :])[0]


def monotonise_paths(masks: np.ndarray) -> np.ndarray:
    """Monotonise every pixel trajectory of a (T, H, W) stack along time."""
    T, H, W = masks.shape
    rows = np.ascontiguousarray(masks.reshape(T, H * W).T)
    if np.isnan(rows).any():
        raise ValueError("monotonise: NaN in input")
    return kernels.monotonise_rows(rows).T.reshape(T, H, W)


def resample_constant_speed(masks: np.ndarray, T_out: int, tol: float = 1e-9) -> np.ndarray:
    """Resample a monotone (K, H, W) mask sequence at mass levels ``k/(T_out-1)``.

    Levels hit by an existing mask take that mask; levels falling in a gap
    of the mass curve get the affine blend of the two masks bracketing it.
    The input may have any number of samples at any (unrecorded) times.
    """
    masks = np.asarray(masks, dtype=np.float64)
    K = masks.shape[0]
    flat = masks.reshape(K, -1)
    masses = flat.mean(axis=1)
    if np.any(np.diff(masses) < -tol):
        k = int(np.argmin(np.diff(masses)))
        raise ConstraintError(
            f"mass curve decreases between samples {k} and {k + 1} "
            f"({masses[k]:.6g} -> {masses[k + 1]:.6g}); monotonise first"
        )
    if abs(masses[0]) > tol or abs(masses[-1] - 1.0) > tol:
        raise ConstraintError(f"mass curve must run from 0 to 1, got {masses[0]:.6g}..{masses[-1]:.6g}")
    masses = np.maximum.accumulate(masses)
    levels = np.linspace(0.0, 1.0, T_out)
    out = kernels.resample_by_mass(np.ascontiguousarray(flat), masses, levels)
    return out.reshape(T_out, *masks.shape[1:])


def reparametrise_constant_speed(path: AblationPath) -> AblationPath:
    """Retime a monotone path so that its mean mass equals ``t_k``."""
    return AblationPath(resample_constant_speed(path.masks, path.T))


def project_admissible(path: AblationPath) -> AblationPath:
    """Monotonise per pixel, clamp to [0, 1], re-pin the endpoints, reparametrise."""
    return AblationPath(project_masks(path.masks))


def project_masks(masks: np.ndarray) -> np.ndarray:
    """Array version of :func:`project_admissible`."""
    m = monotonise_paths(masks)
    np.clip(m, 0.0, 1.0, out=m)
    m[0] = 0.0
    m[-1] = 1.0
    return resample_constant_speed(m, m.shape[0])


@dataclass(frozen=True)
class Violation:
    kind: str  # "boundary" | "monotonicity" | "constant_speed"
    k: int
    pixel: tuple[int, int] | None
    amount: float

    def __str__(self):
        where = f" at pixel {self.pixel}" if self.pixel is not None else ""
        return f"{self.kind} violation at k={self.k}{where}: {self.amount:.3g}"


def validate_path(path: AblationPath, tol: float = 1e-6) -> list[Violation]:
    """List every violated admissibility condition (empty when admissible).

    Monotonicity reports the worst pixel per time step; boundary reports the
    largest deviation of each endpoint mask.
    """
    m = path.masks
    T = path.T
    out: list[Violation] = []
    for k, target in ((0, 0.0), (T - 1, 1.0)):
        dev = np.abs(m[k] - target)
        if dev.max() > tol:
            r, c = np.unravel_index(int(np.argmax(dev)), dev.shape)
            out.append(Violation("boundary", k, (int(r), int(c)), float(dev.max())))
    steps = np.diff(m, axis=0)
    for k in range(T - 1):
        worst = steps[k].min()
        if worst < -tol:
            r, c = np.unravel_index(int(np.argmin(steps[k])), steps[k].shape)
            out.append(Violation("monotonicity", k, (int(r), int(c)), float(-worst)))
    dev = np.abs(path.masses - path.times)
    for k in np.flatnonzero(dev > tol):
        out.append(Violation("constant_speed", int(k), None, float(dev[k])))
    return out
