"""Heatmaps from paths, and paths from heatmaps.

Every heatmap returned here uses the orientation "high = salient/retained".
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import resample_constant_speed
from .core import HIGH_IS_SALIENT, AblationPath, DimensionError, ParameterError, SaliencyMap
from .scores import probabilities_along, trapezoid_weights


def _masks(path) -> np.ndarray:
    return path.masks if isinstance(path, AblationPath) else np.asarray(path, dtype=np.float64)


def reduce_average(path) -> SaliencyMap:
    """One minus the time-averaged mask: pixels kept longest score highest."""
    m = _masks(path)
    avg = np.tensordot(trapezoid_weights(len(m)), m, axes=1)
    return SaliencyMap(1.0 - avg, info={"reduction": "average"})


def reduce_class_transition(path, model, input, baseline, target_class: int) -> SaliencyMap:
    """Complement of the most ablated mask still classified as ``target_class``.

    The chosen index and the rule that selected it ("dominant" or
    "argmax_fallback") are stored in ``info``.
    """
    m = _masks(path)
    probs = probabilities_along(m, model, input, baseline)
    dominant = np.flatnonzero(probs.argmax(axis=1) == target_class)
    if len(dominant):
        k, rule = int(dominant[-1]), "dominant"
    else:
        k, rule = int(np.argmax(probs[:, target_class])), "argmax_fallback"
    return SaliencyMap(
        1.0 - m[k],
        info={"reduction": "class_transition", "k_star": k, "rule": rule,
              "F_at_k": float(probs[k, target_class])},
    )


def reduce_contrastive_average(path_ret, path_diss) -> SaliencyMap:
    """Time average of ``diss - ret``: large where the dissipating path
    ablates early while the retaining path still keeps the pixel."""
    r, d = _masks(path_ret), _masks(path_diss)
    if r.shape != d.shape:
        raise DimensionError(f"paths differ in shape: {r.shape} vs {d.shape}")
    val = np.tensordot(trapezoid_weights(len(r)), d - r, axes=1)
    return SaliencyMap(val, info={"reduction": "contrastive_average"})


def hann_window(n: int) -> np.ndarray:
    # symmetric Hann: zero at both ends, 1 at the centre for odd n
    if n == 1:
        return np.ones(1)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / (n - 1))


def apply_boundary_window(smap: SaliencyMap) -> SaliencyMap:
    H, W = smap.values.shape
    win = np.outer(hann_window(H), hann_window(W))
    return SaliencyMap(smap.values * win, orientation=smap.orientation,
                       info={**smap.info, "window": "hann"})


def saliency_to_path(smap: SaliencyMap | np.ndarray, T: int) -> AblationPath:
    """Indicator path ablating pixels in order of increasing saliency.

    Pixels sharing a saliency value flip together. The resulting staircase
    is retimed to constant speed, which blends across each jump.
    """
    if T < 3:
        raise ParameterError(f"T must be >= 3, got {T}")
    values = smap.values if isinstance(smap, SaliencyMap) else np.asarray(smap, dtype=np.float64)
    if values.ndim != 2 or values.size == 0:
        raise DimensionError(f"saliency map must be a non-empty 2-D array, got {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("saliency map contains non-finite values")
    levels = np.unique(values)
    stack = [np.zeros(values.shape)]
    stack.extend((values <= u).astype(np.float64) for u in levels)
    return AblationPath(resample_constant_speed(np.stack(stack), T))


@dataclass(frozen=True)
class ArgmaxResult:
    row: int
    col: int
    tie: bool
    n_max: int

    def __iter__(self):
        return iter((self.row, self.col))


def argmax_point(smap: SaliencyMap | np.ndarray) -> ArgmaxResult:
    """Position of the maximum; the first in row-major order wins ties."""
    values = smap.values if isinstance(smap, SaliencyMap) else np.asarray(smap, dtype=np.float64)
    if values.size == 0:
        raise DimensionError("empty saliency map")
    flat = values.ravel()
    i = int(np.argmax(flat))
    n_max = int(np.count_nonzero(flat == flat[i]))
    r, c = divmod(i, values.shape[1])
    return ArgmaxResult(r, c, n_max > 1, n_max)


def check_orientation(smap: SaliencyMap):
    if smap.orientation != HIGH_IS_SALIENT:
        raise ValueError(f"expected orientation {HIGH_IS_SALIENT!r}, got {smap.orientation!r}")
