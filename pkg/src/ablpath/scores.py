"""Path scores, their differentials, and integrated gradients.

All time integrals use the trapezoid rule on the path's own uniform time
grid, so a score and its differential are computed with the same weights.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import AblationPath, DimensionError, Image, ParameterError, SaliencyMap, blend, gaussian_blur, linear_path

OBJECTIVES = ("retain", "dissipate", "contrastive", "straddle")
ASCEND, DESCEND = "ascend_F", "descend_F"


def trapezoid_weights(T: int) -> np.ndarray:
    w = np.full(T, 1.0 / (T - 1))
    w[0] = w[-1] = 0.5 / (T - 1)
    return w


def trapezoid(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=np.float64)
    return float(trapezoid_weights(len(values)) @ values)


@dataclass
class ScoreReport:
    objective: str
    score: float
    per_step_F: np.ndarray
    target_class: int
    sub_reports: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "score": float(self.score),
            "target_class": int(self.target_class),
            "per_step_F": [float(v) for v in self.per_step_F],
            "diagnostics": {k: float(v) for k, v in self.diagnostics.items()},
            "sub_reports": {k: r.to_dict() for k, r in self.sub_reports.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _arrays(input, baseline):
    xi = input.values if isinstance(input, Image) else np.asarray(input, dtype=np.float64)
    beta = baseline.values if isinstance(baseline, Image) else np.asarray(baseline, dtype=np.float64)
    if xi.shape != beta.shape:
        raise DimensionError(f"input {xi.shape} and baseline {beta.shape} differ")
    return xi, beta


def _masks(path) -> np.ndarray:
    return path.masks if isinstance(path, AblationPath) else np.asarray(path, dtype=np.float64)


def probabilities_along(path, model, input, baseline) -> np.ndarray:
    """Full class-probability vectors at every time sample, shape (T, K)."""
    xi, beta = _arrays(input, baseline)
    return model.predict_proba(blend(_masks(path), xi, beta))


def _target_trace(masks, model, xi, beta, target_class) -> np.ndarray:
    return model.predict_proba(blend(masks, xi, beta))[:, target_class]


def score_retain(path, model, input, baseline, target_class: int) -> ScoreReport:
    xi, beta = _arrays(input, baseline)
    F = _target_trace(_masks(path), model, xi, beta, target_class)
    return ScoreReport("retain", trapezoid(F), F, target_class)


def score_dissipate(path, model, input, baseline, target_class: int) -> ScoreReport:
    xi, beta = _arrays(input, baseline)
    F = _target_trace(_masks(path), model, xi, beta, target_class)
    return ScoreReport("dissipate", 1.0 - trapezoid(F), F, target_class)


def score_contrastive(path, model, input, baseline, target_class: int) -> ScoreReport:
    """Retain along the path plus dissipate along its complement ``1 - phi``."""
    masks = _masks(path)
    ret = score_retain(masks, model, input, baseline, target_class)
    diss = score_dissipate(1.0 - masks, model, input, baseline, target_class)
    return ScoreReport(
        "contrastive", ret.score + diss.score, ret.per_step_F, target_class,
        sub_reports={"retain": ret, "dissipate_complement": diss},
    )


def score_straddle(path_ret, path_diss, model, input, baseline, target_class: int) -> ScoreReport:
    """Retaining path plus dissipating path. The L1 distance between them is
    reported but not added to the score; proximity is the optimizer's job."""
    ret = score_retain(path_ret, model, input, baseline, target_class)
    diss = score_dissipate(path_diss, model, input, baseline, target_class)
    m_ret, m_diss = _masks(path_ret), _masks(path_diss)
    w = trapezoid_weights(len(m_ret))
    dist = float(np.tensordot(w, np.abs(m_ret - m_diss).mean(axis=(1, 2)), axes=1))
    return ScoreReport(
        "straddle", ret.score + diss.score, ret.per_step_F, target_class,
        sub_reports={"retain": ret, "dissipate": diss},
        diagnostics={"l1_distance": dist},
    )


def score_objective(objective: str, paths, model, input, baseline, target_class: int) -> ScoreReport:
    """Dispatch on the objective name; ``paths`` is one path, or a (ret, diss) pair for straddle."""
    if objective == "retain":
        return score_retain(paths, model, input, baseline, target_class)
    if objective == "dissipate":
        return score_dissipate(paths, model, input, baseline, target_class)
    if objective == "contrastive":
        return score_contrastive(paths, model, input, baseline, target_class)
    if objective == "straddle":
        return score_straddle(paths[0], paths[1], model, input, baseline, target_class)
    raise ParameterError(f"unknown objective {objective!r}; expected one of {OBJECTIVES}")


def pixel_differential(masks, model, xi, beta, target_class: int) -> np.ndarray:
    """Channel contraction ``<grad F(x_t)(r), beta(r) - xi(r)>`` at every sample, (T, H, W)."""
    x = blend(masks, xi, beta)
    g = model.input_gradient(x, target_class)
    return np.einsum("thwc,hwc->thw", g, beta - xi)


def path_differential(path, model, input, baseline, target_class: int, sign: str = ASCEND,
                      pin_endpoints: bool = True) -> np.ndarray:
    """Per-time-step differential of the retaining integrand with respect to the mask.

    Multiplying entry ``k`` by the trapezoid weight of ``t_k`` gives the
    derivative of the retaining score with respect to ``masks[k]``.
    ``sign=DESCEND`` negates it (the ascent direction for dissipation).
    Endpoint masks are constraints and get zero unless ``pin_endpoints`` is
    off.
    """
    if sign not in (ASCEND, DESCEND):
        raise ParameterError(f"sign must be {ASCEND!r} or {DESCEND!r}, got {sign!r}")
    xi, beta = _arrays(input, baseline)
    g = pixel_differential(_masks(path), model, xi, beta, target_class)
    if sign == DESCEND:
        g = -g
    if pin_endpoints:
        g[0] = 0.0
        g[-1] = 0.0
    return g


def smooth_gradient(gradients: np.ndarray, sigma_metric: float) -> np.ndarray:
    """Apply the Gaussian smoothing metric to each per-step gradient map."""
    if sigma_metric < 0:
        raise ParameterError(f"sigma_metric must be >= 0, got {sigma_metric}")
    return gaussian_blur(gradients, sigma_metric)


def integrated_gradients(model, input, baseline, target_class: int, steps: int = 64) -> SaliencyMap:
    """Trapezoid time-average of the differential along the linear path.

    Sign convention: the map integrates ``(beta - xi) . grad F`` from the
    input to the baseline, so its pixel sum approximates ``F(beta) - F(xi)``.
    """
    if steps < 2:
        raise ParameterError(f"steps must be >= 2, got {steps}")
    xi, beta = _arrays(input, baseline)
    t = np.linspace(0.0, 1.0, steps)
    masks = np.broadcast_to(t[:, None, None], (steps, *xi.shape[:2]))
    g = pixel_differential(masks, model, xi, beta, target_class)
    ig = np.tensordot(trapezoid_weights(steps), g, axes=1)
    return SaliencyMap(ig, orientation="sum = F(baseline) - F(input)", info={"steps": steps})


def time_averaged_differential(path, model, input, baseline, target_class: int) -> np.ndarray:
    """Trapezoid time-average of the unpinned differential along ``path``."""
    g = path_differential(path, model, input, baseline, target_class, pin_endpoints=False)
    return np.tensordot(trapezoid_weights(len(g)), g, axes=1)


def linear_path_ig(model, input, baseline, target_class: int, T: int) -> np.ndarray:
    """Same quantity as :func:`integrated_gradients`, routed through the path machinery."""
    xi, _ = _arrays(input, baseline)
    lin = linear_path(Image(xi).domain, T)
    return time_averaged_differential(lin, model, input, baseline, target_class)
