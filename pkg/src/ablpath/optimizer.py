"""Projected gradient ascent over ablation paths.

One iteration, for each path in the state:

1. differential of the objective (ascent direction) at every interior time;
2. subtract the spatial mean so the step cannot change the mask mass;
3. smooth with the Gaussian metric;
4. step so that the most-affected pixel moves by ``step_linf`` at most;
5. blur the interior masks (regularisation);
6. soft saturation towards {0, 1};

then pinch the dissipating path towards the retaining one (straddle only),
and finally project back onto the admissible set.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .constraints import project_masks
from .core import AblationPath, Image, ParameterError, gaussian_blur, linear_path
from .scores import OBJECTIVES, pixel_differential, score_objective

log = logging.getLogger(__name__)


class OptimizationAborted(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class OptimizerConfig:
    objective: str = "straddle"
    T: int = 20
    max_steps: int = 50
    step_linf: float = 0.7
    sigma_regu_blur: float = 2.0
    zeta_sat: float = 0.8
    zeta_pinch: float = 0.2
    saturation_stop: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ParameterError(f"unknown objective {self.objective!r}; expected one of {OBJECTIVES}")
        if not 0 < self.step_linf <= 1:
            raise ParameterError(f"step_linf must be in (0, 1], got {self.step_linf}")
        if self.T < 3:
            raise ParameterError(f"T must be >= 3, got {self.T}")
        if self.max_steps < 1:
            raise ParameterError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.sigma_regu_blur < 0:
            raise ParameterError(f"sigma_regu_blur must be >= 0, got {self.sigma_regu_blur}")
        if self.zeta_sat < 0:
            raise ParameterError(f"zeta_sat must be >= 0, got {self.zeta_sat}")
        if not 0 <= self.zeta_pinch < 1:
            raise ParameterError(f"zeta_pinch must be in [0, 1), got {self.zeta_pinch}")
        if not 0 < self.saturation_stop < 0.5:
            raise ParameterError(f"saturation_stop must be in (0, 0.5), got {self.saturation_stop}")

    @property
    def n_paths(self) -> int:
        return 2 if self.objective == "straddle" else 1


@dataclass
class IterationRecord:
    iteration: int
    score: float
    step_linf: list[float]
    saturation: float
    grad_mass: float
    residual_monotonicity: float
    residual_mass: float
    residual_range: float


@dataclass
class OptimizationTrace:
    config: OptimizerConfig
    target_class: int
    records: list[IterationRecord] = field(default_factory=list)
    paths: list[AblationPath] = field(default_factory=list)
    initial_score: float = float("nan")
    stop_reason: str = ""
    flags: list[str] = field(default_factory=list)
    snapshots: dict[int, list[np.ndarray]] = field(default_factory=dict)

    @property
    def final_score(self) -> float:
        return self.records[-1].score if self.records else self.initial_score

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "target_class": self.target_class,
            "initial_score": self.initial_score,
            "final_score": self.final_score,
            "stop_reason": self.stop_reason,
            "flags": list(self.flags),
            "iterations": [asdict(r) for r in self.records],
        }


def saturate(masks: np.ndarray, zeta_sat: float) -> np.ndarray:
    """Pointwise sigmoidal push towards 0 below 1/2 and towards 1 above it.

    Fixes 0, 1/2 and 1; ``zeta_sat = 0`` is the identity.
    """
    if zeta_sat < 0:
        raise ParameterError(f"zeta_sat must be >= 0, got {zeta_sat}")
    masks = np.asarray(masks, dtype=np.float64)
    if zeta_sat == 0:
        return masks.copy()
    return 0.5 * (np.tanh((2.0 * masks - 1.0) * zeta_sat) / np.tanh(zeta_sat) + 1.0)


def saturate_path(path: AblationPath, zeta_sat: float) -> AblationPath:
    m = np.array(path.masks)
    m[1:-1] = saturate(m[1:-1], zeta_sat)
    return AblationPath(m)


def pinch_masks(ret: np.ndarray, diss: np.ndarray, zeta_pinch: float) -> np.ndarray:
    """Shrink small and negative differences ``diss - ret``; ``ret`` is untouched."""
    if not 0 <= zeta_pinch < 1:
        raise ParameterError(f"zeta_pinch must be in [0, 1), got {zeta_pinch}")
    d = diss - ret
    return np.clip(ret + d * (1.0 - zeta_pinch) + d * d * zeta_pinch, 0.0, 1.0)


def pinch(path_ret: AblationPath, path_diss: AblationPath, zeta_pinch: float) -> AblationPath:
    return AblationPath(pinch_masks(path_ret.masks, path_diss.masks, zeta_pinch))


def regularise_masks(masks: np.ndarray, sigma: float) -> np.ndarray:
    if sigma < 0:
        raise ParameterError(f"sigma_regu_blur must be >= 0, got {sigma}")
    out = np.array(masks, dtype=np.float64)
    if sigma > 0:
        out[1:-1] = gaussian_blur(out[1:-1], sigma)
    return out


def regularise(path: AblationPath, sigma_regu_blur: float) -> AblationPath:
    return AblationPath(regularise_masks(path.masks, sigma_regu_blur))


def saturation_level(masks: np.ndarray) -> float:
    """Mean distance of the mask values from {0, 1}."""
    return float(np.minimum(masks, 1.0 - masks).mean())


def ascent_directions(objective: str, state: list[np.ndarray], model, xi, beta, target_class: int):
    """Raw (unprojected) ascent direction for each path of the state."""
    if objective == "retain":
        g = [pixel_differential(state[0], model, xi, beta, target_class)]
    elif objective == "dissipate":
        g = [-pixel_differential(state[0], model, xi, beta, target_class)]
    elif objective == "contrastive":
        # d/dphi of S_diss(1 - phi) is +<grad F(x_{1-phi}), beta - xi>
        g = [pixel_differential(state[0], model, xi, beta, target_class)
             + pixel_differential(1.0 - state[0], model, xi, beta, target_class)]
    elif objective == "straddle":
        g = [pixel_differential(state[0], model, xi, beta, target_class),
             -pixel_differential(state[1], model, xi, beta, target_class)]
    else:
        raise ParameterError(f"unknown objective {objective!r}")
    for gi in g:
        gi[0] = 0.0
        gi[-1] = 0.0
    return g


def mass_free(g: np.ndarray) -> np.ndarray:
    return g - g.mean(axis=(1, 2), keepdims=True)


def gradient_step(masks: np.ndarray, g: np.ndarray, step_linf: float):
    """Move along ``g`` so that the largest pixel change is ``min(step_linf, headroom)``.

    Headroom is the largest distance any pixel with a nonzero direction can
    still travel inside [0, 1]. Returns the new masks and the step taken.
    """
    gmax = float(np.abs(g).max())
    if gmax == 0.0 or not np.isfinite(gmax):
        return masks.copy(), 0.0
    room = np.where(g > 0, 1.0 - masks, masks)
    room = np.where(g != 0, room, 0.0)
    target = min(step_linf, float(room.max()))
    if target <= 0.0:
        return masks.copy(), 0.0
    gamma = target / gmax
    return masks + gamma * g, gamma * gmax


def _to_arrays(input, baseline):
    xi = input.values if isinstance(input, Image) else np.asarray(input, dtype=np.float64)
    beta = baseline.values if isinstance(baseline, Image) else np.asarray(baseline, dtype=np.float64)
    return xi, beta


def _score(config, state, model, xi, beta, target):
    paths = state if config.objective == "straddle" else state[0]
    return score_objective(config.objective, paths, model, xi, beta, target).score


def iterate_once(state: list[np.ndarray], config: OptimizerConfig, model, xi, beta, target_class: int):
    """One full iteration; returns (new_state, step sizes, mass residual of the
    smoothed gradients, pre-projection state)."""
    directions = ascent_directions(config.objective, state, model, xi, beta, target_class)
    new_state, steps, grad_mass = [], [], 0.0
    for masks, g in zip(state, directions):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
        g = mass_free(g)
        g = mass_free(gaussian_blur(g, config.sigma_regu_blur))
        grad_mass = max(grad_mass, float(np.abs(g.mean(axis=(1, 2))).max()))
        m, step = gradient_step(masks, g, config.step_linf)
        m = regularise_masks(m, config.sigma_regu_blur)
        m[1:-1] = saturate(m[1:-1], config.zeta_sat)
        new_state.append(m)
        steps.append(step)
    if config.objective == "straddle":
        new_state[1] = pinch_masks(new_state[0], new_state[1], config.zeta_pinch)
    raw = [m.copy() for m in new_state]
    projected = [project_masks(m) for m in new_state]
    return projected, steps, grad_mass, raw


def _residuals(raw: list[np.ndarray]):
    mono = mass = rng = 0.0
    for m in raw:
        mono = max(mono, float(max(0.0, -np.diff(m, axis=0).min())))
        t = np.linspace(0.0, 1.0, m.shape[0])
        mass = max(mass, float(np.abs(m.mean(axis=(1, 2)) - t).max()))
        rng = max(rng, float(max(0.0, -m.min(), m.max() - 1.0)))
    return mono, mass, rng


def optimize(model, input, baseline, target_class: int, config: OptimizerConfig | None = None,
             snapshot_every: int = 0) -> OptimizationTrace:
    """Run the projected ascent from the linear path; see the module docstring."""
    config = config or OptimizerConfig()
    xi, beta = _to_arrays(input, baseline)
    H, W = xi.shape[:2]
    lin = linear_path(Image(xi).domain, config.T).masks
    state = [np.array(lin) for _ in range(config.n_paths)]
    trace = OptimizationTrace(config=config, target_class=target_class)
    trace.initial_score = _score(config, state, model, xi, beta, target_class)

    if np.array_equal(xi, beta):
        warnings.warn("input equals baseline: differential vanishes, returning the linear path")
        trace.flags.append("degenerate_input")
        trace.stop_reason = "degenerate_input"
        trace.paths = [AblationPath(m) for m in state]
        return trace

    if not np.isfinite(trace.initial_score):
        trace.paths = [AblationPath(m) for m in state]
        raise OptimizationAborted("non-finite score on the linear path", trace)

    trace.stop_reason = "max_steps"
    for it in range(1, config.max_steps + 1):
        try:
            state_new, steps, grad_mass, raw = iterate_once(state, config, model, xi, beta, target_class)
        except FloatingPointError as exc:
            trace.paths = [AblationPath(m) for m in state]
            trace.stop_reason = "aborted"
            raise OptimizationAborted(f"iteration {it}: {exc}", trace) from exc
        score = _score(config, state_new, model, xi, beta, target_class)
        if not np.isfinite(score):
            trace.paths = [AblationPath(m) for m in state]
            trace.stop_reason = "aborted"
            raise OptimizationAborted(f"iteration {it}: non-finite score", trace)
        state = state_new
        sat = max(saturation_level(m) for m in state)
        mono, mass, rng = _residuals(raw)
        trace.records.append(IterationRecord(it, score, steps, sat, grad_mass, mono, mass, rng))
        if snapshot_every and it % snapshot_every == 0:
            trace.snapshots[it] = [m.copy() for m in state]
        log.debug("iter %d score %.4f sat %.4f steps %s", it, score, sat, steps)
        if sat < config.saturation_stop:
            trace.stop_reason = "saturated"
            break
    trace.paths = [AblationPath(m) for m in state]
    return trace
