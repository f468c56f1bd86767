"""Grids, images, masks, ablation paths and the fade interpolation between
an input and a baseline.

Arrays are stored as read-only float64 copies, so every value type here is
immutable after construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d


class DimensionError(ValueError):
    """Shapes of the operands do not agree."""


class ParameterError(ValueError):
    """A scalar parameter is out of its admissible range."""


def _frozen(values, ndim: int, what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != ndim:
        raise DimensionError(f"{what} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GridDomain:
    """Pixel grid carrying the uniform probability measure."""

    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ParameterError(f"grid must be non-empty, got {self.height}x{self.width}")

    @property
    def measure_weight(self) -> float:
        return 1.0 / (self.height * self.width)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def mean(self, values: np.ndarray) -> np.ndarray:
        """Integral over the grid of the trailing two axes of ``values``."""
        return np.asarray(values).mean(axis=(-2, -1))


@dataclass(frozen=True)
class Image:
    values: np.ndarray  # (H, W, C)

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, 3, "image"))

    @classmethod
    def from_array(cls, arr) -> Image:
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        return cls(arr)

    @property
    def domain(self) -> GridDomain:
        return GridDomain(*self.values.shape[:2])

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass(frozen=True)
class Mask:
    values: np.ndarray  # (H, W)

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, 2, "mask"))

    @property
    def domain(self) -> GridDomain:
        return GridDomain(*self.values.shape)


@dataclass(frozen=True)
class AblationPath:
    """Masks sampled at the uniform times ``k/(T-1)``.

    Construction only checks shape and finiteness; use
    :func:`ablpath.constraints.validate_path` for the admissibility
    conditions.
    """

    masks: np.ndarray  # (T, H, W)

    def __post_init__(self):
        m = _frozen(self.masks, 3, "path masks")
        if m.shape[0] < 3:
            raise ParameterError(f"a path needs T >= 3 time samples, got {m.shape[0]}")
        object.__setattr__(self, "masks", m)

    @property
    def T(self) -> int:
        return self.masks.shape[0]

    @property
    def domain(self) -> GridDomain:
        return GridDomain(*self.masks.shape[1:])

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.T)

    @property
    def masses(self) -> np.ndarray:
        return self.masks.mean(axis=(1, 2))

    def mask(self, k: int) -> Mask:
        return Mask(self.masks[k])


@dataclass(frozen=True)
class PathDensity:
    values: np.ndarray  # (T-1, H, W)
    dt: float = field(default=0.0)

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, 3, "path density"))

    @property
    def slab_means(self) -> np.ndarray:
        return self.values.mean(axis=(1, 2))

    def time_integral(self) -> np.ndarray:
        """Per-pixel integral over time (1 everywhere for an admissible path)."""
        return self.dt * self.values.sum(axis=0)


def _check_pair(input: Image, baseline: Image):
    if input.shape != baseline.shape:
        raise DimensionError(f"input {input.shape} and baseline {baseline.shape} differ")


def blend(masks: np.ndarray, input: np.ndarray, baseline: np.ndarray) -> np.ndarray:
    """Array form of :func:`interpolate` for a stack of masks.

    ``masks`` has shape (..., H, W); the result has shape (..., H, W, C).
    """
    masks = np.asarray(masks, dtype=np.float64)
    if masks.shape[-2:] != input.shape[:2] or input.shape != baseline.shape:
        raise DimensionError(
            f"masks {masks.shape}, input {input.shape}, baseline {baseline.shape} do not agree"
        )
    theta = masks[..., None]
    return (1.0 - theta) * input + theta * baseline


def interpolate(mask: Mask, input: Image, baseline: Image) -> Image:
    """Fade from ``input`` (mask 0) to ``baseline`` (mask 1), pixel by pixel."""
    _check_pair(input, baseline)
    if mask.values.shape != input.shape[:2]:
        raise DimensionError(f"mask {mask.values.shape} does not match image {input.shape}")
    return Image(blend(mask.values, input.values, baseline.values))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled Gaussian with radius ``ceil(3 sigma)``, normalised to sum 1."""
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.ones(1)
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(values: np.ndarray, sigma: float, axes: tuple[int, int] = (-2, -1)) -> np.ndarray:
    """Separable Gaussian blur along ``axes`` with reflect padding.

    Padding mirrors about the pixel edge (``d c b a | a b c d``); with a
    symmetric normalised kernel this makes the blur operator symmetric and
    mass-preserving.
    """
    values = np.asarray(values, dtype=np.float64)
    if sigma == 0:
        return values.copy()
    k = gaussian_kernel(sigma)
    out = values
    for ax in axes:
        out = correlate1d(out, k, axis=ax, mode="reflect")
    return out


def make_blur_baseline(input: Image, sigma_baseline: float) -> Image:
    """Blurred copy of ``input``, channel by channel."""
    if not sigma_baseline > 0:
        raise ParameterError(f"sigma_baseline must be > 0, got {sigma_baseline}")
    return Image(gaussian_blur(input.values, sigma_baseline, axes=(0, 1)))


def make_constant_baseline(input: Image, value: float) -> Image:
    return Image(np.full(input.shape, float(value)))


def linear_path(domain: GridDomain, T: int) -> AblationPath:
    """Spatially constant masks ``t_k`` for every pixel."""
    if T < 3:
        raise ParameterError(f"T must be >= 3, got {T}")
    t = np.linspace(0.0, 1.0, T)
    return AblationPath(np.broadcast_to(t[:, None, None], (T, *domain.shape)))


def path_density(path: AblationPath) -> PathDensity:
    """Forward-difference time derivative of the path, one slab per step."""
    dt = 1.0 / (path.T - 1)
    return PathDensity(np.diff(path.masks, axis=0) / dt, dt=dt)


HIGH_IS_SALIENT = "high = salient/retained"


@dataclass(frozen=True)
class SaliencyMap:
    values: np.ndarray  # (H, W)
    orientation: str = HIGH_IS_SALIENT
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, 2, "saliency map"))
        if not self.orientation:
            raise ValueError("saliency orientation must be set")

    @property
    def domain(self) -> GridDomain:
        return GridDomain(*self.values.shape)
