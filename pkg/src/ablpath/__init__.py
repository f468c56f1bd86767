"""Saliency maps from monotone ablation paths between an image and a baseline."""
from .constraints import project_admissible, reparametrise_constant_speed, validate_path
from .core import AblationPath, GridDomain, Image, Mask, SaliencyMap, interpolate, linear_path
from .optimizer import OptimizationAborted, OptimizerConfig, optimize
from .reduction import argmax_point, reduce_average, reduce_class_transition, reduce_contrastive_average
from .scores import integrated_gradients, score_contrastive, score_dissipate, score_retain, score_straddle

__version__ = "0.1.0"
