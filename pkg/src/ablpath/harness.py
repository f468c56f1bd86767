"""Pointing game, regularisation sweeps and the batch suite runner.

Scores are aggregated per sample (not per class). A hit means the heatmap
argmax lies inside the inclusive object box, with no tolerance margin.
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .core import Image, ParameterError, SaliencyMap, linear_path, make_blur_baseline, make_constant_baseline
from .corpus import BACKGROUND_LEVEL, AnnotatedSample
from .optimizer import OptimizerConfig, optimize
from .reduction import (
    apply_boundary_window,
    argmax_point,
    reduce_average,
    reduce_class_transition,
    reduce_contrastive_average,
)
from .scores import integrated_gradients, score_objective

log = logging.getLogger(__name__)

METHODS = ("ablation", "linear", "center", "ig", "oracle")
REDUCTIONS = ("contrastive_average", "average", "class_transition")
DEFAULT_BASELINE = f"const:{BACKGROUND_LEVEL}"
HIST_BINS = 20
HIST_RANGE = (0.0, 2.0)


def parse_baseline(spec: str, image: Image) -> Image:
    """``blur:SIGMA`` or ``const:VALUE``."""
    kind, _, arg = spec.partition(":")
    try:
        value = float(arg)
    except ValueError:
        raise ParameterError(f"bad baseline spec {spec!r}; use blur:SIGMA or const:VALUE") from None
    if kind == "blur":
        return make_blur_baseline(image, value)
    if kind == "const":
        return make_constant_baseline(image, value)
    raise ParameterError(f"bad baseline spec {spec!r}; use blur:SIGMA or const:VALUE")


@dataclass
class MethodConfig:
    method: str = "ablation"
    objective: str = "straddle"
    reduction: str = "contrastive_average"
    postproc: str = "none"  # "none" | "window"
    baseline: str = DEFAULT_BASELINE
    T: int = 20
    max_steps: int = 50
    step_linf: float = 0.7
    sigma_regu_blur: float = 2.0
    zeta_sat: float = 0.8
    zeta_pinch: float = 0.2
    saturation_stop: float = 0.05
    ig_steps: int = 64
    name: str = ""

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.reduction not in REDUCTIONS:
            raise ParameterError(f"unknown reduction {self.reduction!r}; expected one of {REDUCTIONS}")
        if self.postproc not in ("none", "window"):
            raise ParameterError(f"unknown postproc {self.postproc!r}")
        if self.reduction == "contrastive_average" and self.objective != "straddle" \
                and self.method in ("ablation", "linear"):
            raise ParameterError("contrastive_average needs the straddle objective")
        self.optimizer_config()  # validates the optimizer fields

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(
            objective=self.objective, T=self.T, max_steps=self.max_steps, step_linf=self.step_linf,
            sigma_regu_blur=self.sigma_regu_blur, zeta_sat=self.zeta_sat, zeta_pinch=self.zeta_pinch,
            saturation_stop=self.saturation_stop,
        )

    @classmethod
    def from_dict(cls, d: dict) -> MethodConfig:
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ParameterError(f"unknown method config keys {sorted(extra)}")
        return cls(**d)

    @property
    def label(self) -> str:
        return self.name or f"{self.method}-{self.objective}-{self.reduction}"


@dataclass
class SampleResult:
    index: int
    hit: bool
    difficulty: str
    point: tuple[int, int] | None
    scores: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    F_input: float = float("nan")
    F_baseline: float = float("nan")
    error: str = ""


@dataclass
class PointingResult:
    config: MethodConfig
    samples: list[SampleResult]
    runtime: float = 0.0

    @property
    def total(self) -> int:
        return len(self.samples)

    @property
    def hits(self) -> int:
        return sum(s.hit for s in self.samples)

    @property
    def all_pct(self) -> float:
        return 100.0 * self.hits / self.total if self.total else float("nan")

    @property
    def diff_pct(self) -> float:
        diff = [s for s in self.samples if s.difficulty == "difficult"]
        return 100.0 * sum(s.hit for s in diff) / len(diff) if diff else float("nan")

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "aggregation": "per sample; hit = argmax inside inclusive box, no margin",
            "total": self.total,
            "hits": self.hits,
            "all_pct": _num(self.all_pct),
            "diff_pct": _num(self.diff_pct),
            "samples": [_sample_dict(s) for s in self.samples],
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["index", "hit", "difficulty", "row", "col", "score", "initial_score",
                        "F_input", "F_baseline", "flags", "error"])
            for s in self.samples:
                r, c = s.point if s.point is not None else ("", "")
                w.writerow([s.index, int(s.hit), s.difficulty, r, c,
                            _fmt(s.scores.get("final")), _fmt(s.scores.get("initial")),
                            _fmt(s.F_input), _fmt(s.F_baseline), ";".join(s.flags), s.error])


def _num(v):
    return None if v is None or (isinstance(v, float) and np.isnan(v)) else v


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v))


def _sample_dict(s: SampleResult) -> dict:
    d = asdict(s)
    d["point"] = list(s.point) if s.point is not None else None
    d["F_input"] = _num(s.F_input)
    d["F_baseline"] = _num(s.F_baseline)
    return d


def center_map(H: int, W: int) -> SaliencyMap:
    yy, xx = np.mgrid[0:H, 0:W]
    d2 = (yy - (H - 1) / 2) ** 2 + (xx - (W - 1) / 2) ** 2
    return SaliencyMap(-d2.astype(np.float64), info={"reduction": "center"})


def oracle_map(sample: AnnotatedSample) -> SaliencyMap:
    H, W = sample.image.shape[:2]
    m = np.zeros((H, W))
    r0, c0, r1, c1 = sample.object_box
    m[r0 : r1 + 1, c0 : c1 + 1] = 1.0
    return SaliencyMap(m, info={"reduction": "oracle"})


def _reduce(cfg: MethodConfig, paths, model, xi, beta, target) -> SaliencyMap:
    if cfg.reduction == "contrastive_average":
        return reduce_contrastive_average(paths[0], paths[1])
    if cfg.reduction == "average":
        return reduce_average(paths[0])
    return reduce_class_transition(paths[0], model, xi, beta, target)


def saliency_for(cfg: MethodConfig, model, sample: AnnotatedSample, target: int | None = None):
    """Heatmap for one sample plus the path scores and flags it produced."""
    target = sample.label if target is None else target
    xi = sample.image
    H, W = xi.shape[:2]
    scores, flags = {}, []
    if cfg.method == "center":
        return center_map(H, W), scores, flags
    if cfg.method == "oracle":
        return oracle_map(sample), scores, flags
    beta = parse_baseline(cfg.baseline, xi)
    if cfg.method == "ig":
        ig = integrated_gradients(model, xi, beta, target, steps=cfg.ig_steps)
        # the raw map sums to F(baseline) - F(input); negate so high = salient
        return SaliencyMap(-ig.values, info={"reduction": "ig"}), scores, flags
    ocfg = cfg.optimizer_config()
    if cfg.method == "linear":
        lin = linear_path(xi.domain, cfg.T)
        paths = [lin] * ocfg.n_paths
        s = score_objective(cfg.objective, paths if ocfg.n_paths == 2 else lin,
                            model, xi, beta, target).score
        scores.update(initial=s, final=s)
    else:
        trace = optimize(model, xi, beta, target, ocfg)
        paths = trace.paths
        scores.update(initial=trace.initial_score, final=trace.final_score,
                      iterations=len(trace.records))
        flags.extend(trace.flags)
        flags.append(f"stop:{trace.stop_reason}")
    smap = _reduce(cfg, paths, model, xi.values, beta.values, target)
    if smap.info.get("rule") == "argmax_fallback":
        flags.append("fallback_rule")
    return smap, scores, flags


def _run_one(cfg: MethodConfig, model, sample: AnnotatedSample, index: int) -> SampleResult:
    res = SampleResult(index=index, hit=False, difficulty=sample.difficulty, point=None)
    try:
        if model is not None:
            beta = parse_baseline(cfg.baseline, sample.image)
            res.F_input = float(model.predict_proba(sample.image.values)[0, sample.label])
            res.F_baseline = float(model.predict_proba(beta.values)[0, sample.label])
            if res.F_input < 0.5:
                res.flags.append("assumption:F_input<0.5")
            if res.F_baseline > 0.5:
                res.flags.append("assumption:F_baseline>0.5")
        smap, scores, flags = saliency_for(cfg, model, sample)
        if cfg.postproc == "window":
            smap = apply_boundary_window(smap)
        am = argmax_point(smap)
        res.point = (am.row, am.col)
        res.hit = sample.contains(am.row, am.col)
        res.scores = scores
        res.flags.extend(flags)
        if am.tie:
            res.flags.append("tie")
    except Exception as exc:  # a failing sample is a miss, never a suite abort
        log.warning("sample %d failed: %s", index, exc)
        res.error = f"{type(exc).__name__}: {exc}"
    return res


def pointing_game(corpus: list[AnnotatedSample], model, config: MethodConfig | None = None,
                  workers: int = 1) -> PointingResult:
    config = config or MethodConfig()
    t0 = time.perf_counter()
    jobs = list(enumerate(corpus))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(lambda j: _run_one(config, model, j[1], j[0]), jobs))
    else:
        samples = [_run_one(config, model, s, i) for i, s in jobs]
    return PointingResult(config, samples, runtime=time.perf_counter() - t0)


@dataclass
class SweepRecord:
    name: str
    value: float
    histogram: list[int]
    bin_edges: list[float]
    all_pct: float
    diff_pct: float
    runtime: float
    n_runs: int
    mean_score: float

    def top_mass(self, threshold: float = 1.5) -> int:
        """Runs whose score falls in bins starting at or above ``threshold``."""
        return sum(c for c, lo in zip(self.histogram, self.bin_edges[:-1]) if lo >= threshold - 1e-12)


def score_histogram(scores) -> tuple[list[int], list[float]]:
    clipped = np.clip(np.asarray(scores, dtype=np.float64), *HIST_RANGE)
    counts, edges = np.histogram(clipped, bins=HIST_BINS, range=HIST_RANGE)
    return [int(c) for c in counts], [float(e) for e in edges]


def sweep_regularisation(corpus, model, sigmas, objective: str = "straddle",
                         base: MethodConfig | None = None, workers: int = 1) -> list[SweepRecord]:
    """One pointing run per ``sigma_regu_blur`` value, with the score histogram."""
    sigmas = list(sigmas)
    if not sigmas:
        raise ParameterError("sigma list is empty")
    base = base or MethodConfig()
    reduction = base.reduction if objective == "straddle" else "average"
    records = []
    for sigma in sigmas:
        cfg = replace(base, method="ablation", objective=objective, reduction=reduction,
                      sigma_regu_blur=float(sigma))
        res = pointing_game(corpus, model, cfg, workers=workers)
        scores = [s.scores.get("final", np.nan) for s in res.samples]
        finite = [v for v in scores if np.isfinite(v)]
        hist, edges = score_histogram(finite)
        records.append(SweepRecord(
            name="sigma_regu_blur", value=float(sigma), histogram=hist, bin_edges=edges,
            all_pct=res.all_pct, diff_pct=res.diff_pct, runtime=res.runtime, n_runs=len(finite),
            mean_score=float(np.mean(finite)) if finite else float("nan"),
        ))
        log.info("sigma %.3g: All %.1f%%, top mass %d", sigma, res.all_pct, records[-1].top_mass())
    return records


def write_sweep_csv(path, records: list[SweepRecord]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        if not records:
            return
        edges = records[0].bin_edges
        w.writerow(["name", "value", "all_pct", "diff_pct", "mean_score", "runtime", "n_runs"]
                   + [f"bin_{lo:.1f}_{hi:.1f}" for lo, hi in zip(edges[:-1], edges[1:])])
        for r in records:
            w.writerow([r.name, r.value, _fmt(r.all_pct), _fmt(r.diff_pct), _fmt(r.mean_score),
                        f"{r.runtime:.3f}", r.n_runs] + r.histogram)


def make_brittle_model(model, amplitude: float = 6.0, seed: int = 7):
    """Copy of an MLP with pixel-wise random sign weights added to the first layer.

    The extra weights respond to high-frequency mask patterns that carry no
    shape information, which is what unregularised optimisation exploits.
    """
    brittle = copy.deepcopy(model)
    rng = np.random.default_rng(seed)
    D, hidden = brittle.W1.shape
    brittle.W1 = brittle.W1 + amplitude * rng.choice([-1.0, 1.0], size=(D, hidden)) / np.sqrt(D)
    brittle.meta = {**getattr(model, "meta", {}), "brittle_amplitude": amplitude, "brittle_seed": seed}
    return brittle


SUMMARY_COLUMNS = ("method", "opt.crit", "ζ_sat", "σ_reguBlur", "postproc", "All%", "Diff%")


def _pct(v: float) -> str:
    return "n/a" if np.isnan(v) else f"{v:.1f}"


def summary_markdown(results: list[PointingResult]) -> str:
    lines = [
        "# Pointing game summary",
        "",
        "Aggregated per sample; a hit is an argmax inside the inclusive object box (no margin).",
        "",
        "| " + " | ".join(SUMMARY_COLUMNS) + " |",
        "|" + "---|" * len(SUMMARY_COLUMNS),
    ]
    for r in results:
        c = r.config
        optimised = c.method in ("ablation", "linear")
        row = [
            c.label,
            c.objective if optimised else "-",
            f"{c.zeta_sat:g}" if c.method == "ablation" else "-",
            f"{c.sigma_regu_blur:g}" if c.method == "ablation" else "-",
            c.postproc,
            _pct(r.all_pct),
            _pct(r.diff_pct),
        ]
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def run_suite(manifest, output_dir, corpus=None, model=None, workers: int = 1) -> list[PointingResult]:
    """Run every row of a suite manifest and write per-row JSON/CSV and ``summary.md``.

    ``manifest`` is a dict or a JSON file path with a ``rows`` list of
    :class:`MethodConfig` fields; ``corpus`` and ``model`` may also be given
    there as file paths.
    """
    from . import io  # local import: io depends on the classifier module only

    if not isinstance(manifest, dict):
        mpath = Path(manifest)
        manifest = json.loads(mpath.read_text())
        root = mpath.parent
    else:
        root = Path(".")
    rows = [MethodConfig.from_dict(r) for r in manifest.get("rows", [])]
    if corpus is None and "corpus" in manifest:
        corpus = io.load_corpus(root / manifest["corpus"])
    if model is None and "model" in manifest:
        model = io.load_model(root / manifest["model"])
    if rows and corpus is None:
        raise ParameterError("suite needs a corpus")
    out = io.ensure_dir(output_dir)
    results = []
    for i, cfg in enumerate(rows):
        res = pointing_game(corpus, model, cfg, workers=workers)
        stem = out / f"row{i:02d}_{cfg.label}"
        io.write_json(f"{stem}.json", res.to_dict())
        res.write_csv(f"{stem}.csv")
        results.append(res)
    (out / "summary.md").write_text(summary_markdown(results))
    return results
