"""Synthetic alignment benchmark.

Every corner of the source image is used as a template. Each configured
method is trained on the same seeded warp set, then asked to recover a set
of random test warps from synthetically warped observations. Errors are
pooled over corners, test warps and all six parameters.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .. import energy, lp, quality, symbolic, warp
from ..errors import ConfigError, OutOfBounds, SingularSystem, SingularWarp
from ..imaging import Image, detect_corners, extract_bbox, extract_template, sample
from .config import BenchConfig
from .fixtures import resolve

log = logging.getLogger(__name__)

ENERGY = ("iclk", "esm")
TIMING_COLUMNS = ("train_ms", "refine_ms", "build_ms")


@dataclass
class MethodResult:
    method: str
    rmse: float
    train_ms: float
    refine_ms: float
    keypoints: int
    results: int
    skips: int
    build_ms: float | None = None


@dataclass
class _Cell:
    sq_err: float = 0.0
    count: int = 0
    skips: int = 0
    train_s: float | None = None
    refine_s: list = field(default_factory=list)


@dataclass
class _KeypointOutcome:
    index: int
    corner: tuple
    cells: dict
    e2: float | None = None
    test_mse: float | None = None


def _median_time(fn, repeats):
    times = []
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return out, statistics.median(times)


def render_observation(img: Image, corner, p_gt, radius: int) -> Image:
    """Square crop whose patch at the crop centre under ``p_gt`` equals the template.

    Pixel ``y`` of the crop holds ``img(corner + invert(p_gt)(y - centre))``.
    """
    r = np.arange(-radius, radius + 1, dtype=np.float64)
    ys, xs = np.meshgrid(r, r, indexing="ij")
    pts = np.column_stack([xs.ravel(), ys.ravel()])
    g = warp.invert(p_gt)
    vals = sample(img, np.asarray(corner, dtype=np.float64) + warp.warp_points(g, pts))
    return Image(vals.reshape(2 * radius + 1, 2 * radius + 1))


def _render_margin(cfg: BenchConfig, radius: int) -> int:
    rng = cfg.test_ranges
    t = max(abs(v) for v in (rng.lo[2], rng.hi[2], rng.lo[5], rng.hi[5]))
    o = max(abs(v) for i in (0, 1, 3, 4) for v in (rng.lo[i], rng.hi[i]))
    # |invert(p)| scale and shear grow roughly like o / (1 - 2o)
    lin = 1.0 + 2.0 * o / max(1.0 - 2.0 * o, 0.1)
    return int(math.ceil(lin * (radius * math.sqrt(2.0) + t / max(1.0 - 2.0 * o, 0.1)))) + 2


class Context:
    """Per-run shared state: image, warp set, symbolic model, corners."""

    def __init__(self, cfg: BenchConfig, image: Image | None = None,
                 model: symbolic.SymbolicModel | None = None):
        self.cfg = cfg
        self.image = image if image is not None else resolve(cfg.image)
        self.spec = symbolic.PatchSpec(cfg.side, cfg.pattern)
        self.P = warp.sample_warps(cfg.train_ranges, cfg.m, cfg.train_seed)
        self.tr_ppt = quality.trace_ppt(self.P)
        self.mappings = {}
        for mth in cfg.methods:
            if "dct" in mth:
                r = int(mth.split("-")[1])
                self.mappings[r] = lp.build_dct_mapping(cfg.side, r)
        needs_model = any(m.startswith("sym") for m in cfg.methods)
        self.model = model
        if needs_model and self.model is None:
            if cfg.model:
                self.model = symbolic.load_model(cfg.model)
            else:
                self.model = symbolic.build_model(self.spec, cfg.train_ranges, cfg.m, cfg.train_seed)
        if self.model is not None:
            if (self.model.spec != self.spec or self.model.ranges != cfg.train_ranges
                    or self.model.m != cfg.m or self.model.seed != cfg.train_seed):
                raise ConfigError("symbolic model does not match the benchmark configuration")
            self.bbox = self.model.bbox
        else:
            self.bbox = symbolic.compute_bbox(self.spec, cfg.train_ranges)
        self.radius = max(self.bbox.left, self.bbox.right, self.bbox.top, self.bbox.bottom) + 14
        margin = _render_margin(cfg, self.radius)
        self.corners = detect_corners(self.image, cfg.max_corners, cfg.min_score,
                                      border_margin=margin)

    def sym_models(self):
        return {r: self.model.with_dct(r) for r in self.mappings} if self.model else {}


def _train(ctx: Context, corner, models):
    """Train every method at one corner; returns predictors, timings and skips."""
    cfg, img, spec, P = ctx.cfg, ctx.image, ctx.spec, ctx.P
    trained, times, failed = {}, {}, {}
    template = extract_template(img, spec, corner)
    lin = None
    for mth in cfg.methods:
        base, _, rs = mth.partition("-")
        r = int(rs) if rs else None
        try:
            if mth in ENERGY:
                pre, t = _median_time(lambda: energy.iclk_precompute(img, corner, spec), cfg.repeats)
            elif base in ("jd", "hp", "dct", "hpdct"):
                mapping = ctx.mappings.get(r)
                pre, t = _median_time(
                    lambda: lp.learn(mth, P, lp.build_error_matrix(img, corner, spec, P), mapping),
                    cfg.repeats)
            elif base == "sym":
                pre, t = _median_time(
                    lambda: symbolic.learn_symbolic(ctx.model, extract_bbox(img, corner, ctx.bbox)),
                    cfg.repeats)
            else:
                mdl = models[r]
                pre, t = _median_time(
                    lambda: symbolic.learn_symbolic_dct(mdl, extract_bbox(img, corner, ctx.bbox)),
                    cfg.repeats)
        except (SingularWarp, SingularSystem) as exc:
            log.warning("corner %s: %s untrainable: %s", corner, mth, exc)
            failed[mth] = str(exc)
            continue
        if base not in ENERGY and not isinstance(pre, energy.IclkPrecomp):
            pre = lp.LinearPredictor(pre.A, pre.learner, pre.m, spec, cfg.train_ranges)
        trained[mth] = pre
        times[mth] = t
    return template, trained, times, failed


def _refine(mth, pre, obs, center, template, cfg):
    if mth == "iclk":
        return energy.iclk_refine(pre, obs, center, None, cfg.energy_iters, cfg.energy_tol).p
    if mth == "esm":
        return energy.esm_refine(pre, obs, center, None, cfg.energy_iters, cfg.energy_tol).p
    return lp.predict(pre, obs, center, template, None, cfg.lp_iters).p


def run_keypoint(ctx: Context, index: int, corner, models=None, want_quality=False):
    cfg = ctx.cfg
    models = models if models is not None else ctx.sym_models()
    cells = {m: _Cell() for m in cfg.methods}
    outcome = _KeypointOutcome(index, corner, cells)
    try:
        template, trained, times, failed = _train(ctx, corner, models)
    except OutOfBounds as exc:
        log.warning("corner %s skipped: %s", corner, exc)
        for c in cells.values():
            c.skips = cfg.n_test
        return outcome
    for mth, t in times.items():
        cells[mth].train_s = t
    for mth in failed:
        cells[mth].skips = cfg.n_test

    stream = cfg.test_seed ^ index
    tests = warp.sample_warps(cfg.test_ranges, cfg.n_test, stream)
    noise_rng = np.random.default_rng([stream, 1])
    center = np.array([ctx.radius, ctx.radius], dtype=np.float64)
    sq_by_warp = []
    for k in range(cfg.n_test):
        p_gt = tests[:, k]
        try:
            obs = render_observation(ctx.image, corner, p_gt, ctx.radius)
        except OutOfBounds as exc:
            log.warning("corner %s test %d: observation leaves image: %s", corner, k, exc)
            for mth in trained:
                cells[mth].skips += 1
            continue
        if cfg.noise > 0:
            noisy = obs.data + noise_rng.normal(scale=cfg.noise, size=obs.data.shape)
            obs = Image(np.clip(noisy, 0.0, 1.0))
        for mth, pre in trained.items():
            cell = cells[mth]
            t0 = time.perf_counter()
            try:
                p_est = _refine(mth, pre, obs, center, template, cfg)
            except (OutOfBounds, SingularWarp) as exc:
                log.info("corner %s test %d: %s skipped: %s", corner, k, mth, exc)
                cell.skips += 1
                continue
            cell.refine_s.append(time.perf_counter() - t0)
            err = p_est - p_gt
            sq = float(err @ err)
            cell.sq_err += sq
            cell.count += 1
            if mth == "sym":
                sq_by_warp.append(sq)
    if want_quality and "sym" in trained:
        u = extract_bbox(ctx.image, corner, ctx.bbox)
        lin, _ = symbolic.symbolic_terms(ctx.model, u)
        outcome.e2 = quality.expected_sq_error(trained["sym"], lin, ctx.model.tr_ppt, index).e2
        outcome.test_mse = float(np.mean(sq_by_warp)) if sq_by_warp else None
    return outcome


def _run_all(ctx: Context, want_quality=False):
    models = ctx.sym_models()
    jobs = list(enumerate(ctx.corners))
    if not jobs:
        raise OutOfBounds("no corner survives the border margin")
    if ctx.cfg.workers > 1:
        with ThreadPoolExecutor(ctx.cfg.workers) as pool:
            return list(pool.map(lambda j: run_keypoint(ctx, j[0], j[1], models, want_quality), jobs))
    return [run_keypoint(ctx, i, c, models, want_quality) for i, c in jobs]


def summarise(ctx: Context, outcomes) -> list[MethodResult]:
    results = []
    for mth in ctx.cfg.methods:
        cells = [o.cells[mth] for o in outcomes]
        count = sum(c.count for c in cells)
        sq = sum(c.sq_err for c in cells)
        trains = [c.train_s for c in cells if c.train_s is not None]
        refines = [np.mean(c.refine_s) for c in cells if c.refine_s]
        build = None
        if mth.startswith("sym") and ctx.model is not None:
            build = ctx.model.build_seconds * 1e3
        results.append(MethodResult(
            mth,
            math.sqrt(sq / (6 * count)) if count else float("nan"),
            1e3 * float(np.mean(trains)) if trains else float("nan"),
            1e3 * float(np.mean(refines)) if refines else float("nan"),
            sum(1 for c in cells if c.count),
            count,
            sum(c.skips for c in cells),
            build,
        ))
    return results


def _fmt(v, digits=6):
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.{digits}f}"
    return str(v)


SYNTHETIC_COLUMNS = ("method", "rmse", "train_ms", "refine_ms", "build_ms",
                     "keypoints", "results", "skips")


def results_csv(results, n_corners: int, n_test: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SYNTHETIC_COLUMNS)
    for r in results:
        w.writerow([r.method, _fmt(r.rmse), _fmt(r.train_ms, 4), _fmt(r.refine_ms, 4),
                    _fmt(r.build_ms, 1), r.keypoints, r.results, r.skips])
    total = sum(r.results for r in results) + sum(r.skips for r in results)
    expected = n_corners * n_test * len(results)
    w.writerow(["TOTAL", "", "", "", "", n_corners, sum(r.results for r in results),
                sum(r.skips for r in results)])
    if total != expected:
        log.error("cell count %d does not reconcile with %d expected", total, expected)
    return buf.getvalue()


def run_synthetic(cfg: BenchConfig, image: Image | None = None, model=None):
    """Run the benchmark; returns ``(results, csv_text)``."""
    ctx = Context(cfg, image, model)
    outcomes = _run_all(ctx)
    results = summarise(ctx, outcomes)
    text = results_csv(results, len(ctx.corners), cfg.n_test)
    if cfg.output:
        with open(cfg.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return results, text


SWEEP_AXES = {"m": "m", "side": "side", "var": "trans_range"}


def run_sweep(cfg: BenchConfig, axis: str, values, image: Image | None = None):
    """One synthetic run per axis value; returns ``(rows, csv_text)``."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}")
    key = SWEEP_AXES[axis]
    image = image if image is not None else resolve(cfg.image)
    rows = []
    for value in values:
        value = int(value) if key in ("m", "side") else float(value)
        sub = cfg.replace(**{key: value, "output": None, "model": None})
        if key == "trans_range" and cfg.test_trans_range is not None:
            sub = sub.replace(test_trans_range=min(cfg.test_trans_range, value))
        results, _ = run_synthetic(sub, image)
        rows.extend((value, r) for r in results)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("axis", "value", "method", "rmse", "train_ms", "refine_ms"))
    for value, r in rows:
        w.writerow([axis, value, r.method, _fmt(r.rmse), _fmt(r.train_ms, 4), _fmt(r.refine_ms, 4)])
    text = buf.getvalue()
    if cfg.output:
        with open(cfg.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return rows, text


@dataclass
class ErrorPrediction:
    keypoints: list
    predicted: np.ndarray
    measured: np.ndarray
    spearman: float
    csv: str


def _flat(values: np.ndarray) -> bool:
    """True when all scores tie up to rounding, leaving ranks undefined."""
    return bool(np.ptp(values) <= 1e-9 * max(float(np.max(np.abs(values))), 1e-300))


def run_error_prediction(cfg: BenchConfig, image: Image | None = None, model=None) -> ErrorPrediction:
    """Predicted expected error per keypoint against its measured test error.

    Both are reported per warp: ``e2 / m`` and the mean over test warps of the
    squared parameter error of the symbolic predictor.
    """
    if "sym" not in cfg.methods:
        cfg = cfg.replace(methods=cfg.methods + ("sym",))
    ctx = Context(cfg, image, model)
    outcomes = [o for o in _run_all(ctx, want_quality=True)
                if o.e2 is not None and o.test_mse is not None]
    predicted = np.array([o.e2 / cfg.m for o in outcomes])
    measured = np.array([o.test_mse for o in outcomes])
    if len(outcomes) < 3 or _flat(predicted) or _flat(measured):
        log.warning("rank correlation undefined: %d keypoints, degenerate scores", len(outcomes))
        rho = float("nan")
    else:
        rho = float(stats.spearmanr(predicted, measured).statistic)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("keypoint", "x", "y", "predicted_e2", "predicted_per_warp", "test_mse"))
    for o, pw, tm in zip(outcomes, predicted, measured):
        w.writerow([o.index, o.corner[0], o.corner[1], _fmt(o.e2, 9), _fmt(pw, 9), _fmt(tm, 9)])
    w.writerow(["SPEARMAN", "", "", "", "", _fmt(rho)])
    text = buf.getvalue()
    if cfg.output:
        with open(cfg.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return ErrorPrediction([o.corner for o in outcomes], predicted, measured, rho, text)
