"""Greedy sliced iterations and the SIG / GIS trainers.

Every iteration finds the K orthonormal axes along which the current
samples and the target samples differ most (max K-sliced distance), fits a
monotone 1D transport map per axis from estimated CDFs, and pushes the
samples through the resulting layer.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import ndtr

from .errors import DegenerateMarginalError, SinfError
from .flow import Flow, PatchLayer, SinfLayer, standard_normal_logpdf
from .patching import PatchSchedule, gather_patches, make_layout, scatter_patches
from .sliced import LineSearchConfig, as_samples, kswd_cost, max_k_swd, random_orthonormal
from .spline import RegularizedMap, RQSpline, fit_knot_derivatives, merge_close_knots

__all__ = [
    "CdfEstimate",
    "KdeConfig",
    "TrainConfig",
    "TrainReport",
    "estimate_cdf_quantile",
    "estimate_cdf_kde",
    "fit_marginal_ot_map",
    "sinf_iteration",
    "patched_iteration",
    "IterationResult",
    "train_sig",
    "train_gis",
    "small_data_presets",
]

log = logging.getLogger(__name__)

# above this many samples the KDE is evaluated by binning onto its evaluation grid
_KDE_BIN_THRESHOLD = 4096


@dataclass(frozen=True, eq=False)
class CdfEstimate:
    """A CDF tabulated on strictly increasing support points."""

    support: np.ndarray
    cdf_values: np.ndarray
    method: str

    def __call__(self, x):
        return np.interp(x, self.support, self.cdf_values)

    def quantile(self, u):
        return np.interp(u, self.cdf_values, self.support)


def _strictly_increasing(support, cdf):
    keep = np.concatenate([[True], (np.diff(support) > 0)])
    support, cdf = support[keep], cdf[keep]
    keep = np.concatenate([[True], (np.diff(cdf) > 0)])
    return support[keep], cdf[keep]


def _check_values(values):
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size < 1 or not np.all(np.isfinite(values)):
        raise SinfError("need finite 1D values")
    return values


def estimate_cdf_quantile(values, M):
    """Empirical CDF tabulated at `M` evenly spaced quantile levels (0 and 1 included)."""
    values = _check_values(values)
    if values.size < 2 or M < 2:
        raise SinfError("need at least two values and two knots")
    if np.ptp(values) == 0:
        raise DegenerateMarginalError("all values identical")
    levels = np.linspace(0.0, 1.0, int(M))
    support = np.quantile(values, levels)
    support, levels = _strictly_increasing(support, levels)
    return CdfEstimate(support, levels, "quantile")


@dataclass(frozen=True)
class KdeConfig:
    """Gaussian kernel width ``b * N^-0.2 * std(data)`` (Scott's rule).

    `width`, when given, fixes the bandwidth directly.
    """

    b: float = 1.0
    width: float = None

    def __post_init__(self):
        if not self.b > 0:
            raise SinfError("kernel width factor must be positive")
        if self.width is not None and not self.width > 0:
            raise SinfError("explicit kernel width must be positive")

    def bandwidth(self, values):
        if self.width is not None:
            return float(self.width)
        values = np.asarray(values, dtype=np.float64)
        sigma = self.b * values.size ** -0.2 * np.std(values)
        if not sigma > 0:
            raise DegenerateMarginalError("zero data variance")
        return float(sigma)


def _kde_cdf(values, sigma, points):
    """Mean of ``Phi((points - v) / sigma)`` over the sample values."""
    M = points.size
    uniform = M > 2 and np.allclose(np.diff(points), points[1] - points[0], rtol=1e-9, atol=0)
    if values.size > _KDE_BIN_THRESHOLD and uniform:
        # linear binning onto the evaluation grid turns the sum into one convolution
        step = points[1] - points[0]
        pos = np.clip((values - points[0]) / step, 0.0, M - 1.0)
        i = np.minimum(pos.astype(np.int64), M - 2)
        frac = pos - i
        weights = np.bincount(i, 1.0 - frac, M) + np.bincount(i + 1, frac, M)
        kernel = ndtr(np.arange(-(M - 1), M) * (step / sigma))
        return np.convolve(weights, kernel)[M - 1 : 2 * M - 1] / values.size
    out = np.empty(M)
    chunk = max(1, 4_000_000 // values.size)
    for s in range(0, M, chunk):
        z = (points[s : s + chunk, None] - values[None, :]) / sigma
        out[s : s + chunk] = ndtr(z).mean(axis=1)
    return out


def estimate_cdf_kde(values, M, kde=None):
    """CDF of a Gaussian KDE on `M` points spanning the data range plus 4 bandwidths."""
    values = _check_values(values)
    kde = kde or KdeConfig()
    if values.size < 2 and kde.width is None:
        raise SinfError("need at least two values for a data-driven bandwidth")
    if M < 2:
        raise SinfError("need at least two support points")
    sigma = kde.bandwidth(values)
    support = np.linspace(values.min() - 4 * sigma, values.max() + 4 * sigma, int(M))
    cdf = _kde_cdf(values, sigma, support)
    support, cdf = _strictly_increasing(support, cdf)
    if support.size < 2:
        raise DegenerateMarginalError("KDE CDF is flat")
    return CdfEstimate(support, cdf, "kde")


def _tail_slope(x_edge, y_edge, xt, yt, fallback):
    if xt.size < 2:
        return fallback
    dx = xt - x_edge
    dy = yt - y_edge
    denom = np.dot(dx, dx)
    if denom <= 0:
        return fallback
    slope = np.dot(dx, dy) / denom
    return float(slope) if np.isfinite(slope) and slope > 0 else fallback


def fit_marginal_ot_map(
    source_cdf,
    target_cdf,
    M,
    alpha=(0.0, 0.0),
    boundary="fixed",
    source_values=None,
    target_values=None,
    tail_fraction=0.0,
):
    """Monotone map ``F^-1(G(x))`` from the source CDF `G` to the target CDF `F`.

    Knots pair source and target quantiles at `M` matched levels spanning the
    levels both CDFs cover, trimmed by `tail_fraction` on each side. With
    ``boundary="fixed"`` the end derivatives (and linear tail slopes) are 1;
    with ``boundary="fit"`` they are least-squares slopes through the end knot
    of the sorted source/target pairing of samples beyond the knot range,
    falling back to the adjacent secant slope when fewer than two samples
    fall there.
    """
    if M < 2:
        raise SinfError("need at least two knots")
    lo = max(source_cdf.cdf_values[0], target_cdf.cdf_values[0], tail_fraction)
    hi = min(source_cdf.cdf_values[-1], target_cdf.cdf_values[-1], 1.0 - tail_fraction)
    if not hi > lo:
        raise DegenerateMarginalError("CDFs do not overlap")
    levels = np.linspace(lo, hi, int(M))
    xs, ys = merge_close_knots(source_cdf.quantile(levels), target_cdf.quantile(levels))
    if xs.size < 2:
        raise DegenerateMarginalError("fewer than two distinct knots")

    if boundary == "fixed":
        left = right = 1.0
    elif boundary == "fit":
        if source_values is None or target_values is None:
            raise SinfError("fitted tails need the source and target samples")
        sx = np.sort(np.asarray(source_values, dtype=np.float64))
        ty = np.sort(np.asarray(target_values, dtype=np.float64))
        if ty.size != sx.size:
            ty = np.quantile(ty, np.linspace(0.0, 1.0, sx.size))
        below = sx < xs[0]
        above = sx > xs[-1]
        secant = np.diff(ys) / np.diff(xs)
        left = _tail_slope(xs[0], ys[0], sx[below], ty[below], secant[0])
        right = _tail_slope(xs[-1], ys[-1], sx[above], ty[above], secant[-1])
    else:
        raise SinfError(f"unknown boundary policy {boundary!r}")

    spline = RQSpline(xs, ys, fit_knot_derivatives(xs, ys, left, right))
    return RegularizedMap(spline, float(alpha[0]), float(alpha[1]))


@dataclass
class TrainConfig:
    """Hyperparameters shared by the SIG and GIS trainers.

    ``stiefel_max_iter=None`` means ``max(1, N // d)`` with N the number of
    training samples; ``knots=None`` means 400 for SIG and ``sqrt(N)``
    clamped to [50, 200] for GIS. `alpha` is ignored by SIG.
    """

    K: int = 2
    max_layers: int = 100
    stiefel_max_iter: int = None
    stiefel_tol: float = 1e-6
    alpha: tuple = (0.9, 0.9)
    knots: int = None
    kde: KdeConfig = field(default_factory=KdeConfig)
    patch_schedule: PatchSchedule = None
    image_shape: tuple = None
    validation_fraction: float = 0.2
    patience: int = 20
    seed: int = 0
    random_axes: bool = False
    cdf_grid: int = 1024
    line_search: LineSearchConfig = field(default_factory=LineSearchConfig)

    def __post_init__(self):
        if self.K < 1:
            raise SinfError("K must be >= 1")
        if self.max_layers < 0:
            raise SinfError("max_layers must be >= 0")
        if not 0 <= self.validation_fraction < 1:
            raise SinfError("validation_fraction must lie in [0, 1)")
        if self.patience < 1:
            raise SinfError("patience must be >= 1")
        if self.stiefel_max_iter is not None and self.stiefel_max_iter < 1:
            raise SinfError("stiefel_max_iter must be >= 1")
        self.alpha = tuple(float(a) for a in self.alpha)
        if len(self.alpha) != 2 or not all(0 <= a < 1 for a in self.alpha):
            raise SinfError("alpha must be a pair of values in [0, 1)")

    def max_iter_for(self, n, d):
        if self.stiefel_max_iter is not None:
            return self.stiefel_max_iter
        return max(1, n // d)

    def knots_for(self, n, method):
        if self.knots is not None:
            return self.knots
        if method == "quantile":
            return 400
        return int(min(200, max(50, round(math.sqrt(n)))))


@dataclass
class TrainReport:
    objectives: list = field(default_factory=list)
    validation_logp: list = field(default_factory=list)
    stiefel_iterations: list = field(default_factory=list)
    layers: int = 0
    wall_time: float = 0.0


def _fit_axis(xs, ys, method, M, alpha, cfg):
    if method == "quantile":
        src = estimate_cdf_quantile(xs, M)
        tgt = estimate_cdf_quantile(ys, M)
        return fit_marginal_ot_map(src, tgt, M, (0.0, 0.0), "fixed")
    src = estimate_cdf_kde(xs, cfg.cdf_grid, cfg.kde)
    tgt = estimate_cdf_kde(ys, cfg.cdf_grid, cfg.kde)
    return fit_marginal_ot_map(
        src, tgt, M, alpha, "fit", xs, ys, tail_fraction=1.0 / (M + 1)
    )


class IterationResult(NamedTuple):
    layer: object
    source: np.ndarray
    distance: float  # max K-sliced distance before the update
    stiefel_iterations: int


def sinf_iteration(source, target, cfg, method="quantile", rng=None, K=None):
    """One greedy iteration: choose axes, fit per-axis maps, move the source.

    `method` selects the CDF estimator: ``"quantile"`` (generator training,
    unit tail slopes, no regularisation) or ``"kde"`` (density estimation,
    fitted tails, ``cfg.alpha`` blending).
    """
    source = as_samples(source, "source")
    target = as_samples(target, "target")
    rng = np.random.default_rng(rng)
    n, d = source.shape
    K = min(K or cfg.K, d)
    if cfg.random_axes:
        A = random_orthonormal(d, K, rng)
        distance = kswd_cost(source, target, A) ** 0.5
        used = 0
    else:
        res = max_k_swd(
            source,
            target,
            K,
            2.0,
            cfg.max_iter_for(n, d),
            cfg.line_search,
            rng,
            tol=cfg.stiefel_tol,
        )
        A, distance, used = res.basis, res.distance, res.iterations_used
    M = cfg.knots_for(n, method)
    alpha = cfg.alpha if method == "kde" else (0.0, 0.0)
    P, T = source @ A, target @ A
    maps = []
    for k in range(K):
        try:
            maps.append(_fit_axis(P[:, k], T[:, k], method, M, alpha, cfg))
        except DegenerateMarginalError as exc:
            warnings.warn(f"axis {k} skipped: {exc}", RuntimeWarning, stacklevel=2)
            maps.append(RegularizedMap.identity())
    layer = SinfLayer(A, maps)
    moved, _ = layer.forward(source)
    return IterationResult(layer, moved, float(distance), used)


def patched_iteration(source, target, layout, K, cfg, method="quantile", rng=None):
    """Run :func:`sinf_iteration` independently on every patch of `layout`."""
    rng = np.random.default_rng(rng)
    sp = gather_patches(layout, source)
    tp = gather_patches(layout, target)
    moved = np.empty_like(sp)
    layers, dists, used = [], [], 0
    for i in range(layout.n_patches):
        res = sinf_iteration(sp[i], tp[i], cfg, method, rng, K)
        moved[i] = res.source
        layers.append(res.layer)
        dists.append(res.distance)
        used = max(used, res.stiefel_iterations)
    # report the root-mean-square of the per-patch distances
    dist = float(np.sqrt(np.mean(np.square(dists))))
    return IterationResult(PatchLayer(layout, layers), scatter_patches(layout, moved, source), dist, used)


def _plan(cfg, d):
    """Yield ``(q, channel_mode, K)`` per iteration; ``q=None`` means a dense layer."""
    if cfg.patch_schedule is None:
        for _ in range(cfg.max_layers):
            yield None, None, cfg.K
        return
    if cfg.image_shape is None:
        raise SinfError("a patch schedule needs image_shape=(S, S, c)")
    S, S2, c = cfg.image_shape
    if S != S2 or S * S * c != d:
        raise SinfError(f"image shape {cfg.image_shape} does not match dimension {d}")
    for stage in cfg.patch_schedule:
        for _ in range(stage.iterations):
            yield stage.q, stage.channel_mode, stage.K


def _iterate(source, target, cfg, method, rng):
    """Yield one :class:`IterationResult` per planned iteration."""
    d = source.shape[1]
    for q, mode, K in _plan(cfg, d):
        if q is None or (q == cfg.image_shape[0] and mode == "full"):
            res = sinf_iteration(source, target, cfg, method, rng, K)
        else:
            S, _, c = cfg.image_shape
            shift = tuple(int(v) for v in rng.integers(0, S, size=2))
            layout = make_layout(S, c, q, shift, mode)
            res = patched_iteration(source, target, layout, min(K, layout.patch_dim), cfg, method, rng)
        source = res.source
        yield res


def train_sig(data, cfg=None):
    """Train a generator: push N standard-normal draws onto the data, slice by slice.

    Uses quantile CDFs, unregularised maps with unit tail slopes and
    ``cfg.max_layers`` iterations (or the patch schedule).
    """
    cfg = cfg or TrainConfig()
    data = as_samples(data, "data")
    n, d = data.shape
    if n < 2:
        raise SinfError("need at least two samples")
    rng = np.random.default_rng(cfg.seed)
    source = rng.standard_normal((n, d))
    flow = Flow(d, "sig", image_shape=cfg.image_shape)
    report = TrainReport()
    t0 = time.perf_counter()
    for res in _iterate(source, data, cfg, "quantile", rng):
        flow.append(res.layer)
        report.objectives.append(res.distance)
        report.stiefel_iterations.append(res.stiefel_iterations)
        log.debug("sig layer %d: max K-SWD %.5g", len(flow), res.distance)
    report.layers = len(flow)
    report.wall_time = time.perf_counter() - t0
    return flow, report


def train_gis(data, cfg=None, validation=None):
    """Train a density estimator: Gaussianize the data, slice by slice.

    The target is a fixed set of fresh standard-normal draws, CDFs come from
    Gaussian KDEs and the per-axis maps are regularised with ``cfg.alpha``.
    After each layer the mean validation log-likelihood is recorded; training
    stops once it has not improved for ``cfg.patience`` layers and the flow
    is truncated to its best length. Without validation data all planned
    layers are kept.
    """
    cfg = cfg or TrainConfig()
    data = as_samples(data, "data")
    rng = np.random.default_rng(cfg.seed)
    if validation is None and cfg.validation_fraction > 0:
        perm = rng.permutation(len(data))
        n_val = int(round(cfg.validation_fraction * len(data)))
        validation = data[perm[:n_val]]
        data = data[perm[n_val:]]
    n, d = data.shape
    if n < 2:
        raise SinfError("need at least two training samples")
    if validation is not None:
        validation = as_samples(validation, "validation")
        if validation.shape[1] != d or len(validation) == 0:
            validation = None
    target = rng.standard_normal((n, d))
    flow = Flow(d, "gis", image_shape=cfg.image_shape)
    report = TrainReport()
    t0 = time.perf_counter()

    if validation is not None:
        V = validation.copy()
        v_logdet = np.zeros(len(V))
        best = float(np.mean(standard_normal_logpdf(V)))
        report.validation_logp.append(best)
        best_len, stale = 0, 0

    for res in _iterate(data, target, cfg, "kde", rng):
        flow.append(res.layer)
        report.objectives.append(res.distance)
        report.stiefel_iterations.append(res.stiefel_iterations)
        if validation is None:
            continue
        V, ld = res.layer.forward(V)
        v_logdet += ld
        score = float(np.mean(standard_normal_logpdf(V) + v_logdet))
        report.validation_logp.append(score)
        log.debug("gis layer %d: max K-SWD %.5g, val logp %.5f", len(flow), res.distance, score)
        if score > best:
            best, best_len, stale = score, len(flow), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    if validation is not None:
        del flow.layers[best_len:]
    report.layers = len(flow)
    report.wall_time = time.perf_counter() - t0
    return flow, report


def small_data_presets(n_train, d, mode="low"):
    """GIS settings for small training sets.

    ``mode="high"``: b=1, alpha = (1 - 0.02 log10 N, 1 - 0.001 log10 N).
    ``mode="low"``: b=2, alpha = (0, 1 - 0.01 log10 N).
    Both use ``K = min(8, d)`` and a validation set of 30% of the training
    size, i.e. a validation fraction of 0.3/1.3 of the pooled data.
    """
    if n_train < 10:
        raise SinfError("presets assume at least 10 training samples")
    lg = math.log10(n_train)
    if mode == "high":
        b, alpha = 1.0, (1 - 0.02 * lg, 1 - 0.001 * lg)
    elif mode == "low":
        b, alpha = 2.0, (0.0, 1 - 0.01 * lg)
    else:
        raise SinfError(f"unknown preset mode {mode!r}")
    return TrainConfig(
        K=min(8, d),
        max_layers=5000,
        alpha=alpha,
        kde=KdeConfig(b=b),
        validation_fraction=0.3 / 1.3,
        patience=20,
    )
