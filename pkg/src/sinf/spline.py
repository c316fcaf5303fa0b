"""Monotonic rational quadratic splines with linear tails.

Each bin between knots ``(x_m, y_m)`` and ``(x_{m+1}, y_{m+1})`` is a ratio
of two quadratics in the normalised coordinate ``xi``; given positive knot
derivatives the map is strictly increasing, C1, and has a closed-form
inverse. Outside the knot range the map continues linearly with the end
derivatives as slopes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SinfError

__all__ = [
    "RQSpline",
    "RegularizedMap",
    "fit_knot_derivatives",
    "merge_close_knots",
]


def _as_float_array(x):
    return np.asarray(x, dtype=np.float64)


def _finish(out, like):
    return float(out[0]) if np.ndim(like) == 0 else out.reshape(np.shape(like))


def fit_knot_derivatives(xs, ys, left=1.0, right=1.0):
    """Knot derivatives from a local quadratic through each knot's neighbours.

    Interior knots get the distance-weighted mean of the two adjacent secant
    slopes; the two end derivatives are supplied by the caller.
    """
    xs = _as_float_array(xs)
    ys = _as_float_array(ys)
    if xs.shape != ys.shape or xs.ndim != 1 or xs.size < 2:
        raise SinfError("need at least two knots with matching shapes")
    dx = np.diff(xs)
    dy = np.diff(ys)
    if np.any(dx <= 0) or np.any(dy <= 0):
        raise SinfError("knots must be strictly increasing in x and y")
    if not (left > 0 and right > 0):
        raise SinfError("end derivatives must be positive")
    s = dy / dx
    derivs = np.empty_like(xs)
    derivs[0] = left
    derivs[-1] = right
    if xs.size > 2:
        derivs[1:-1] = (s[:-1] * dx[1:] + s[1:] * dx[:-1]) / (xs[2:] - xs[:-2])
    return derivs


def merge_close_knots(xs, ys, eps=1e-12):
    """Drop knots that would break strict monotonicity.

    A knot is kept only if it exceeds the last kept knot by more than `eps`
    (relative to the coordinate scale) in both x and y.
    """
    xs = _as_float_array(xs)
    ys = _as_float_array(ys)
    tol_x = eps * max(1.0, float(np.max(np.abs(xs))))
    tol_y = eps * max(1.0, float(np.max(np.abs(ys))))
    keep = [0]
    for i in range(1, xs.size):
        j = keep[-1]
        if xs[i] - xs[j] > tol_x and ys[i] - ys[j] > tol_y:
            keep.append(i)
    # make sure the last knot survives so the knot range is preserved
    if keep[-1] != xs.size - 1 and len(keep) > 1:
        last = xs.size - 1
        if xs[last] - xs[keep[-2]] > tol_x and ys[last] - ys[keep[-2]] > tol_y:
            keep[-1] = last
    keep = np.asarray(keep)
    return xs[keep], ys[keep]


@dataclass(frozen=True, eq=False)
class RQSpline:
    """Strictly increasing rational quadratic spline.

    ``derivs[0]`` and ``derivs[-1]`` double as the slopes of the linear
    extrapolation, so the map is C1 on the whole real line.
    """

    xs: np.ndarray
    ys: np.ndarray
    derivs: np.ndarray

    def __post_init__(self):
        xs, ys, dv = (_as_float_array(a) for a in (self.xs, self.ys, self.derivs))
        if not (xs.ndim == ys.ndim == dv.ndim == 1) or not (xs.size == ys.size == dv.size):
            raise SinfError("xs, ys and derivs must be 1D arrays of equal length")
        if xs.size < 2:
            raise SinfError("a spline needs at least two knots")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys)) and np.all(np.isfinite(dv))):
            raise SinfError("non-finite spline parameters")
        if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
            raise SinfError("knots must be strictly increasing")
        if np.any(dv <= 0):
            raise SinfError("knot derivatives must be positive")
        for name, arr in (("xs", xs), ("ys", ys), ("derivs", dv)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_knots(cls, xs, ys, left=1.0, right=1.0):
        """Build a spline through the given knots, fitting interior derivatives."""
        xs, ys = merge_close_knots(xs, ys)
        if xs.size < 2:
            raise SinfError("fewer than two distinct knots")
        return cls(xs, ys, fit_knot_derivatives(xs, ys, left, right))

    @classmethod
    def identity(cls):
        one = np.array([0.0, 1.0])
        return cls(one, one.copy(), np.ones(2))

    @property
    def left_slope(self):
        return float(self.derivs[0])

    @property
    def right_slope(self):
        return float(self.derivs[-1])

    def _bin_params(self, x):
        xs, ys, dv = self.xs, self.ys, self.derivs
        k = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, xs.size - 2)
        w = xs[k + 1] - xs[k]
        h = ys[k + 1] - ys[k]
        return k, w, h, h / w, dv[k], dv[k + 1]

    def forward(self, x):
        x0 = x
        x = np.atleast_1d(_as_float_array(x))
        out = np.empty_like(x)
        lo = x < self.xs[0]
        hi = x >= self.xs[-1]
        mid = ~(lo | hi)
        out[lo] = self.ys[0] + self.derivs[0] * (x[lo] - self.xs[0])
        out[hi] = self.ys[-1] + self.derivs[-1] * (x[hi] - self.xs[-1])
        xm = x[mid]
        k, w, h, s, d0, d1 = self._bin_params(xm)
        xi = (xm - self.xs[k]) / w
        t = xi * (1.0 - xi)
        sigma = d1 + d0 - 2.0 * s
        out[mid] = self.ys[k] + h * (s * xi * xi + d0 * t) / (s + sigma * t)
        return _finish(out, x0)

    def derivative(self, x):
        x0 = x
        x = np.atleast_1d(_as_float_array(x))
        out = np.empty_like(x)
        lo = x < self.xs[0]
        hi = x >= self.xs[-1]
        mid = ~(lo | hi)
        out[lo] = self.derivs[0]
        out[hi] = self.derivs[-1]
        xm = x[mid]
        k, w, h, s, d0, d1 = self._bin_params(xm)
        xi = (xm - self.xs[k]) / w
        om = 1.0 - xi
        sigma = d1 + d0 - 2.0 * s
        den = s + sigma * xi * om
        out[mid] = s * s * (d1 * xi * xi + 2.0 * s * xi * om + d0 * om * om) / (den * den)
        return _finish(out, x0)

    def inverse(self, y):
        y0 = y
        y = np.atleast_1d(_as_float_array(y))
        out = np.empty_like(y)
        xs, ys, dv = self.xs, self.ys, self.derivs
        lo = y < ys[0]
        hi = y >= ys[-1]
        mid = ~(lo | hi)
        out[lo] = xs[0] + (y[lo] - ys[0]) / dv[0]
        out[hi] = xs[-1] + (y[hi] - ys[-1]) / dv[-1]
        ym = y[mid]
        k = np.clip(np.searchsorted(ys, ym, side="right") - 1, 0, ys.size - 2)
        w = xs[k + 1] - xs[k]
        h = ys[k + 1] - ys[k]
        s = h / w
        d0 = dv[k]
        sigma = dv[k + 1] + d0 - 2.0 * s
        zeta = np.clip((ym - ys[k]) / h, 0.0, 1.0)
        a = (s - d0) + zeta * sigma
        b = d0 - zeta * sigma
        c = -s * zeta
        disc = np.maximum(b * b - 4.0 * a * c, 0.0)
        xi = 2.0 * c / (-b - np.sqrt(disc))
        out[mid] = xs[k] + w * np.clip(xi, 0.0, 1.0)
        return _finish(out, y0)


@dataclass(frozen=True, eq=False)
class RegularizedMap:
    """Spline blended with the identity.

    Inside the knot range the map is ``(1 - alpha_spline) psi(x) + alpha_spline x``;
    outside it continues linearly with slope ``(1 - alpha_tail) psi' + alpha_tail``.
    With both alphas zero this is exactly the base spline.
    """

    base: RQSpline
    alpha_spline: float = 0.0
    alpha_tail: float = 0.0

    def __post_init__(self):
        for a in (self.alpha_spline, self.alpha_tail):
            if not 0.0 <= a < 1.0:
                raise SinfError(f"regularisation must lie in [0, 1), got {a}")

    @classmethod
    def identity(cls):
        return cls(RQSpline.identity())

    @property
    def is_identity(self):
        b = self.base
        return b.xs.size == 2 and np.all(b.xs == b.ys) and np.all(b.derivs == 1.0)

    def _edges(self):
        b, a1, a2 = self.base, self.alpha_spline, self.alpha_tail
        y_lo = (1 - a1) * b.ys[0] + a1 * b.xs[0]
        y_hi = (1 - a1) * b.ys[-1] + a1 * b.xs[-1]
        s_lo = (1 - a2) * b.derivs[0] + a2
        s_hi = (1 - a2) * b.derivs[-1] + a2
        return y_lo, y_hi, s_lo, s_hi

    def forward(self, x):
        if self.alpha_spline == 0.0 and self.alpha_tail == 0.0:
            return self.base.forward(x)
        x0 = x
        x = np.atleast_1d(_as_float_array(x))
        b, a1 = self.base, self.alpha_spline
        y_lo, y_hi, s_lo, s_hi = self._edges()
        out = (1 - a1) * b.forward(x) + a1 * x
        lo = x < b.xs[0]
        hi = x > b.xs[-1]
        out[lo] = y_lo + s_lo * (x[lo] - b.xs[0])
        out[hi] = y_hi + s_hi * (x[hi] - b.xs[-1])
        return _finish(out, x0)

    def derivative(self, x):
        if self.alpha_spline == 0.0 and self.alpha_tail == 0.0:
            return self.base.derivative(x)
        x0 = x
        x = np.atleast_1d(_as_float_array(x))
        b, a1 = self.base, self.alpha_spline
        _, _, s_lo, s_hi = self._edges()
        out = (1 - a1) * b.derivative(x) + a1
        out[x < b.xs[0]] = s_lo
        out[x > b.xs[-1]] = s_hi
        return _finish(out, x0)

    def inverse(self, y, tol=1e-12, max_iter=200):
        """Inverse map; tails in closed form, the blended spline by safeguarded Newton."""
        if self.alpha_spline == 0.0 and self.alpha_tail == 0.0:
            return self.base.inverse(y)
        y0 = y
        y = np.atleast_1d(_as_float_array(y))
        b, a1 = self.base, self.alpha_spline
        y_lo, y_hi, s_lo, s_hi = self._edges()
        out = np.empty_like(y)
        lo = y < y_lo
        hi = y > y_hi
        mid = ~(lo | hi)
        out[lo] = b.xs[0] + (y[lo] - y_lo) / s_lo
        out[hi] = b.xs[-1] + (y[hi] - y_hi) / s_hi
        if np.any(mid):
            if a1 == 0.0:
                out[mid] = b.inverse(y[mid])
            else:
                out[mid] = self._solve_inside(y[mid], tol, max_iter)
        return _finish(out, y0)

    def _solve_inside(self, y, tol, max_iter):
        b, a1 = self.base, self.alpha_spline
        knots_y = (1 - a1) * b.ys + a1 * b.xs
        k = np.clip(np.searchsorted(knots_y, y, side="right") - 1, 0, knots_y.size - 2)
        lo = b.xs[k].copy()
        hi = b.xs[k + 1].copy()
        frac = np.clip((y - knots_y[k]) / (knots_y[k + 1] - knots_y[k]), 0.0, 1.0)
        x = lo + frac * (hi - lo)
        active = np.ones(y.size, dtype=bool)
        for _ in range(max_iter):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            xa = x[idx]
            f = (1 - a1) * b.forward(xa) + a1 * xa - y[idx]
            df = (1 - a1) * b.derivative(xa) + a1
            neg = f < 0
            lo[idx] = np.where(neg, xa, lo[idx])
            hi[idx] = np.where(neg, hi[idx], xa)
            step = xa - f / df
            bad = (step <= lo[idx]) | (step >= hi[idx])
            step = np.where(bad, 0.5 * (lo[idx] + hi[idx]), step)
            x[idx] = step
            scale = tol * (1.0 + np.abs(step))
            done = (np.abs(step - xa) <= scale) | (hi[idx] - lo[idx] <= scale) | (f == 0)
            x[idx[f == 0]] = xa[f == 0]
            active[idx[done]] = False
        return x
