"""Invertible sliced layers and their composition into a normalizing flow."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, InvalidDataError, SinfError
from .patching import gather_patches, scatter_patches
from .spline import RegularizedMap

__all__ = [
    "SinfLayer",
    "PatchLayer",
    "Flow",
    "LogDensityReport",
    "LogitTransform",
    "standard_normal_logpdf",
]

_LOG_2PI = np.log(2.0 * np.pi)


def standard_normal_logpdf(Z):
    """Row-wise log-density of N(0, I)."""
    Z = np.asarray(Z, dtype=np.float64)
    return -0.5 * (Z.shape[1] * _LOG_2PI + np.sum(Z * Z, axis=1))


def _as_batch(X, d):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != d:
        raise DimensionMismatchError(f"expected (N, {d}) data, got shape {X.shape}")
    return X


@dataclass(eq=False)
class SinfLayer:
    """``x -> x + A (Psi(A^T x) - A^T x)``: marginal maps along K orthonormal axes.

    Components orthogonal to the columns of `basis` pass through unchanged.
    """

    basis: np.ndarray
    maps: list

    def __post_init__(self):
        self.basis = np.asarray(self.basis, dtype=np.float64)
        if self.basis.ndim != 2 or len(self.maps) != self.basis.shape[1]:
            raise SinfError("need one marginal map per basis column")

    @property
    def dim(self):
        return self.basis.shape[0]

    @property
    def K(self):
        return self.basis.shape[1]

    @classmethod
    def identity(cls, basis):
        basis = np.asarray(basis, dtype=np.float64)
        return cls(basis, [RegularizedMap.identity() for _ in range(basis.shape[1])])

    def forward(self, X):
        """Apply the layer; returns the images and per-row log-Jacobians."""
        X = _as_batch(X, self.dim)
        P = X @ self.basis
        Q = np.empty_like(P)
        logdet = np.zeros(X.shape[0])
        for k, m in enumerate(self.maps):
            if m.is_identity:  # skipped axes: exact pass-through
                Q[:, k] = P[:, k]
                continue
            Q[:, k] = m.forward(P[:, k])
            logdet += np.log(m.derivative(P[:, k]))
        return X + (Q - P) @ self.basis.T, logdet

    def inverse(self, Y):
        """Undo :meth:`forward`; the log-Jacobian returned is that of the inverse map."""
        Y = _as_batch(Y, self.dim)
        Q = Y @ self.basis
        P = np.empty_like(Q)
        logdet = np.zeros(Y.shape[0])
        for k, m in enumerate(self.maps):
            if m.is_identity:
                P[:, k] = Q[:, k]
                continue
            P[:, k] = m.inverse(Q[:, k])
            logdet -= np.log(m.derivative(P[:, k]))
        return Y + (P - Q) @ self.basis.T, logdet


@dataclass(eq=False)
class PatchLayer:
    """Independent :class:`SinfLayer` per patch of a (shifted) patch layout.

    The Jacobian is block diagonal, so the log-Jacobian is the sum over patches.
    """

    layout: object
    layers: list

    def __post_init__(self):
        if len(self.layers) != self.layout.n_patches:
            raise SinfError("need one layer per patch")
        if any(l.dim != self.layout.patch_dim for l in self.layers):
            raise SinfError("patch layer dimension does not match the layout")

    @property
    def dim(self):
        return self.layout.dim

    def _apply(self, X, method):
        X = _as_batch(X, self.dim)
        patches = gather_patches(self.layout, X)
        out = np.empty_like(patches)
        logdet = np.zeros(X.shape[0])
        for i, layer in enumerate(self.layers):
            out[i], ld = getattr(layer, method)(patches[i])
            logdet += ld
        return scatter_patches(self.layout, out, X), logdet

    def forward(self, X):
        return self._apply(X, "forward")

    def inverse(self, Y):
        return self._apply(Y, "inverse")


@dataclass(frozen=True)
class LogitTransform:
    """``x -> logit(lam + (1 - 2 lam) x)`` for data in [0, 1]."""

    lam: float = 1e-6

    def __post_init__(self):
        if not 0 <= self.lam < 0.5:
            raise SinfError("logit squeeze must lie in [0, 0.5)")

    def forward(self, X):
        X = np.asarray(X, dtype=np.float64)
        if np.any(X < 0) or np.any(X > 1):
            raise InvalidDataError("logit preprocessing needs values in [0, 1]")
        u = self.lam + (1 - 2 * self.lam) * X
        Z = np.log(u) - np.log1p(-u)
        logdet = np.sum(np.log1p(-2 * self.lam) - np.log(u) - np.log1p(-u), axis=1)
        return Z, logdet

    def inverse(self, Z):
        u = 1.0 / (1.0 + np.exp(-np.asarray(Z, dtype=np.float64)))
        return (u - self.lam) / (1 - 2 * self.lam)


@dataclass
class LogDensityReport:
    logp: np.ndarray
    log_jacobian: np.ndarray
    base_logp: np.ndarray


@dataclass(eq=False)
class Flow:
    """Ordered sliced layers in training order plus a direction tag.

    GIS layers map data to latent as stored; SIG layers map latent to data.
    Density evaluation and sampling pick the traversal order from `direction`.
    SIG models are trained for sampling, so their densities are exact for the
    model but usually poor estimates of the data density.
    """

    d: int
    direction: str = "gis"
    layers: list = field(default_factory=list)
    image_shape: tuple = None
    preprocess: LogitTransform = None

    def __post_init__(self):
        if self.direction not in ("sig", "gis"):
            raise SinfError(f"direction must be 'sig' or 'gis', got {self.direction!r}")
        if self.d < 1:
            raise SinfError("dimension must be positive")

    def __len__(self):
        return len(self.layers)

    def append(self, layer):
        if layer.dim != self.d:
            raise DimensionMismatchError(f"layer acts on {layer.dim} dims, flow has {self.d}")
        self.layers.append(layer)

    def to_latent(self, X):
        """Map (preprocessed) data to latent space with per-row log-Jacobians."""
        X = _as_batch(X, self.d)
        logdet = np.zeros(X.shape[0])
        if self.direction == "gis":
            for layer in self.layers:
                X, ld = layer.forward(X)
                logdet += ld
        else:
            for layer in reversed(self.layers):
                X, ld = layer.inverse(X)
                logdet += ld
        return X, logdet

    def to_data(self, Z):
        """Map latent points to (preprocessed) data space."""
        Z = _as_batch(Z, self.d)
        if self.direction == "gis":
            for layer in reversed(self.layers):
                Z, _ = layer.inverse(Z)
        else:
            for layer in self.layers:
                Z, _ = layer.forward(Z)
        return Z

    def log_density(self, X):
        """Change-of-variables log-density of each row of `X`, in nats."""
        X = np.asarray(X, dtype=np.float64)
        if not np.all(np.isfinite(X)):
            raise InvalidDataError("non-finite input")
        X = _as_batch(X, self.d)
        pre = np.zeros(X.shape[0])
        if self.preprocess is not None:
            X, pre = self.preprocess.forward(X)
        Z, logdet = self.to_latent(X)
        base = standard_normal_logpdf(Z)
        jac = logdet + pre
        return LogDensityReport(base + jac, jac, base)

    def sample(self, n, temperature=1.0, seed=None):
        """Draw `n` samples by pushing ``N(0, T^2 I)`` through the flow."""
        if n < 1:
            raise SinfError("n must be >= 1")
        if not temperature > 0:
            raise SinfError("temperature must be positive")
        rng = np.random.default_rng(seed)
        Z = temperature * rng.standard_normal((int(n), self.d))
        X = self.to_data(Z)
        if self.preprocess is not None:
            X = self.preprocess.inverse(X)
        return X
