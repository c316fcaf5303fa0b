"""Patch decomposition of flattened images.

Images are stored row-major as ``(S, S, c)`` and flattened to ``S*S*c``
features, so pixel ``(i, j)`` channel ``ch`` lives at ``(i*S + j)*c + ch``.
Patches tile a periodically shifted copy of the image; when the patch side
does not divide ``S`` the uncovered pixels are left alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, SinfError

__all__ = [
    "PatchLayout",
    "PatchStage",
    "PatchSchedule",
    "make_layout",
    "gather_patches",
    "scatter_patches",
    "default_schedule",
    "parse_schedule",
]

CHANNEL_MODES = ("full", "single")


@dataclass(frozen=True, eq=False)
class PatchLayout:
    S: int
    c: int
    q: int
    shift: tuple
    channel_mode: str
    indices: np.ndarray = field(repr=False)  # (n_patches, patch_dim)
    leftover: np.ndarray = field(repr=False)

    @property
    def p(self):
        return self.S // self.q

    @property
    def n_patches(self):
        return self.indices.shape[0]

    @property
    def patch_dim(self):
        return self.indices.shape[1]

    @property
    def dim(self):
        return self.S * self.S * self.c


def make_layout(S, c, q, shift=(0, 0), channel_mode="full"):
    """Index sets for a ``q x q`` patch tiling of an ``S x S x c`` image.

    Patch ``(a, b)`` covers rows ``(a*q + r + dy) mod S`` and columns
    ``(b*q + t + dx) mod S``. With ``channel_mode="single"`` every channel of
    a spatial patch becomes its own ``q*q``-dimensional patch.
    """
    S, c, q = int(S), int(c), int(q)
    if S < 1 or c < 1:
        raise SinfError("image side and depth must be positive")
    if not 1 <= q <= S:
        raise SinfError(f"patch side must satisfy 1 <= q <= S, got q={q}, S={S}")
    if channel_mode not in CHANNEL_MODES:
        raise SinfError(f"unknown channel mode {channel_mode!r}")
    dy, dx = (int(v) % S for v in shift)
    p = S // q

    r = np.arange(q)
    blocks = np.arange(p)
    rows = (blocks[:, None] * q + r[None, :] + dy) % S  # (p, q)
    cols = (blocks[:, None] * q + r[None, :] + dx) % S
    # pixel index for every (patch row a, patch col b, in-patch row, in-patch col)
    pix = rows[:, None, :, None] * S + cols[None, :, None, :]  # (p, p, q, q)
    pix = pix.reshape(p * p, q * q)
    ch = np.arange(c)
    if channel_mode == "full":
        idx = (pix[:, :, None] * c + ch[None, None, :]).reshape(p * p, q * q * c)
    else:
        idx = (pix[None, :, :] * c + ch[:, None, None]).reshape(c * p * p, q * q)

    covered = np.zeros(S * S * c, dtype=bool)
    covered[idx.ravel()] = True
    leftover = np.flatnonzero(~covered)
    idx.setflags(write=False)
    leftover.setflags(write=False)
    return PatchLayout(S, c, q, (dy, dx), channel_mode, idx, leftover)


def _check_dim(layout, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != layout.dim:
        raise DimensionMismatchError(f"expected (N, {layout.dim}) data, got {X.shape}")
    return X


def gather_patches(layout, X):
    """Per-patch sample matrices, stacked as an array of shape (n_patches, N, patch_dim)."""
    X = _check_dim(layout, X)
    return np.transpose(X[:, layout.indices], (1, 0, 2))


def scatter_patches(layout, patches, X):
    """Write patch matrices back into a copy of `X`.

    Pixels outside every patch are taken unchanged from `X`.
    """
    X = _check_dim(layout, X)
    patches = np.asarray(patches, dtype=np.float64)
    expected = (layout.n_patches, X.shape[0], layout.patch_dim)
    if patches.shape != expected:
        raise DimensionMismatchError(f"expected patches of shape {expected}, got {patches.shape}")
    out = X.copy()
    out[:, layout.indices] = np.transpose(patches, (1, 0, 2))
    return out


@dataclass(frozen=True)
class PatchStage:
    q: int
    channel_mode: str
    K: int
    iterations: int


@dataclass(frozen=True)
class PatchSchedule:
    stages: tuple

    def __post_init__(self):
        qs = [st.q for st in self.stages]
        if not qs:
            raise SinfError("a schedule needs at least one stage")
        if any(b > a for a, b in zip(qs, qs[1:])):
            raise SinfError("patch sides must be non-increasing across stages")
        if qs[-1] < 2:
            raise SinfError("the final patch side must be at least 2")
        for st in self.stages:
            if st.channel_mode not in CHANNEL_MODES or st.K < 1 or st.iterations < 0:
                raise SinfError(f"invalid stage {st}")

    @property
    def total_iterations(self):
        return sum(st.iterations for st in self.stages)

    def __iter__(self):
        return iter(self.stages)


def _patch_sides(S):
    sides = [S]
    q = S
    while q > 2:
        q = q // 2 if q % 2 == 0 and q // 2 >= 7 else q - 1
        sides.append(q)
    return sides


def default_schedule(S, c, iterations=100):
    """Coarse-to-fine schedule from the whole image down to 2 x 2 patches.

    Sides halve while the half is at least 7 and then step down by one
    (28, 14, 7, 6, ..., 2 or 32, 16, 8, 7, ..., 2). Each stage uses
    ``K = 2q`` capped at the patch dimension. Multi-channel images follow
    every full-depth stage with ``q <= 8`` by a single-channel stage with
    ``K = q``.
    """
    if S < 2:
        raise SinfError("image side must be at least 2")
    stages = []
    for q in _patch_sides(int(S)):
        stages.append(PatchStage(q, "full", min(2 * q, q * q * c), iterations))
        if c > 1 and q <= 8:
            stages.append(PatchStage(q, "single", min(q, q * q), iterations))
    return PatchSchedule(tuple(stages))


def parse_schedule(text):
    """Parse ``"q:mode:K:iters;q:mode:K:iters;..."`` into a :class:`PatchSchedule`."""
    stages = []
    for chunk in text.replace(",", ";").split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) != 4:
            raise SinfError(f"bad schedule stage {chunk!r}; expected q:mode:K:iterations")
        q, mode, K, iters = parts
        stages.append(PatchStage(int(q), mode.strip(), int(K), int(iters)))
    return PatchSchedule(tuple(stages))


def format_schedule(schedule):
    return ";".join(f"{st.q}:{st.channel_mode}:{st.K}:{st.iterations}" for st in schedule)
