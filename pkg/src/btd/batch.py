"""Batch rank-revealing solver for rank-(L,L,1) block-term models.

Minimizes

    0.5 * ||Y - model||_F^2
    + lam * sum_{r,l} sqrt(||a_{r,l}||^2 + ||b_{r,l}||^2 + eta2)
    + mu  * sum_r    sqrt(||c_r||^2 + eta2)

by block coordinate descent with closed-form reweighted least-squares
updates: each sweep recomputes the diagonal reweighting from the current
iterate and then solves one regularized SPD system per factor.  The
group penalties drive whole columns of the (overestimated) factors to
negligible magnitude, so the numbers of block terms and of columns per
block can be read off the converged factors by thresholding.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .linalg import NumericalError, kr_gram, solve_spd
from .tensor import BtdFactors, slice_design, unfold

__all__ = [
    "BatchConfig",
    "RankEstimate",
    "BatchResult",
    "objective",
    "c_column_weights",
    "ab_column_weights",
    "update_a",
    "update_b",
    "update_c",
    "sweep",
    "btd_irls",
    "estimate_ranks",
    "estimate_ranks_from_norms",
    "prune",
]


@dataclass(frozen=True)
class BatchConfig:
    """Settings for :func:`btd_irls`.

    ``lam`` weighs the joint A/B column penalty, ``mu`` the C column
    penalty, and ``eta2`` is the small smoothing constant that keeps the
    penalties differentiable at zero.  ``r_ini``/``l_ini`` are the rank
    overestimates the solver starts from.
    """

    lam: float
    mu: float
    r_ini: int
    l_ini: int
    eta2: float = 1e-8
    max_iters: int = 500
    rel_tol: float = 1e-5
    seed: int = 0
    rank_threshold: float = 1e-2
    prune_in_loop: bool = False

    def __post_init__(self):
        if self.lam < 0 or self.mu < 0:
            raise ValueError("regularization weights must be nonnegative")
        if self.eta2 <= 0:
            raise ValueError("eta2 must be positive")
        if self.r_ini < 1 or self.l_ini < 1:
            raise ValueError("rank overestimates must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if not 0.0 < self.rank_threshold < 1.0:
            raise ValueError("rank_threshold must lie in (0, 1)")


@dataclass(frozen=True)
class RankEstimate:
    """Block/column structure read off a factor triple by thresholding."""

    r_hat: int
    l_hat: list[int]
    kept_blocks: list[int]
    kept_columns: list[list[int]]
    degenerate: bool = False

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class BatchResult:
    factors: BtdFactors
    ranks: RankEstimate
    trace: list[float]
    converged: bool
    iterations: int


def c_column_weights(c, eta2: float) -> np.ndarray:
    """Inverse smoothed column norms of C: entry r is (||c_r||^2 + eta2)^(-1/2)."""
    if eta2 <= 0:
        raise ValueError("eta2 must be positive")
    c = np.asarray(c, dtype=np.float64)
    return 1.0 / np.sqrt((c * c).sum(axis=0) + eta2)


def ab_column_weights(a, b, eta2: float) -> np.ndarray:
    """Joint inverse smoothed column norms of A and B.

    Entry ``q`` is ``(||a_q||^2 + ||b_q||^2 + eta2)^(-1/2)`` where ``a_q``
    and ``b_q`` are the matching columns; the ordering is the block-major
    column ordering of A and B themselves.
    """
    if eta2 <= 0:
        raise ValueError("eta2 must be positive")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise ValueError("A and B must have the same number of columns")
    return 1.0 / np.sqrt((a * a).sum(axis=0) + (b * b).sum(axis=0) + eta2)


def objective(y, f: BtdFactors, cfg: BatchConfig) -> float:
    """Regularized squared-error objective at a factor triple."""
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.shape != f.dims:
        raise ValueError(f"tensor dims {y.shape} do not match factors {f.dims}")
    s = slice_design(f.a, f.b, f.width)
    resid = unfold(y, 3) - f.c @ s.T
    return 0.5 * float((resid * resid).sum()) + _penalty(f, cfg.lam, cfg.mu, cfg.eta2)


def _penalty(f: BtdFactors, lam: float, mu: float, eta2: float) -> float:
    ab = np.sqrt((f.a * f.a).sum(axis=0) + (f.b * f.b).sum(axis=0) + eta2)
    cc = np.sqrt((f.c * f.c).sum(axis=0) + eta2)
    return lam * float(ab.sum()) + mu * float(cc.sum())


class _Workspace:
    """Per-solve cache: the tensor in the two layouts the sweeps contract against."""

    def __init__(self, y):
        self.y = np.ascontiguousarray(y, dtype=np.float64)
        if self.y.ndim != 3:
            raise ValueError("expected a third-order tensor")
        if not np.isfinite(self.y).all():
            raise NumericalError("input tensor contains non-finite values")
        self.dims = self.y.shape
        self.y3 = unfold(self.y, 3)
        self._resid = np.empty_like(self.y3)

    def _shared(self, c):
        # (I*J, K) @ (K, R), reshaped to (i, j, r); feeds both the A and B updates
        i, j, k = self.dims
        return (self.y.reshape(i * j, k) @ c).reshape(i, j, -1)

    def update_a(self, a, b, c, lam, d2, width, yc=None):
        i, j, _ = self.dims
        r = c.shape[1]
        yc = self._shared(c) if yc is None else yc
        b3 = b.reshape(j, r, width)
        rhs = np.matmul(yc.transpose(2, 0, 1), b3.transpose(1, 0, 2))
        rhs = np.ascontiguousarray(rhs.transpose(1, 0, 2)).reshape(i, r * width)
        gram = kr_gram(b.T @ b, c.T @ c, width)
        gram[np.diag_indices_from(gram)] += lam * d2
        return solve_spd(gram, rhs.T).T

    def update_b(self, a, b, c, lam, d2, width, yc=None):
        i, j, _ = self.dims
        r = c.shape[1]
        yc = self._shared(c) if yc is None else yc
        a3 = a.reshape(i, r, width)
        rhs = np.matmul(yc.transpose(2, 1, 0), a3.transpose(1, 0, 2))
        rhs = np.ascontiguousarray(rhs.transpose(1, 0, 2)).reshape(j, r * width)
        gram = kr_gram(a.T @ a, c.T @ c, width)
        gram[np.diag_indices_from(gram)] += lam * d2
        return solve_spd(gram, rhs.T).T

    def update_c(self, a, b, c, mu, d1, width):
        s = slice_design(a, b, width)
        gram = s.T @ s
        gram[np.diag_indices_from(gram)] += mu * d1
        c_new = solve_spd(gram, (self.y3 @ s).T).T
        return c_new, s

    def objective_from_design(self, c, s, f, lam, mu, eta2):
        buf = self._resid
        if buf.shape[1] != s.shape[0] or c.shape[1] != s.shape[1]:
            buf = np.empty((c.shape[0], s.shape[0]))  # in-loop pruning shrank the model
        np.matmul(c, s.T, out=buf)
        np.subtract(self.y3, buf, out=buf)
        flat = buf.ravel()
        return 0.5 * float(flat @ flat) + _penalty(f, lam, mu, eta2)


def update_a(y, f: BtdFactors, cfg: BatchConfig, d2=None) -> BtdFactors:
    """Closed-form A update (regularized least squares against mode 1).

    ``d2`` lets callers reuse weights computed at sweep entry; by default
    the weights come from the factors passed in.
    """
    ws = _Workspace(y)
    if d2 is None:
        d2 = ab_column_weights(f.a, f.b, cfg.eta2)
    a = ws.update_a(f.a, f.b, f.c, cfg.lam, d2, f.width)
    return BtdFactors(a=a, b=f.b, c=f.c, width=f.width)


def update_b(y, f: BtdFactors, cfg: BatchConfig, d2=None) -> BtdFactors:
    """Closed-form B update (regularized least squares against mode 2)."""
    ws = _Workspace(y)
    if d2 is None:
        d2 = ab_column_weights(f.a, f.b, cfg.eta2)
    b = ws.update_b(f.a, f.b, f.c, cfg.lam, d2, f.width)
    return BtdFactors(a=f.a, b=b, c=f.c, width=f.width)


def update_c(y, f: BtdFactors, cfg: BatchConfig, d1=None) -> BtdFactors:
    """Closed-form C update (regularized least squares against mode 3)."""
    ws = _Workspace(y)
    if d1 is None:
        d1 = c_column_weights(f.c, cfg.eta2)
    c, _ = ws.update_c(f.a, f.b, f.c, cfg.mu, d1, f.width)
    return BtdFactors(a=f.a, b=f.b, c=c, width=f.width)


def sweep(y, f: BtdFactors, cfg: BatchConfig) -> BtdFactors:
    """One full reweighted sweep: weights, then A, B, C in that order.

    Both reweighting diagonals are computed once from the entry factors;
    each least-squares update then uses the newest available factors, so a
    sweep never increases the objective.
    """
    ws = _Workspace(y)
    return _sweep(ws, f, cfg)[0]


def _sweep(ws: _Workspace, f: BtdFactors, cfg: BatchConfig):
    d1 = c_column_weights(f.c, cfg.eta2)
    d2 = ab_column_weights(f.a, f.b, cfg.eta2)
    width = f.width
    yc = ws._shared(f.c)
    a = ws.update_a(f.a, f.b, f.c, cfg.lam, d2, width, yc=yc)
    b = ws.update_b(a, f.b, f.c, cfg.lam, d2, width, yc=yc)
    c, s = ws.update_c(a, b, f.c, cfg.mu, d1, width)
    out = BtdFactors(a=a, b=b, c=c, width=width)
    return out, s


def init_factors(dims, r_ini: int, l_ini: int, seed: int) -> BtdFactors:
    """Random starting point: i.i.d. standard normal entries, drawn A, B, C."""
    i, j, k = dims
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((i, l_ini * r_ini))
    b = rng.standard_normal((j, l_ini * r_ini))
    c = rng.standard_normal((k, r_ini))
    return BtdFactors(a=a, b=b, c=c, width=l_ini)


def btd_irls(y, cfg: BatchConfig, f0: BtdFactors | None = None) -> BatchResult:
    """Run reweighted sweeps until the objective stalls.

    Stops when the relative objective decrease falls below
    ``cfg.rel_tol`` or after ``cfg.max_iters`` sweeps (reported through
    ``BatchResult.converged``).  The returned trace holds the objective
    value at the starting point and after every sweep.
    """
    ws = _Workspace(y)
    f = f0 if f0 is not None else init_factors(ws.dims, cfg.r_ini, cfg.l_ini, cfg.seed)
    trace = [objective(ws.y, f, cfg)]
    converged = False
    iterations = 0
    for _ in range(cfg.max_iters):
        f, s = _sweep(ws, f, cfg)
        iterations += 1
        trace.append(ws.objective_from_design(f.c, s, f, cfg.lam, cfg.mu, cfg.eta2))
        if cfg.prune_in_loop:
            est = estimate_ranks(f, cfg.rank_threshold)
            if not est.degenerate and est.r_hat < f.num_blocks:
                f = prune(f, est)
        rel = abs(trace[-2] - trace[-1]) / max(trace[-2], np.finfo(float).tiny)
        if rel < cfg.rel_tol:
            converged = True
            break
    ranks = estimate_ranks(f, cfg.rank_threshold)
    return BatchResult(factors=f, ranks=ranks, trace=trace, converged=converged, iterations=iterations)


def estimate_ranks(f: BtdFactors, rank_threshold: float = 1e-2) -> RankEstimate:
    """Read the revealed model structure off a factor triple.

    A block survives when its C column norm reaches ``rank_threshold``
    times the largest C column norm; inside surviving blocks a column
    survives when its joint A/B norm reaches the threshold times the
    largest such norm over surviving blocks.
    """
    c_norms = np.linalg.norm(f.c, axis=0)
    ab_norms = np.sqrt((f.a * f.a).sum(axis=0) + (f.b * f.b).sum(axis=0))
    return estimate_ranks_from_norms(c_norms, ab_norms, f.width, rank_threshold)


def estimate_ranks_from_norms(
    c_norms, ab_col_norms, width: int, rank_threshold: float = 1e-2
) -> RankEstimate:
    """Thresholding rule behind :func:`estimate_ranks`, on raw column norms."""
    if not 0.0 < rank_threshold < 1.0:
        raise ValueError("rank_threshold must lie in (0, 1)")
    c_norms = np.asarray(c_norms, dtype=np.float64)
    ab = np.asarray(ab_col_norms, dtype=np.float64)
    c_max = c_norms.max(initial=0.0)
    if c_max == 0.0:
        return RankEstimate(0, [], [], [], degenerate=True)
    blocks = [r for r in range(c_norms.size) if c_norms[r] >= rank_threshold * c_max]
    col_max = max(ab[r * width + l] for r in blocks for l in range(width))
    if col_max == 0.0:
        return RankEstimate(0, [], [], [], degenerate=True)
    kept_blocks: list[int] = []
    kept_columns: list[list[int]] = []
    for r in blocks:
        cols = [l for l in range(width) if ab[r * width + l] >= rank_threshold * col_max]
        if cols:  # a block whose every column is negligible carries nothing
            kept_blocks.append(r)
            kept_columns.append(cols)
    if not kept_blocks:
        return RankEstimate(0, [], [], [], degenerate=True)
    return RankEstimate(
        r_hat=len(kept_blocks),
        l_hat=[len(cols) for cols in kept_columns],
        kept_blocks=kept_blocks,
        kept_columns=kept_columns,
    )


def prune(f: BtdFactors, est: RankEstimate) -> BtdFactors:
    """Drop the blocks and columns an estimate marked negligible.

    Surviving blocks are re-packed at a common width (the largest
    surviving column count); blocks with fewer surviving columns are
    padded with zero columns, which leave the reconstruction unchanged.
    """
    if est.degenerate or est.r_hat == 0:
        raise ValueError("cannot prune to an empty model")
    width = max(len(cols) for cols in est.kept_columns)
    i, j = f.a.shape[0], f.b.shape[0]
    a = np.zeros((i, width * est.r_hat))
    b = np.zeros((j, width * est.r_hat))
    for out_r, (r, cols) in enumerate(zip(est.kept_blocks, est.kept_columns)):
        src = [r * f.width + l for l in cols]
        a[:, out_r * width : out_r * width + len(cols)] = f.a[:, src]
        b[:, out_r * width : out_r * width + len(cols)] = f.b[:, src]
    c = f.c[:, est.kept_blocks]
    return BtdFactors(a=a, b=b, c=c, width=width)
