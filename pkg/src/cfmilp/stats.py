"""Distance metric, Mahalanobis context and local-outlier-factor tables.

The per-dimension metric is a weighted L1 distance whose scales come from the
median absolute deviation of each training column (population std, then 1.0,
as fallbacks).  The Mahalanobis context carries the regularized covariance,
its inverse and an upper-triangular factor U with U'U = inv(Sigma), used both
for the exact distance and for the linearized objective.

LOF follows the classic definition with k nearest neighbors under the L1
metric, ties broken by instance index.  The cost model only ever needs the
k = 1 tables (d_1 and lrd_1 per reference point); larger k is supported for
evaluation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class DeltaMetric:
    """Weighted L1 distance with fixed per-column scales."""

    scales: np.ndarray

    @classmethod
    def from_matrix(cls, x: np.ndarray) -> "DeltaMetric":
        """MAD scales per column; zero MAD falls back to population std, then 1."""
        x = np.asarray(x, dtype=float)
        med = np.median(x, axis=0)
        mad = np.median(np.abs(x - med), axis=0)
        std = x.std(axis=0)  # population convention
        scales = np.where(mad > 0.0, mad, np.where(std > 0.0, std, 1.0))
        return cls(scales=scales)

    def delta(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(np.sum(np.abs(np.asarray(u, float) - np.asarray(v, float)) / self.scales))

    def delta_rows(self, u: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Distances from ``u`` to every row of ``x``."""
        return np.sum(np.abs(np.asarray(x, float) - np.asarray(u, float)) / self.scales, axis=1)


@dataclass(frozen=True)
class MahalanobisContext:
    sigma: np.ndarray
    sigma_inv: np.ndarray
    chol_u: np.ndarray       # upper triangular, chol_u' @ chol_u == sigma_inv
    eps: float


def build_mahalanobis(x: np.ndarray, eps: float | None = None) -> MahalanobisContext:
    """Covariance context from a training matrix.

    The covariance gets ``eps`` added to its diagonal before inversion;
    when eps is None it defaults to 1e-6 * trace(Sigma) / D.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need a 2-D matrix with at least 2 rows")
    d = x.shape[1]
    centered = x - x.mean(axis=0)
    sigma = centered.T @ centered / x.shape[0]
    if eps is None:
        tr = float(np.trace(sigma))
        eps = 1e-6 * tr / d if tr > 0.0 else 1e-6
    sigma_reg = sigma + eps * np.eye(d)
    try:
        sigma_inv = np.linalg.inv(sigma_reg)
        sigma_inv = 0.5 * (sigma_inv + sigma_inv.T)
        low = np.linalg.cholesky(sigma_inv)
    except np.linalg.LinAlgError:
        smallest = float(np.linalg.eigvalsh(sigma_reg)[0])
        raise np.linalg.LinAlgError(
            f"covariance factorization failed even with eps={eps:g} "
            f"(smallest eigenvalue {smallest:g})"
        ) from None
    return MahalanobisContext(sigma=sigma_reg, sigma_inv=sigma_inv, chol_u=low.T, eps=float(eps))


def mahalanobis_distance(ctx: MahalanobisContext, x: np.ndarray, x2: np.ndarray) -> float:
    """Exact quadratic-form distance sqrt((x2-x)' inv(Sigma) (x2-x))."""
    diff = np.asarray(x2, float) - np.asarray(x, float)
    return float(np.sqrt(max(diff @ ctx.sigma_inv @ diff, 0.0)))


def md_l2(ctx: MahalanobisContext, x: np.ndarray, x2: np.ndarray) -> float:
    """Same distance through the factor: ||U (x2 - x)||_2."""
    diff = np.asarray(x2, float) - np.asarray(x, float)
    return float(np.linalg.norm(ctx.chol_u @ diff, 2))


def md_l1(ctx: MahalanobisContext, x: np.ndarray, x2: np.ndarray) -> float:
    """The L1 surrogate ||U (x2 - x)||_1 used by the linear objective."""
    diff = np.asarray(x2, float) - np.asarray(x, float)
    return float(np.abs(ctx.chol_u @ diff).sum())


def knn(metric: DeltaMetric, query: np.ndarray, x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """k nearest rows of ``x`` to ``query`` under the metric.

    Rows at distance exactly zero count as the query itself and are skipped,
    so a member of ``x`` gets its k nearest *other* points.  Ties break by
    row index.  Returns (indices, distances), both length k.
    """
    d = metric.delta_rows(query, x)
    keep = np.nonzero(d > 0.0)[0]
    if k < 1 or k > keep.size:
        raise ValueError(f"k={k} out of range (have {keep.size} distinct points)")
    order = keep[np.lexsort((keep, d[keep]))]
    idx = order[:k]
    return idx, d[idx]


@dataclass
class LofContext:
    """Reference set with precomputed k=1 LOF tables.

    d1[n] is the distance from reference point n to its nearest other
    reference point, nn1[n] that neighbor's index, and lrd1[n] the local
    reachability density 1 / max(d1[n], d1[nn1[n]]).  Tables for larger k
    are built lazily for evaluation.
    """

    x: np.ndarray
    metric: DeltaMetric
    d1: np.ndarray
    nn1: np.ndarray
    lrd1: np.ndarray
    _k_tables: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return self.x.shape[0]


def sample_reference_set(x: np.ndarray, y: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Uniformly sample ``n`` distinct positive-label rows without replacement.

    Duplicated rows collapse to their first drawn copy; sampling continues
    until n unique rows are collected.  Raises when the positive class has
    fewer than n unique rows.
    """
    pos = np.nonzero(np.asarray(y) == 1)[0]
    if pos.size == 0:
        raise ValueError("no positive-label rows to sample from")
    rng = np.random.default_rng(seed)
    order = rng.permutation(pos.size)
    seen: set[bytes] = set()
    chosen: list[int] = []
    for j in order:
        row = np.ascontiguousarray(x[pos[j]], dtype=float)
        key = row.tobytes()
        if key in seen:
            continue
        seen.add(key)
        chosen.append(int(pos[j]))
        if len(chosen) == n:
            break
    if len(chosen) < n:
        raise ValueError(
            f"positive class has only {len(chosen)} unique rows, cannot sample {n}"
        )
    return x[chosen].astype(float).copy()


def build_lof_context(x: np.ndarray, metric: DeltaMetric) -> LofContext:
    """Precompute nearest-neighbor and density tables for a deduplicated set."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise ValueError("reference set needs at least 2 points")
    d1 = np.empty(n)
    nn1 = np.empty(n, dtype=int)
    for i in range(n):
        d = metric.delta_rows(x[i], x)
        d[i] = np.inf
        if np.min(d) == 0.0:
            raise ValueError("reference set contains duplicate rows")
        j = int(np.lexsort((np.arange(n), d))[0])
        nn1[i] = j
        d1[i] = d[j]
    # rd_1(x_i, nn) = max(d1_i, d1_nn); lrd is its inverse
    lrd1 = 1.0 / np.maximum(d1, d1[nn1])
    return LofContext(x=x, metric=metric, d1=d1, nn1=nn1, lrd1=lrd1)


def _member_tables(ctx: LofContext, k: int) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """(d_k, lrd_k, neighbor lists) over the reference set for a given k."""
    if k in ctx._k_tables:
        return ctx._k_tables[k]
    n = len(ctx)
    if not 1 <= k <= n - 1:
        raise ValueError(f"k={k} out of range for {n} reference points")
    neigh: list[np.ndarray] = []
    dk = np.empty(n)
    for i in range(n):
        idx, dist = knn(ctx.metric, ctx.x[i], ctx.x, k)
        neigh.append(idx)
        dk[i] = dist[-1]
    lrdk = np.empty(n)
    for i in range(n):
        dists = ctx.metric.delta_rows(ctx.x[i], ctx.x[neigh[i]])
        rd = np.maximum(dists, dk[neigh[i]])
        lrdk[i] = k / float(rd.sum())
    ctx._k_tables[k] = (dk, lrdk, neigh)
    return ctx._k_tables[k]


def reachability(ctx: LofContext, point: np.ndarray, n_index: int, k: int = 1) -> float:
    """Reachability distance of ``point`` from reference point ``n_index``."""
    d = ctx.metric.delta(point, ctx.x[n_index])
    if k == 1:
        return float(max(d, ctx.d1[n_index]))
    dk, _, _ = _member_tables(ctx, k)
    return float(max(d, dk[n_index]))


def lof(ctx: LofContext, query: np.ndarray, k: int) -> float:
    """Local outlier factor of ``query`` against the reference set."""
    dk, lrdk, _ = _member_tables(ctx, k)
    idx, dist = knn(ctx.metric, query, ctx.x, k)
    rd = np.maximum(dist, dk[idx])
    lrd_q = k / float(rd.sum())
    return float(np.mean(lrdk[idx]) / lrd_q)


def nearest_ref(ctx: LofContext, point: np.ndarray) -> tuple[int, float]:
    """Nearest reference point to ``point`` (ties by index), zero distance allowed."""
    d = ctx.metric.delta_rows(point, ctx.x)
    j = int(np.lexsort((np.arange(len(ctx)), d))[0])
    return j, float(d[j])


def q1_surrogate(ctx: LofContext, point: np.ndarray) -> float:
    """Single-neighbor outlier penalty lrd_1(nn) * rd_1(point, nn)."""
    j, d = nearest_ref(ctx, point)
    return float(ctx.lrd1[j] * max(d, ctx.d1[j]))


def dump_tables(ctx: LofContext, path: str | Path) -> None:
    """Write the k=1 tables to CSV for inspection."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "nn1", "d1", "lrd1"])
        for i in range(len(ctx)):
            w.writerow([i, int(ctx.nn1[i]), repr(float(ctx.d1[i])), repr(float(ctx.lrd1[i]))])
