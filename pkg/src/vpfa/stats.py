"""Statistical checks for a shared resolution direction in feature space.

Three analyses, each applied per LR rate:

* split-cosine: cosine similarity between the average HR-LR difference
  vectors of two disjoint identity halves;
* regularized CCA between paired HR/LR matrices, against a random-matrix
  baseline of the same shape;
* grouped Pearson correlation of group-mean difference vectors against the
  global mean shift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingSet, Resolution, half_split_identities
from .errors import DataError


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity a.b / (|a| |b|); rejects zero-norm inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DataError("cosine undefined for zero-norm vector")
    return float(np.dot(a, b) / (na * nb))


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Sample Pearson correlation coefficient of two equal-length arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("pearson expects two 1-d arrays of equal length")
    if a.size < 2:
        raise ValueError("pearson needs at least two samples")
    da = a - a.mean()
    db = b - b.mean()
    va = np.dot(da, da)
    vb = np.dot(db, db)
    if va == 0.0 or vb == 0.0:
        raise DataError("pearson undefined for zero-variance input")
    return float(np.dot(da, db) / np.sqrt(va * vb))


def cca_top_k(
    X: np.ndarray, Y: np.ndarray, k: int = 3, eps: float = 1e-6
) -> np.ndarray:
    """Top-k canonical correlations between row-aligned matrices X and Y.

    Columns are mean-centered; both auto-covariance blocks get a ridge
    ``eps * I``; the correlations are the singular values of
    ``Cxx^{-1/2} Cxy Cyy^{-1/2}``, clipped to [0, 1] and returned in
    descending order (zero-padded if fewer than k exist).
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValueError("X and Y must be 2-d with the same number of rows")
    if X.shape[0] < 2:
        raise DataError("CCA needs at least two rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("CCA input contains non-finite values")
    if k < 1:
        raise ValueError("k must be positive")
    if eps < 0:
        raise ValueError("eps must be non-negative")

    n = X.shape[0]
    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    cxx = Xc.T @ Xc / (n - 1) + eps * np.eye(X.shape[1])
    cyy = Yc.T @ Yc / (n - 1) + eps * np.eye(Y.shape[1])
    cxy = Xc.T @ Yc / (n - 1)

    m = _inv_sqrt(cxx) @ cxy @ _inv_sqrt(cyy)
    corrs = np.clip(np.linalg.svd(m, compute_uv=False), 0.0, 1.0)
    out = np.zeros(k)
    take = min(k, corrs.size)
    out[:take] = corrs[:take]
    return out


def _inv_sqrt(c: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(c)
    if w.min() <= 0.0:
        raise DataError(
            "covariance block is rank-deficient; use a positive regularization eps"
        )
    return (v / np.sqrt(w)) @ v.T


def _pca_reduce(m: np.ndarray, q: int) -> np.ndarray:
    """Project the centered rows of m onto its top-q principal components."""
    centered = m - m.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return centered @ vt[:q].T


@dataclass(frozen=True)
class SplitCosineEntry:
    cosine: float
    half_sizes: tuple[int, int]


@dataclass(frozen=True)
class CcaEntry:
    cross_res: tuple[float, ...]
    random_baseline: tuple[float, ...]
    rows: int
    components: int


@dataclass(frozen=True)
class PearsonEntry:
    mean_r: float
    std_r: float
    proportion_above: float
    group_count: int
    threshold: float


@dataclass(frozen=True)
class StatsReport:
    split_cosine: dict[int, SplitCosineEntry]
    cca: dict[int, CcaEntry]
    cca_eps: float
    pearson: dict[int, PearsonEntry]


def _group_by_identity(
    eset: EmbeddingSet, lr: Resolution
) -> tuple[dict[int, list[np.ndarray]], dict[int, list[np.ndarray]]]:
    """HR and LR-at-rate vectors per identity, in record order."""
    hr: dict[int, list[np.ndarray]] = {}
    lrs: dict[int, list[np.ndarray]] = {}
    for rec in eset.records:
        if rec.resolution.is_hr:
            hr.setdefault(rec.identity, []).append(rec.vector)
        elif rec.resolution == lr:
            lrs.setdefault(rec.identity, []).append(rec.vector)
    return hr, lrs


def _identity_means(hr, lrs, ids) -> tuple[np.ndarray, np.ndarray]:
    """Per-identity mean HR and mean LR matrices, one row per id."""
    hr_rows = [np.mean(hr[i], axis=0) for i in ids]
    lr_rows = [np.mean(lrs[i], axis=0) for i in ids]
    return np.stack(hr_rows), np.stack(lr_rows)


def _sample_pairs(hr, lrs, ids, lr) -> tuple[np.ndarray, np.ndarray]:
    """Row-aligned HR/LR sample matrices paired by within-identity order."""
    hr_rows = []
    lr_rows = []
    for identity in ids:
        for h, l in zip(hr[identity], lrs[identity]):
            hr_rows.append(h)
            lr_rows.append(l)
    if not hr_rows:
        raise DataError(f"no paired HR/{lr} samples")
    return np.stack(hr_rows), np.stack(lr_rows)


def split_cosine(eset: EmbeddingSet, rate: int) -> SplitCosineEntry:
    """Cosine between the mean HR-LR shifts of two disjoint identity halves.

    Identities with both resolutions are split by the sorted-ID rule; the
    shift of a half is (mean of per-identity HR means) minus (mean of
    per-identity LR means).
    """
    lr = Resolution(rate)
    hr, lrs = _group_by_identity(eset, lr)
    ids = sorted(set(hr) & set(lrs))
    if len(ids) < 2:
        raise DataError(
            f"split cosine at {lr} needs >= 2 identities with both resolutions, got {len(ids)}"
        )
    first, second = half_split_identities(ids)

    def shift(half: list[int]) -> np.ndarray:
        hr_means, lr_means = _identity_means(hr, lrs, half)
        return hr_means.mean(axis=0) - lr_means.mean(axis=0)

    value = cosine(shift(first), shift(second))
    return SplitCosineEntry(cosine=value, half_sizes=(len(first), len(second)))


def cca_with_random_baseline(
    eset: EmbeddingSet,
    rate: int,
    k: int = 3,
    eps: float = 1e-6,
    seed: int = 0,
    rows: str = "per_sample",
) -> CcaEntry:
    """CCA between paired HR and LR matrices plus a same-shape random baseline.

    ``rows`` selects the pairing: ``per_sample`` pairs the j-th HR record of
    each identity with its j-th LR-at-rate record; ``identity_mean`` uses one
    row of per-identity means per side.  When the column count exceeds
    rows - 1, both sides are reduced to their top min(rows - 1, dim)
    principal components first (recorded in ``components``).
    """
    lr = Resolution(rate)
    hr, lrs = _group_by_identity(eset, lr)
    ids = sorted(set(hr) & set(lrs))
    if not ids:
        raise DataError(f"no identities with both HR and {lr} records")
    if rows == "identity_mean":
        hr_mat, lr_mat = _identity_means(hr, lrs, ids)
    elif rows == "per_sample":
        hr_mat, lr_mat = _sample_pairs(hr, lrs, ids, lr)
    else:
        raise ValueError(f"unknown row mode {rows!r}")

    n, dim = hr_mat.shape
    components = dim
    if dim > n - 1:
        components = min(n - 1, dim)
        hr_mat = _pca_reduce(hr_mat, components)
        lr_mat = _pca_reduce(lr_mat, components)

    cross = cca_top_k(hr_mat, lr_mat, k, eps)
    rng = np.random.default_rng(seed)
    rand_a = rng.standard_normal(hr_mat.shape)
    rand_b = rng.standard_normal(lr_mat.shape)
    baseline = cca_top_k(rand_a, rand_b, k, eps)
    return CcaEntry(
        cross_res=tuple(cross),
        random_baseline=tuple(baseline),
        rows=n,
        components=components,
    )


def grouped_pearson(
    eset: EmbeddingSet,
    rate: int,
    num_identities: int = 50,
    group_size: int = 2,
    seed: int = 0,
    threshold: float = 0.4,
) -> PearsonEntry:
    """Correlate group-mean difference vectors with the global mean shift.

    The global shift is the mean of all sample-level HR-LR differences at
    this rate.  Difference vectors of the first ``num_identities`` sorted
    identities are pooled, shuffled with ``seed``, and chunked into
    consecutive groups of ``group_size`` (trailing remainder dropped); each
    group's mean vector is Pearson-correlated against the global shift.
    """
    if num_identities < 1 or group_size < 1:
        raise ValueError("num_identities and group_size must be positive")
    lr = Resolution(rate)
    hr, lrs = _group_by_identity(eset, lr)
    diffs_by_id = {}
    for identity in sorted(set(hr) & set(lrs)):
        pairs = [h - l for h, l in zip(hr[identity], lrs[identity])]
        if pairs:
            diffs_by_id[identity] = pairs
    if len(diffs_by_id) < num_identities:
        raise DataError(
            f"grouped pearson at {lr} needs {num_identities} identities with "
            f"paired samples, got {len(diffs_by_id)}"
        )
    global_shift = np.mean(
        [d for pairs in diffs_by_id.values() for d in pairs], axis=0
    )
    selected = sorted(diffs_by_id)[:num_identities]
    pool = [d for identity in selected for d in diffs_by_id[identity]]

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pool))
    num_groups = len(pool) // group_size
    if num_groups == 0:
        raise DataError("not enough difference vectors to form a single group")
    rs = []
    for g in range(num_groups):
        members = order[g * group_size : (g + 1) * group_size]
        group_mean = np.mean([pool[i] for i in members], axis=0)
        rs.append(pearson(group_mean, global_shift))
    rs = np.array(rs)
    return PearsonEntry(
        mean_r=float(rs.mean()),
        std_r=float(rs.std()),
        proportion_above=float(np.mean(rs > threshold)),
        group_count=num_groups,
        threshold=threshold,
    )


def lr_rates(eset: EmbeddingSet) -> list[int]:
    """Sorted LR rates present in the set."""
    return sorted({r.resolution.rate for r in eset.records if r.resolution.is_lr})


def analyze_set(
    eset: EmbeddingSet,
    rates: list[int] | None = None,
    cca_eps: float = 1e-6,
    cca_rows: str = "per_sample",
    num_identities: int = 50,
    group_size: int = 2,
    seed: int = 0,
) -> StatsReport:
    """All three analyses for every requested (or present) LR rate."""
    if rates is None:
        rates = lr_rates(eset)
    if not rates:
        raise DataError("set contains no LR records")
    split = {}
    cca = {}
    pear = {}
    for rate in rates:
        split[rate] = split_cosine(eset, rate)
        cca[rate] = cca_with_random_baseline(
            eset, rate, eps=cca_eps, seed=seed, rows=cca_rows
        )
        pear[rate] = grouped_pearson(
            eset, rate, num_identities=num_identities, group_size=group_size, seed=seed
        )
    return StatsReport(split_cosine=split, cca=cca, cca_eps=cca_eps, pearson=pear)
