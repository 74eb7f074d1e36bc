"""Cross-resolution retrieval: apply panning, rank, score CMC and mAP.

Evaluation follows the usual re-identification protocol: each query ranks
the gallery by similarity; gallery items sharing both identity and camera
with the query are excluded when the camera filter is on; queries with no
remaining relevant item are skipped and counted.  Ties in similarity break
deterministically by gallery record index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingRecord, EmbeddingSet, Resolution
from .errors import DataError
from .vpnet import VPParams, forward

RANK_KS = (1, 5, 10)


@dataclass(frozen=True)
class RetrievalReport:
    rank_k: dict[int, float]
    mean_ap: float
    num_queries: int
    num_skipped: int
    metric: str
    per_query_ap: tuple[tuple[int, int, float], ...] = ()  # (index, identity, AP)


@dataclass(frozen=True)
class CentroidRow:
    distance_before: float
    distance_after: float
    reduction: float


@dataclass(frozen=True)
class CentroidReport:
    per_identity: dict[int, CentroidRow]
    mean_reduction: float


def apply_panning(
    params: VPParams, eset: EmbeddingSet, target: str = "lr"
) -> EmbeddingSet:
    """New set with selected vectors replaced by the network output.

    ``target`` is ``lr`` (default: only LR records are panned, HR records
    are reused untouched) or ``all``.
    """
    if params.dim != eset.dim:
        raise ValueError(f"params dim {params.dim} != set dim {eset.dim}")
    if target not in ("lr", "all"):
        raise ValueError(f"unknown target {target!r}")
    selected = [
        i for i, r in enumerate(eset.records)
        if target == "all" or r.resolution.is_lr
    ]
    if not selected:
        return EmbeddingSet(eset.dim, eset.records, eset.source_label)
    panned, _ = forward(params, np.stack([eset.records[i].vector for i in selected]))
    out: list[EmbeddingRecord] = list(eset.records)
    for row, i in enumerate(selected):
        old = eset.records[i]
        out[i] = EmbeddingRecord(old.identity, old.camera, old.resolution, panned[row])
    return EmbeddingSet(eset.dim, out, eset.source_label)


def _score_order(query_mat, gallery_mat, metric):
    """Ranked gallery indices per query (best first, index-stable ties)."""
    if metric == "cosine":
        qn = np.linalg.norm(query_mat, axis=1, keepdims=True)
        gn = np.linalg.norm(gallery_mat, axis=1, keepdims=True)
        if np.any(qn == 0) or np.any(gn == 0):
            raise DataError("cosine metric undefined for zero-norm vectors")
        scores = (query_mat / qn) @ (gallery_mat / gn).T
        return np.argsort(-scores, axis=1, kind="stable")
    if metric == "euclidean":
        sq = (
            np.sum(query_mat**2, axis=1, keepdims=True)
            - 2.0 * query_mat @ gallery_mat.T
            + np.sum(gallery_mat**2, axis=1)
        )
        return np.argsort(sq, axis=1, kind="stable")
    raise ValueError(f"unknown metric {metric!r}")


def evaluate(
    query: EmbeddingSet,
    gallery: EmbeddingSet,
    metric: str = "cosine",
    cross_camera_filter: bool = True,
    ks: tuple[int, ...] = RANK_KS,
) -> RetrievalReport:
    """CMC Rank-k and mAP of ranking the gallery for every query record."""
    if query.dim != gallery.dim:
        raise ValueError(f"query dim {query.dim} != gallery dim {gallery.dim}")
    if len(gallery) == 0:
        raise DataError("gallery is empty")
    if len(query) == 0:
        raise DataError("query set is empty")

    order = _score_order(query.matrix, gallery.matrix, metric)
    g_ids = gallery.identity_array
    g_cams = gallery.camera_array

    hits = {k: 0 for k in ks}
    per_query = []
    skipped = 0
    for qi, rec in enumerate(query.records):
        ranked = order[qi]
        if cross_camera_filter:
            junk = (g_ids[ranked] == rec.identity) & (g_cams[ranked] == rec.camera)
            ranked = ranked[~junk]
        matches = g_ids[ranked] == rec.identity
        if not matches.any():
            skipped += 1
            continue
        first = int(np.argmax(matches))
        for k in ks:
            if first < k:
                hits[k] += 1
        cum = np.cumsum(matches)
        precision_at_hits = cum[matches] / (np.flatnonzero(matches) + 1.0)
        per_query.append((qi, rec.identity, float(precision_at_hits.mean())))

    evaluated = len(query) - skipped
    if evaluated == 0:
        raise DataError("every query was skipped (no relevant gallery items)")
    return RetrievalReport(
        rank_k={k: hits[k] / evaluated for k in ks},
        mean_ap=float(np.mean([ap for _, _, ap in per_query])),
        num_queries=evaluated,
        num_skipped=skipped,
        metric=metric,
        per_query_ap=tuple(per_query),
    )


def _identity_centroids(eset: EmbeddingSet) -> dict[int, np.ndarray]:
    sums: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}
    for rec in eset.records:
        if rec.identity in sums:
            sums[rec.identity] = sums[rec.identity] + rec.vector
            counts[rec.identity] += 1
        else:
            sums[rec.identity] = rec.vector.copy()
            counts[rec.identity] = 1
    return {i: sums[i] / counts[i] for i in sums}


def centroid_distances(set_a: EmbeddingSet, set_b: EmbeddingSet) -> dict[int, float]:
    """Per shared identity, Euclidean distance between the two mean vectors."""
    if set_a.dim != set_b.dim:
        raise ValueError("sets have different dimensions")
    cent_a = _identity_centroids(set_a)
    cent_b = _identity_centroids(set_b)
    shared = sorted(set(cent_a) & set(cent_b))
    if not shared:
        raise DataError("the sets share no identities")
    return {i: float(np.linalg.norm(cent_a[i] - cent_b[i])) for i in shared}


def compare_centroids(
    hr_set: EmbeddingSet, before: EmbeddingSet, after: EmbeddingSet
) -> CentroidReport:
    """Centroid distances to the HR set before vs after panning."""
    dist_before = centroid_distances(hr_set, before)
    dist_after = centroid_distances(hr_set, after)
    shared = sorted(set(dist_before) & set(dist_after))
    if not shared:
        raise DataError("no identity present in both comparisons")
    rows = {}
    for i in shared:
        b = dist_before[i]
        a = dist_after[i]
        reduction = 0.0 if b == 0.0 else 1.0 - a / b
        rows[i] = CentroidRow(distance_before=b, distance_after=a, reduction=reduction)
    mean_reduction = float(np.mean([r.reduction for r in rows.values()]))
    return CentroidReport(per_identity=rows, mean_reduction=mean_reduction)


def project_2d(
    sets: list[EmbeddingSet], num_identities: int | None = None
) -> list[tuple[int, Resolution, float, float]]:
    """Top-2 principal-component coordinates of the pooled records.

    Components come from the eigendecomposition of the pooled covariance;
    each component's sign is fixed so its first loading above 1e-12 in
    magnitude is positive.  Rows are (identity, resolution, x, y) in pooled
    record order.
    """
    records = [r for s in sets for r in s.records]
    if num_identities is not None:
        keep = set(sorted({r.identity for r in records})[:num_identities])
        records = [r for r in records if r.identity in keep]
    if len(records) < 2:
        raise DataError("2-d projection needs at least two records")
    x = np.stack([r.vector for r in records])
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    top = eigvecs[:, ::-1][:, :2]
    lead, second = eigvals[::-1][:2]
    if second <= 0 or second < 1e-12 * lead:
        raise DataError("data rank < 2, cannot project to two components")
    for c in range(2):
        loadings = top[:, c]
        nonzero = np.flatnonzero(np.abs(loadings) > 1e-12)
        if nonzero.size and loadings[nonzero[0]] < 0:
            top[:, c] = -loadings
    coords = centered @ top
    return [
        (rec.identity, rec.resolution, float(coords[i, 0]), float(coords[i, 1]))
        for i, rec in enumerate(records)
    ]
