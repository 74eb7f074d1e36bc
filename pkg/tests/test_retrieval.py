import numpy as np
import pytest

from vpfa.embeddings import EmbeddingRecord, EmbeddingSet, Resolution
from vpfa.errors import DataError
from vpfa.retrieval import (
    apply_panning,
    centroid_distances,
    compare_centroids,
    evaluate,
    project_2d,
)
from vpfa.synthgen import SynthConfig, generate
from vpfa.trainer import TrainConfig, train
from vpfa.vpnet import NetConfig, init_params

HR = Resolution(0)
LR2 = Resolution(2)


def record(identity, camera, res, vec):
    return EmbeddingRecord(identity, camera, res, np.asarray(vec, dtype=float))


def gallery_at_distances(query_vec, distances, identities):
    """Gallery records placed at exact Euclidean distances from the query."""
    dim = len(query_vec)
    records = []
    for i, (dist, identity) in enumerate(zip(distances, identities)):
        v = np.array(query_vec, dtype=float)
        v[0] += dist
        records.append(record(identity, 1, HR, v))
    return EmbeddingSet(dim, records)


class TestApplyPanning:
    def test_zero_network_is_identity(self):
        s = generate(SynthConfig(num_identities=5, seed=0))
        params = init_params(64, 16, init_std=0.0)
        out = apply_panning(params, s)
        assert len(out) == len(s)
        for a, b in zip(out.records, s.records):
            assert a.vector.tobytes() == b.vector.tobytes()

    def test_hr_records_untouched_under_lr_target(self):
        s = generate(SynthConfig(num_identities=5, seed=1))
        params = init_params(64, 16, init_std=0.5, seed=2)
        out = apply_panning(params, s, target="lr")
        changed = 0
        for a, b in zip(out.records, s.records):
            assert (a.identity, a.camera, a.resolution) == (
                b.identity, b.camera, b.resolution,
            )
            if b.resolution.is_hr:
                assert a.vector.tobytes() == b.vector.tobytes()
            else:
                changed += a.vector.tobytes() != b.vector.tobytes()
        assert changed > 0

    def test_all_target_pans_everything(self):
        s = generate(SynthConfig(num_identities=3, seed=2))
        params = init_params(64, 16, init_std=0.5, seed=3)
        out = apply_panning(params, s, target="all")
        assert all(
            a.vector.tobytes() != b.vector.tobytes()
            for a, b in zip(out.records, s.records)
        )

    def test_dim_mismatch_rejected(self):
        s = generate(SynthConfig(dim=32, num_identities=3, seed=0))
        with pytest.raises(ValueError, match="dim"):
            apply_panning(init_params(16, 8), s)

    def test_trained_panning_pulls_centroids_closer(self):
        train_set = generate(SynthConfig(num_identities=100, seed=7))
        params, _ = train(
            train_set, NetConfig(dim=64, hidden=64),
            TrainConfig(epochs=15, num_pairs=1000, seed=0),
        )
        fresh_cfg = SynthConfig(num_identities=50, seed=21, direction_seed=7)
        fresh = generate(fresh_cfg)
        panned = apply_panning(params, fresh)
        # direct centroid computation on both sets, per identity
        closer = 0
        total = 0
        for identity in fresh.identities():
            hr = np.mean([r.vector for r in fresh.records_of(identity, HR)], axis=0)
            before = np.mean(
                [r.vector for r in fresh.records_of(identity, LR2)], axis=0
            )
            after = np.mean(
                [r.vector for r in panned.records_of(identity, LR2)], axis=0
            )
            total += 1
            closer += np.linalg.norm(hr - after) < np.linalg.norm(hr - before)
        assert closer / total >= 0.9


class TestEvaluate:
    def test_self_retrieval_is_perfect(self):
        s = generate(SynthConfig(num_identities=10, seed=3))
        report = evaluate(s, s, metric="cosine", cross_camera_filter=False)
        assert report.rank_k[1] == 1.0
        assert report.num_skipped == 0

    def test_single_query_nearest_same_identity(self):
        query = EmbeddingSet(2, [record(0, 0, LR2, [1.0, 0.0])])
        gallery = EmbeddingSet(2, [
            record(0, 1, HR, [0.9, 0.1]),
            record(1, 1, HR, [-1.0, 0.0]),
        ])
        report = evaluate(query, gallery)
        assert report.rank_k[1] == 1.0
        assert report.mean_ap == 1.0
        assert report.num_queries == 1

    def test_hand_computed_average_precision(self):
        # two relevant items at ranks 1 and 3 of 5: AP = (1/1 + 2/3) / 2
        query = EmbeddingSet(2, [record(0, 0, LR2, [0.0, 0.0])])
        gallery = gallery_at_distances(
            [0.0, 0.0], distances=[1, 2, 3, 4, 5], identities=[0, 1, 0, 1, 1]
        )
        report = evaluate(query, gallery, metric="euclidean",
                          cross_camera_filter=False)
        assert report.mean_ap == pytest.approx((1.0 + 2.0 / 3.0) / 2.0, abs=1e-12)
        assert report.rank_k[1] == 1.0

    def test_cmc_monotone_and_bounded(self):
        s = generate(SynthConfig(num_identities=30, seed=4))
        lr = s.partition(lambda r: r.resolution.is_lr)
        hr = s.partition(lambda r: r.resolution.is_hr)
        report = evaluate(lr, hr)
        assert 0 <= report.rank_k[1] <= report.rank_k[5] <= report.rank_k[10] <= 1
        assert 0 <= report.mean_ap <= 1

    def test_global_scaling_leaves_report_unchanged(self):
        s = generate(SynthConfig(num_identities=20, seed=5))
        lr = s.partition(lambda r: r.resolution.is_lr)
        hr = s.partition(lambda r: r.resolution.is_hr)
        scaled = EmbeddingSet(
            s.dim,
            [record(r.identity, r.camera, r.resolution, 2.5 * r.vector)
             for r in s.records],
        )
        slr = scaled.partition(lambda r: r.resolution.is_lr)
        shr = scaled.partition(lambda r: r.resolution.is_hr)
        for metric in ("cosine", "euclidean"):
            a = evaluate(lr, hr, metric=metric)
            b = evaluate(slr, shr, metric=metric)
            assert a.rank_k == b.rank_k
            assert a.mean_ap == pytest.approx(b.mean_ap, abs=1e-12)

    def test_ties_break_by_gallery_index(self):
        query = EmbeddingSet(2, [record(0, 0, LR2, [1.0, 0.0])])
        twin = [1.0, 0.0]
        gallery = EmbeddingSet(2, [
            record(5, 1, HR, twin),
            record(0, 1, HR, twin),
        ])
        report = evaluate(query, gallery, cross_camera_filter=False)
        # both gallery vectors tie at similarity 1; index 0 (identity 5) wins
        assert report.rank_k[1] == 0.0
        assert report.rank_k[5] == 1.0

    def test_camera_filter_excludes_same_id_same_camera(self):
        query = EmbeddingSet(2, [record(0, 0, LR2, [1.0, 0.0])])
        gallery = EmbeddingSet(2, [
            record(0, 0, HR, [1.0, 0.0]),    # same identity, same camera: junk
            record(1, 1, HR, [0.9, 0.1]),
            record(0, 1, HR, [0.5, 0.5]),    # the legitimate match
        ])
        filtered = evaluate(query, gallery, cross_camera_filter=True)
        unfiltered = evaluate(query, gallery, cross_camera_filter=False)
        assert unfiltered.rank_k[1] == 1.0
        assert filtered.rank_k[1] == 0.0  # match now sits at rank 2

    def test_queries_without_relevant_items_are_skipped(self):
        query = EmbeddingSet(2, [
            record(0, 0, LR2, [1.0, 0.0]),
            record(9, 0, LR2, [0.0, 1.0]),  # identity absent from gallery
        ])
        gallery = EmbeddingSet(2, [record(0, 1, HR, [1.0, 0.1])])
        report = evaluate(query, gallery)
        assert report.num_queries == 1
        assert report.num_skipped == 1

    def test_all_skipped_is_an_error(self):
        query = EmbeddingSet(2, [record(9, 0, LR2, [1.0, 0.0])])
        gallery = EmbeddingSet(2, [record(0, 1, HR, [1.0, 0.1])])
        with pytest.raises(DataError, match="skipped"):
            evaluate(query, gallery)

    def test_empty_gallery_rejected(self):
        query = EmbeddingSet(2, [record(0, 0, LR2, [1.0, 0.0])])
        with pytest.raises(DataError, match="gallery"):
            evaluate(query, EmbeddingSet(2))

    def test_repeated_runs_identical(self):
        s = generate(SynthConfig(num_identities=15, seed=6))
        lr = s.partition(lambda r: r.resolution.is_lr)
        hr = s.partition(lambda r: r.resolution.is_hr)
        assert evaluate(lr, hr) == evaluate(lr, hr)

    def test_per_query_table_covers_evaluated_queries(self):
        s = generate(SynthConfig(num_identities=10, seed=8))
        lr = s.partition(lambda r: r.resolution.is_lr)
        hr = s.partition(lambda r: r.resolution.is_hr)
        report = evaluate(lr, hr)
        assert len(report.per_query_ap) == report.num_queries
        assert report.mean_ap == pytest.approx(
            np.mean([ap for _, _, ap in report.per_query_ap])
        )


class TestCentroids:
    def test_identical_sets_have_zero_distances(self):
        s = generate(SynthConfig(num_identities=6, seed=9))
        distances = centroid_distances(s, s)
        assert all(d == 0.0 for d in distances.values())

    def test_no_shared_identities_rejected(self):
        a = EmbeddingSet(2, [record(0, 0, HR, [1, 2])])
        b = EmbeddingSet(2, [record(1, 0, LR2, [1, 2])])
        with pytest.raises(DataError, match="share"):
            centroid_distances(a, b)

    def test_reduction_arithmetic(self):
        hr = EmbeddingSet(2, [record(0, 0, HR, [0.0, 0.0])])
        before = EmbeddingSet(2, [record(0, 0, LR2, [2.0, 0.0])])
        after = EmbeddingSet(2, [record(0, 0, LR2, [1.0, 0.0])])
        report = compare_centroids(hr, before, after)
        row = report.per_identity[0]
        assert row.distance_before == 2.0
        assert row.distance_after == 1.0
        assert row.reduction == pytest.approx(0.5)
        assert report.mean_reduction == pytest.approx(0.5)


class TestProject2d:
    def test_axis_aligned_plane_is_reproduced(self):
        # zero cross-covariance, larger spread on x: components are the
        # coordinate axes and the output reproduces the centered data
        pts = [(-2.0, 0.0), (2.0, 0.0), (0.0, -1.0), (0.0, 1.0)]
        s = EmbeddingSet(2, [record(i, 0, HR, p) for i, p in enumerate(pts)])
        rows = project_2d([s])
        arr = np.array([[x, y] for _, _, x, y in rows])
        np.testing.assert_allclose(arr, np.array(pts), atol=1e-12)

    def test_duplicates_map_to_identical_coordinates(self):
        pts = [(0.0, 0.0), (1.0, 2.0), (1.0, 2.0), (3.0, -1.0)]
        s = EmbeddingSet(2, [record(i, 0, HR, p) for i, p in enumerate(pts)])
        rows = project_2d([s])
        assert rows[1][2:] == rows[2][2:]

    def test_rank_deficient_data_rejected(self):
        pts = [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]  # collinear
        s = EmbeddingSet(2, [record(i, 0, HR, p) for i, p in enumerate(pts)])
        with pytest.raises(DataError, match="rank"):
            project_2d([s])

    def test_identity_restriction(self):
        s = generate(SynthConfig(dim=8, num_identities=20, samples_per_res=2, seed=10))
        rows = project_2d([s], num_identities=12)
        assert {identity for identity, _, _, _ in rows} == set(range(12))

    def test_planted_gap_shrinks_after_panning_in_2d(self):
        cfg = SynthConfig(num_identities=12, seed=11)
        s = generate(cfg)
        params, _ = train(
            s, NetConfig(dim=64, hidden=64),
            TrainConfig(epochs=15, num_pairs=500, seed=1),
        )
        panned = apply_panning(params, s)

        def mean_2d_gap(eset):
            rows = project_2d([eset], num_identities=12)
            gaps = []
            for identity in range(12):
                hr_pts = [(x, y) for i, res, x, y in rows
                          if i == identity and res.is_hr]
                lr_pts = [(x, y) for i, res, x, y in rows
                          if i == identity and res.is_lr]
                gaps.append(np.linalg.norm(
                    np.mean(hr_pts, axis=0) - np.mean(lr_pts, axis=0)
                ))
            return float(np.mean(gaps))

        assert mean_2d_gap(panned) < 0.25 * mean_2d_gap(s)
