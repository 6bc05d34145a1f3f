import numpy as np
import pytest

from kaplan import PointCloud, chamfer, f1_score, hole_region_report

from conftest import make_sphere
from oracles import chamfer_oracle, f1_oracle


def random_cloud(rng, n):
    return PointCloud(rng.uniform(-1, 1, size=(n, 3)))


class TestChamfer:
    def test_identical_clouds_zero(self):
        cloud = make_sphere(200, seed=111)
        assert chamfer(cloud, cloud) == 0.0

    def test_hand_example(self):
        a = PointCloud([[0.0, 0.0, 0.0]])
        b = PointCloud([[1.0, 0.0, 0.0]])
        assert chamfer(a, b) == pytest.approx(2.0, abs=1e-15)

    def test_symmetry(self):
        rng = np.random.default_rng(112)
        a, b = random_cloud(rng, 100), random_cloud(rng, 150)
        assert chamfer(a, b) == chamfer(b, a)

    def test_matches_quadratic_oracle(self):
        rng = np.random.default_rng(113)
        for _ in range(10):
            a = random_cloud(rng, int(rng.integers(20, 500)))
            b = random_cloud(rng, int(rng.integers(20, 500)))
            assert chamfer(a, b) == pytest.approx(
                chamfer_oracle(a.points, b.points), abs=1e-12
            )

    def test_duplicate_in_target_never_increases_forward_term(self):
        # growing the target set can only shrink source-to-target distances
        rng = np.random.default_rng(114)
        a, b = random_cloud(rng, 80), random_cloud(rng, 90)

        def forward(src, dst):
            return float(
                np.mean([np.linalg.norm(dst.points - p, axis=1).min() for p in src.points])
            )

        b_dup = PointCloud(np.vstack([b.points, b.points[:1]]))
        a_dup = PointCloud(np.vstack([a.points, a.points[:1]]))
        assert forward(a, b_dup) <= forward(a, b) + 1e-15
        assert forward(b, a_dup) <= forward(b, a) + 1e-15

    def test_empty_errors(self):
        cloud = random_cloud(np.random.default_rng(115), 5)
        with pytest.raises(ValueError, match="empty"):
            chamfer(cloud, PointCloud(np.empty((0, 3))))


class TestF1Score:
    def test_identical_is_perfect(self):
        cloud = make_sphere(300, seed=116)
        report = f1_score(cloud, cloud, threshold=0.01)
        assert (report.accuracy, report.completeness, report.f1) == (100.0, 100.0, 100.0)
        assert report.chamfer == 0.0

    def test_disjoint_is_zero(self):
        a = PointCloud([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        b = PointCloud([[0.0, 0.0, 5.0], [1.0, 0.0, 5.0]])
        report = f1_score(a, b, threshold=0.01)
        assert (report.accuracy, report.completeness, report.f1) == (0.0, 0.0, 0.0)

    def test_half_accuracy_harmonic_mean(self):
        # two predictions on gt, two far away; gt fully covered
        pred = PointCloud([[0, 0, 0], [1, 0, 0], [0, 0, 9], [1, 0, 9]])
        gt = PointCloud([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        report = f1_score(pred, gt, threshold=0.01)
        assert report.accuracy == 50.0
        assert report.completeness == 100.0
        assert report.f1 == pytest.approx(200.0 / 3.0, abs=1e-12)

    def test_matches_oracle(self):
        rng = np.random.default_rng(117)
        for _ in range(10):
            pred = random_cloud(rng, int(rng.integers(20, 300)))
            gt = random_cloud(rng, int(rng.integers(20, 300)))
            tau = float(rng.uniform(0.05, 0.6))
            report = f1_score(pred, gt, tau)
            acc, comp, f1 = f1_oracle(pred.points, gt.points, tau)
            assert report.accuracy == pytest.approx(acc, abs=1e-12)
            assert report.completeness == pytest.approx(comp, abs=1e-12)
            assert report.f1 == pytest.approx(f1, abs=1e-12)

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(118)
        pred = random_cloud(rng, 200)
        gt = random_cloud(rng, 200)
        last_acc, last_comp = -1.0, -1.0
        for tau in (0.05, 0.1, 0.2, 0.4, 0.8):
            report = f1_score(pred, gt, tau)
            assert report.accuracy >= last_acc
            assert report.completeness >= last_comp
            last_acc, last_comp = report.accuracy, report.completeness


class TestHoleRegionReport:
    def fixture(self):
        full = make_sphere(2000, seed=119)
        keep = full.points[:, 2] < 0.35
        incomplete = PointCloud(full.points[keep])
        missing = PointCloud(full.points[~keep])
        return full, incomplete, missing

    def test_prediction_equals_missing_is_perfect(self):
        full, incomplete, missing = self.fixture()
        report = hole_region_report(missing, full, missing, 0.01)
        assert report.f1 == 100.0
        assert report.region == "hole_only"

    def test_incomplete_only_scores_zero_completeness(self):
        full, incomplete, missing = self.fixture()
        report = hole_region_report(incomplete, full, missing, 0.01)
        assert report.completeness == 0.0
        assert report.flagged

    def test_mixed_fixture_matches_linear_scan_oracle(self):
        rng = np.random.default_rng(120)
        full, incomplete, missing = self.fixture()
        pred_pts = np.vstack(
            [incomplete.points[:100], missing.points + rng.normal(0, 0.002, missing.points.shape)]
        )
        pred = PointCloud(pred_pts)
        report = hole_region_report(pred, full, missing, 0.01)

        missing_set = {tuple(p) for p in missing.points}
        kept = []
        for p in pred.points:
            d = np.linalg.norm(full.points - p, axis=1)
            if tuple(full.points[int(np.argmin(d))]) in missing_set:
                kept.append(p)
        acc, comp, f1 = f1_oracle(np.array(kept), missing.points, 0.01)
        assert report.accuracy == pytest.approx(acc, abs=1e-12)
        assert report.completeness == pytest.approx(comp, abs=1e-12)
        assert report.f1 == pytest.approx(f1, abs=1e-12)

    def test_missing_not_subset_rejected(self):
        full, incomplete, missing = self.fixture()
        rogue = PointCloud(missing.points + 0.001)
        with pytest.raises(ValueError, match="subset"):
            hole_region_report(incomplete, full, rogue, 0.01)
