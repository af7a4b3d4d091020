import json

import numpy as np
import pytest

from oracles import coverage_supersampled
from wsiuq.errors import ConfigError, DataError, DomainError
from wsiuq.sim import geometry
from wsiuq.sim.geometry import (
    clip_to_rect,
    compute_coverage,
    coverage_grid,
    shoelace_area,
    star_polygon,
)
from wsiuq.sim.io import read_dataset, read_split_manifest, write_dataset, write_split_manifest
from wsiuq.sim.noise import NoiseSpec, apply_noise, inject_border_noise, inject_uniform_noise
from wsiuq.sim.sampling import balanced_batches
from wsiuq.sim.slides import (
    EXCLUDED,
    CenterProfile,
    DataConfig,
    SlideSpec,
    center_profiles,
    generate_dataset,
    generate_slide,
    label_tiles,
    make_slide_specs,
)
from wsiuq.sim.splits import SplitSpec, make_split, median_slides

SMALL = DataConfig(slides_per_center=4, grid=10, seed=3)


@pytest.fixture(scope="module")
def small_dataset():
    return generate_dataset(SMALL)


class TestGeometry:
    def test_shoelace_unit_square(self):
        assert shoelace_area([(0, 0), (1, 0), (1, 1), (0, 1)]) == 1.0
        assert shoelace_area([(0, 0), (0, 1), (1, 1), (1, 0)]) == 1.0

    def test_left_half(self):
        half = [(0, 0), (0.5, 0), (0.5, 1), (0, 1)]
        assert compute_coverage((0, 0), [half]) == 0.5

    def test_disjoint(self):
        far = [(5, 5), (6, 5), (6, 6)]
        assert compute_coverage((0, 0), [far]) == 0.0

    def test_diagonal_triangle(self):
        tri = [(0, 0), (1, 0), (1, 1)]
        assert compute_coverage((0, 0), [tri]) == pytest.approx(0.5, abs=1e-15)
        assert coverage_supersampled((0, 0), [tri]) == pytest.approx(0.5, abs=1e-3)

    def test_overlap_is_not_double_counted(self):
        a = [(0, 0), (1, 0), (1, 1), (0, 1)]
        b = [(0.5, 0), (1, 0), (1, 1), (0.5, 1)]
        assert compute_coverage((0, 0), [a, b]) == 1.0

    def test_degenerate_polygon_contributes_zero(self):
        line = [(0, 0), (1, 1), (0.5, 0.5)]
        assert compute_coverage((0, 0), [line]) == 0.0
        half = [(0, 0), (0.5, 0), (0.5, 1), (0, 1)]
        assert compute_coverage((0, 0), [line, half]) == 0.5

    def test_self_intersecting_polygon_rejected(self):
        bowtie = [(0, 0), (1, 1), (1, 0), (0, 1)]
        with pytest.raises(DomainError):
            compute_coverage((0, 0), [bowtie])

    def test_clip_inside_keeps_polygon(self):
        tri = [(0.1, 0.1), (0.9, 0.1), (0.5, 0.8)]
        np.testing.assert_allclose(shoelace_area(clip_to_rect(tri, 0, 0, 1, 1)),
                                   shoelace_area(tri))

    def test_supersampling_oracle_random_pairs(self):
        rng = np.random.default_rng(42)
        worst = 0.0
        for _ in range(100):
            center = rng.uniform(0, 3, 2)
            polys = [star_polygon(center, rng.uniform(0.5, 2.0), int(rng.integers(3, 12)), rng)]
            if rng.random() < 0.5:
                polys.append(star_polygon(center + rng.uniform(-1, 1, 2), rng.uniform(0.3, 1.5),
                                          int(rng.integers(3, 12)), rng))
            cell = tuple(int(v) for v in np.floor(center + rng.uniform(-1.5, 1.5, 2)))
            exact = compute_coverage(cell, polys)
            worst = max(worst, abs(exact - coverage_supersampled(cell, polys)))
        assert worst < 1e-3

    def test_union_coverage_at_most_one(self):
        rng = np.random.default_rng(0)
        polys = [star_polygon((5, 5), 3, 10, rng) for _ in range(4)]
        grid = coverage_grid(10, 10, polys)
        assert grid.max() <= 1.0 and grid.min() >= 0.0

    def test_grid_matches_cellwise(self):
        rng = np.random.default_rng(1)
        polys = [star_polygon((4, 3), 2.5, 9, rng), star_polygon((5, 5), 2, 7, rng)]
        grid = coverage_grid(8, 8, polys)
        for y in range(8):
            for x in range(8):
                assert grid[y, x] == pytest.approx(compute_coverage((x, y), polys), abs=1e-12)

    def test_grid_sum_is_union_area(self):
        rng = np.random.default_rng(2)
        polys = [star_polygon((5, 5), 3, 12, rng), star_polygon((6, 4), 2, 8, rng)]
        assert coverage_grid(12, 12, polys).sum() == pytest.approx(geometry.union_area(polys),
                                                                    rel=1e-12)


class TestLabels:
    def test_threshold_examples(self):
        np.testing.assert_array_equal(label_tiles([0.30, 0.10, 0.0], 0.25), [1, EXCLUDED, 0])
        np.testing.assert_array_equal(label_tiles([0.10, 0.0], 0.0), [1, 0])

    def test_threshold_is_strict(self):
        assert label_tiles([0.25], 0.25)[0] == EXCLUDED

    @pytest.mark.parametrize("tau", [-0.1, 1.0, 1.5])
    def test_bad_threshold(self, tau):
        with pytest.raises(DomainError):
            label_tiles([0.5], tau)


class TestSlides:
    def test_no_polygons(self):
        spec = SlideSpec("s", 0, 5, 4, [], 0, 1)
        tiles = generate_slide(spec, CenterProfile.identity(8))
        assert len(tiles) == 20
        assert (tiles["coverage"] == 0).all()
        assert (label_tiles(tiles["coverage"]) == 0).all()

    def test_full_cover(self):
        spec = SlideSpec("s", 0, 5, 4, [[(0, 0), (5, 0), (5, 4), (0, 4)]], 0, 1)
        tiles = generate_slide(spec, CenterProfile.identity(8))
        assert (tiles["coverage"] == 1).all()
        assert (label_tiles(tiles["coverage"]) == 1).all()
        assert (tiles["border"] == 0).all()

    def test_profile_is_exact_affine_map(self):
        cfg = DataConfig()
        spec = make_slide_specs(cfg)[0]
        ident = generate_slide(spec, CenterProfile.identity(cfg.n_features), cfg)
        gain = np.linspace(0.5, 2.0, cfg.n_features)
        offset = np.linspace(-1, 1, cfg.n_features)
        prof = CenterProfile(0, 0, gain, offset, 0.0)
        shifted = generate_slide(spec, prof, cfg)
        cols = [f"f{k}" for k in range(cfg.n_features)]
        np.testing.assert_array_equal(shifted[cols].to_numpy(),
                                      gain * ident[cols].to_numpy() + offset)

    def test_nonpositive_gain_rejected(self):
        with pytest.raises(DomainError):
            CenterProfile(0, 0, np.array([1.0, 0.0]), np.zeros(2), 0.1)

    def test_polygon_outside_grid_rejected(self):
        with pytest.raises(DomainError):
            SlideSpec("s", 0, 4, 4, [[(0, 0), (5, 0), (5, 5)]])

    def test_bad_center_rejected(self):
        with pytest.raises(DomainError):
            SlideSpec("s", 5, 4, 4)

    def test_scanner_assignment(self):
        prof = center_profiles(DataConfig())
        scanners = {c: p.scanner_id for c, p in prof.items()}
        id_scanners = {scanners[c] for c in (0, 1, 3)}
        assert scanners[2] not in id_scanners and scanners[4] not in id_scanners
        assert {scanners[c] for c in (1, 3)} <= {scanners[c] for c in (0, 2, 4)}
        assert len(set(scanners.values())) == 3

    def test_dataset_columns_and_finiteness(self, small_dataset):
        tiles = small_dataset.tiles
        assert list(tiles.columns[:7]) == ["slide_id", "center_id", "x", "y", "coverage",
                                           "border", "label"]
        assert len(tiles) == 5 * 4 * 100
        assert np.all(np.isfinite(small_dataset.features()))
        np.testing.assert_array_equal(tiles["label"], label_tiles(tiles["coverage"], 0.25))

    def test_deterministic(self, small_dataset):
        again = generate_dataset(SMALL)
        assert again.tiles.equals(small_dataset.tiles)

    def test_seed_changes_data(self, small_dataset):
        other = generate_dataset(DataConfig(slides_per_center=4, grid=10, seed=4))
        assert not np.array_equal(other.features(), small_dataset.features())

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            DataConfig(slides_per_center=2)
        with pytest.raises(ConfigError):
            DataConfig.from_dict({"colour": 1})


class TestSplits:
    @pytest.mark.parametrize("kind,center,ood", [("weak", None, (1, 3)), ("strong", None, (2, 4)),
                                                 ("loo", 3, (3,))])
    def test_center_sets(self, kind, center, ood):
        spec = SplitSpec(kind, center)
        assert spec.ood_centers == ood
        assert set(spec.id_centers) | set(ood) == set(range(5))
        assert not set(spec.id_centers) & set(ood)

    def test_loo_needs_center(self):
        with pytest.raises(ConfigError):
            SplitSpec("loo")

    @pytest.mark.parametrize("kind", ["weak", "strong"])
    def test_partition_invariant(self, small_dataset, kind):
        split = make_split(small_dataset, SplitSpec(kind))
        parts = [split[k] for k in ("train", "val", "test_id", "test_ood", "excluded")]
        allidx = np.concatenate(parts)
        assert len(allidx) == len(small_dataset.tiles)
        np.testing.assert_array_equal(np.sort(allidx), np.arange(len(small_dataset.tiles)))

    def test_test_slides_and_fraction(self, small_dataset):
        spec = SplitSpec("strong")
        split = make_split(small_dataset, spec)
        assert len(split["test_slides"]) == 6
        centers = small_dataset.tiles["center_id"].to_numpy()
        assert set(centers[split["test_ood"]]) == {2, 4}
        assert set(centers[split["test_id"]]) <= {0, 1, 3}
        n_tr, n_va = len(split["train"]), len(split["val"])
        assert n_tr == round(0.75 * (n_tr + n_va))
        assert (small_dataset.labels(split["excluded"]) == EXCLUDED).all()

    def test_median_rule(self):
        class S:
            def __init__(self, sid, area):
                self.slide_id, self.tumor_area = sid, area
        slides = [S(f"s{i}", a) for i, a in enumerate([5.0, 1.0, 3.0, 4.0, 2.0, 6.0])]
        assert [s.tumor_area for s in median_slides(slides)] == [3.0, 4.0]
        assert [s.tumor_area for s in median_slides(slides[:5])] == [3.0, 4.0]
        assert [s.tumor_area for s in median_slides(slides[:3])] == [3.0, 5.0]

    def test_too_few_slides(self, small_dataset):
        ds = small_dataset
        trimmed = type(ds)(ds.tiles, [s for s in ds.slides if s.slide_id not in ("c0_s00", "c0_s01")],
                           ds.config)
        with pytest.raises(DataError):
            make_split(trimmed, SplitSpec("strong"))

    def test_deterministic(self, small_dataset):
        a = make_split(small_dataset, SplitSpec("weak", seed=5))
        b = make_split(small_dataset, SplitSpec("weak", seed=5))
        c = make_split(small_dataset, SplitSpec("weak", seed=6))
        np.testing.assert_array_equal(a["train"], b["train"])
        assert not np.array_equal(a["train"], c["train"])


class TestNoise:
    def test_uniform_extremes(self):
        y = np.array([0, 1, 1, 0])
        rng = np.random.default_rng(0)
        np.testing.assert_array_equal(inject_uniform_noise(y, 0.0, rng), y)
        np.testing.assert_array_equal(inject_uniform_noise(y, 1.0, rng), 1 - y)

    def test_uniform_rate(self):
        y = np.random.default_rng(1).integers(0, 2, 10_000)
        noisy = inject_uniform_noise(y, 0.25, np.random.default_rng(2))
        assert abs(np.mean(noisy != y) - 0.25) <= 0.015

    def test_border_no_border_tiles(self):
        y = np.array([1, 1, 0, 0])
        cov = np.array([1.0, 1.0, 0.0, 0.0])
        np.testing.assert_array_equal(inject_border_noise(y, cov, 1.0, np.random.default_rng(0)), y)

    def test_border_rate_and_eligibility(self):
        rng = np.random.default_rng(3)
        n = 20_000
        cov = rng.choice([0.0, 0.5, 1.0], n)
        y = (cov > 0).astype(int)
        noisy = inject_border_noise(y, cov, 0.25, rng)
        eligible = (y == 1) & (cov < 1)
        np.testing.assert_array_equal(noisy[~eligible], y[~eligible])
        rate = np.mean(noisy[eligible] != y[eligible])
        bound = 3 * np.sqrt(0.25 * 0.75 / eligible.sum())
        assert abs(rate - 0.25) <= bound
        assert (noisy[eligible] <= y[eligible]).all()

    def test_non_binary_rejected(self):
        with pytest.raises(DomainError):
            inject_uniform_noise(np.array([0, -1]), 0.1, np.random.default_rng(0))

    def test_spec(self):
        assert NoiseSpec("threshold0").tau == 0.0
        assert NoiseSpec("border").tau == 0.0
        assert NoiseSpec().tau == 0.25
        with pytest.raises(ConfigError):
            NoiseSpec("gaussian")
        with pytest.raises(ConfigError):
            NoiseSpec("uniform", 1.5)

    def test_apply_deterministic(self):
        y = np.random.default_rng(0).integers(0, 2, 500)
        cov = y * 0.5
        spec = NoiseSpec("border", 0.5, 9)
        np.testing.assert_array_equal(apply_noise(spec, y, cov), apply_noise(spec, y, cov))
        np.testing.assert_array_equal(apply_noise(NoiseSpec("threshold0"), y, cov), y)


class TestBalancedBatches:
    @pytest.mark.parametrize("pos_fraction", [0.5, 0.1])
    def test_ratio(self, pos_fraction):
        n = 1000
        y = (np.arange(n) < pos_fraction * n).astype(int)
        batches = list(balanced_batches(y, 128, np.random.default_rng(0), num_batches=1000))
        ratio = np.mean([y[b].mean() for b in batches])
        assert abs(ratio - 0.5) <= 0.02

    def test_single_class_rejected(self):
        with pytest.raises(DomainError):
            next(balanced_batches(np.zeros(10), 4, np.random.default_rng(0)))


class TestIO:
    def test_dataset_round_trip(self, small_dataset, tmp_path):
        write_dataset(small_dataset, tmp_path)
        back = read_dataset(tmp_path)
        cols = list(small_dataset.tiles.columns)
        assert list(back.tiles.columns) == cols
        np.testing.assert_array_equal(back.features(), small_dataset.features())
        np.testing.assert_array_equal(back.tiles["coverage"], small_dataset.tiles["coverage"])
        assert [s.slide_id for s in back.slides] == [s.slide_id for s in small_dataset.slides]
        assert back.config == small_dataset.config

    def test_split_manifest_round_trip(self, small_dataset, tmp_path):
        spec = SplitSpec("weak")
        split = make_split(small_dataset, spec)
        write_split_manifest(split, spec, tmp_path / "split.json")
        back, doc = read_split_manifest(tmp_path / "split.json")
        assert doc["id_centers"] == [0, 2, 4]
        for k in ("train", "val", "test_id", "test_ood", "excluded"):
            np.testing.assert_array_equal(back[k], split[k])

    def test_missing_dataset(self, tmp_path):
        with pytest.raises(DataError):
            read_dataset(tmp_path)

    def test_bad_manifest(self, tmp_path):
        (tmp_path / "s.json").write_text("{")
        with pytest.raises(DataError):
            read_split_manifest(tmp_path / "s.json")

    def test_slides_json_sorted(self, small_dataset, tmp_path):
        write_dataset(small_dataset, tmp_path)
        meta = json.loads((tmp_path / "slides.json").read_text())
        assert meta["tau"] == 0.25
