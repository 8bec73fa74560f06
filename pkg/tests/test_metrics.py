import numpy as np
import pytest
from scipy.spatial.distance import cdist

from src.analysis.metrics import (FLAG_EMPTY_PREDICTION, FLAG_EMPTY_REFERENCE, distance_field,
                                  evaluate_case, extract_surface, hd95, mdta, nearest_rank_percentile,
                                  volume_difference)
from src.utils.errors import EmptyStructureError, InvalidArgumentError
from src.volumes.grid import GridGeometry, LabelVolume
from tests.conftest import box_mask


def voxels(geometry, points, num_labels=2):
    """Label 1 at each (x, y, z) point."""
    data = np.zeros(geometry.shape, dtype=np.uint8)
    for x, y, z in points:
        data[z, y, x] = 1
    return LabelVolume(geometry, num_labels, data)


class TestSurfaces:

    def test_cube_surface_excludes_interior(self):
        geometry = GridGeometry(dims=(5, 5, 5), spacing=(1, 1, 1))
        cube = box_mask(geometry, [(1, ((1, 3), (1, 3), (1, 3)))])
        surface = extract_surface(cube, 1)
        assert len(surface) == 26
        assert not surface.mask[2, 2, 2]

    def test_grid_edge_counts_as_outside(self):
        geometry = GridGeometry(dims=(4, 4, 4), spacing=(1, 1, 1))
        full = box_mask(geometry, [(1, ((0, 3), (0, 3), (0, 3)))])
        assert len(extract_surface(full, 1)) == 64 - 8

    def test_coordinates_are_xyz(self):
        geometry = GridGeometry(dims=(6, 5, 4), spacing=(1, 1, 1))
        surface = extract_surface(voxels(geometry, [(5, 1, 3)]), 1)
        np.testing.assert_array_equal(surface.coords, [[5, 1, 3]])

    def test_distance_field_needs_targets(self):
        geometry = GridGeometry(dims=(3, 3, 3), spacing=(1, 1, 1))
        empty = extract_surface(box_mask(geometry, []), 1)
        with pytest.raises(EmptyStructureError):
            distance_field(empty)

    def test_distance_field_honours_spacing(self):
        geometry = GridGeometry(dims=(4, 3, 2), spacing=(2.0, 0.5, 3.0))
        field = distance_field(extract_surface(voxels(geometry, [(0, 0, 0)]), 1))
        assert field[1, 2, 3] == pytest.approx(np.sqrt(6.0 ** 2 + 1.0 ** 2 + 3.0 ** 2))


class TestDistances:

    @pytest.fixture
    def geometry(self):
        return GridGeometry(dims=(10, 5, 5), spacing=(1.0, 1.0, 1.0))

    def test_identical_structures_are_at_zero(self, geometry):
        mask = box_mask(geometry, [(1, ((2, 6), (1, 3), (1, 3)))])
        surface = extract_surface(mask, 1)
        assert mdta(surface, surface) == 0.0
        assert hd95(surface, surface) == 0.0

    def test_anisotropic_single_voxels(self):
        geometry = GridGeometry(dims=(8, 5, 5), spacing=(2.0, 1.0, 1.0))
        ref = extract_surface(voxels(geometry, [(2, 2, 2)]), 1)
        pred = extract_surface(voxels(geometry, [(5, 2, 2)]), 1)
        assert mdta(pred, ref) == pytest.approx(6.0)
        assert hd95(pred, ref) == pytest.approx(6.0)

    def test_directed_means_are_averaged(self, geometry):
        ref = extract_surface(voxels(geometry, [(2, 2, 2)]), 1)
        pred = extract_surface(voxels(geometry, [(3, 2, 2), (5, 2, 2)]), 1)
        # pred -> ref: [1, 3]; ref -> pred: [1]
        assert mdta(pred, ref) == pytest.approx(1.5)
        assert hd95(pred, ref) == pytest.approx(3.0)

    def test_metrics_are_symmetric(self, rng):
        geometry = GridGeometry(dims=(16, 14, 12), spacing=(0.7, 1.1, 2.0))
        a = LabelVolume(geometry, 2, (rng.random(geometry.shape) < 0.3).astype(np.uint8))
        b = LabelVolume(geometry, 2, (rng.random(geometry.shape) < 0.3).astype(np.uint8))
        sa, sb = extract_surface(a, 1), extract_surface(b, 1)
        assert mdta(sa, sb) == pytest.approx(mdta(sb, sa))
        assert hd95(sa, sb) == pytest.approx(hd95(sb, sa))

    def test_empty_surfaces_are_undefined(self, geometry):
        empty = extract_surface(box_mask(geometry, []), 1)
        full = extract_surface(box_mask(geometry, [(1, ((1, 2), (1, 2), (1, 2)))]), 1)
        assert mdta(empty, full) is None
        assert hd95(full, empty) is None


@pytest.mark.parametrize('n, expected', [(100, 95), (20, 19), (1, 1), (2, 2), (40, 38)])
def test_nearest_rank_percentile(n, expected):
    values = np.arange(1, n + 1, dtype=float)[::-1]
    assert nearest_rank_percentile(values) == expected


def test_volume_difference_is_signed():
    geometry = GridGeometry(dims=(6, 6, 6), spacing=(1.0, 1.0, 2.0))
    pred = box_mask(geometry, [(1, ((0, 4), (0, 1), (0, 0)))])
    ref = box_mask(geometry, [(1, ((0, 3), (0, 1), (0, 0)))])
    assert volume_difference(pred, ref, 1) == pytest.approx(0.004)
    assert volume_difference(ref, pred, 1) == pytest.approx(-0.004)


class TestEvaluateCase:

    @pytest.fixture
    def geometry(self):
        return GridGeometry(dims=(20, 12, 10), spacing=(1.0, 1.0, 1.0))

    def test_perfect_prediction(self, geometry):
        ref = box_mask(geometry, [(1, ((1, 5), (1, 5), (1, 5))), (2, ((10, 15), (3, 8), (2, 7)))])
        report = evaluate_case(ref, ref, case_id='c1', method='staple', label_names={1: 'liver'})
        assert [e.organ for e in report.entries] == ['liver', 'label_2']
        for entry in report.entries:
            assert entry.mdta_mm == 0.0 and entry.hd95_mm == 0.0 and entry.volume_diff_cm3 == 0.0
            assert entry.flags == ()

    def test_missing_organ_is_flagged_not_zero(self, geometry):
        ref = box_mask(geometry, [(1, ((1, 5), (1, 5), (1, 5))), (2, ((10, 15), (3, 8), (2, 7)))])
        pred = box_mask(geometry, [(1, ((1, 5), (1, 5), (1, 5)))], num_labels=3)
        report = evaluate_case(pred, ref, case_id='c2', method='mv')
        missing = report.entries[1]
        assert missing.mdta_mm is None and missing.hd95_mm is None
        assert missing.flags == (FLAG_EMPTY_PREDICTION,)
        assert missing.volume_diff_cm3 == pytest.approx(-6 * 6 * 6 / 1000.0)

        rows = report.to_rows()
        assert rows[1]['flags'] == FLAG_EMPTY_PREDICTION
        assert rows[1]['case_id'] == 'c2' and rows[1]['method'] == 'mv'

    def test_both_empty_sets_both_flags(self, geometry):
        ref = box_mask(geometry, [(1, ((1, 5), (1, 5), (1, 5)))], num_labels=3)
        report = evaluate_case(ref, ref, labels=[2])
        assert report.entries[0].flags == (FLAG_EMPTY_PREDICTION, FLAG_EMPTY_REFERENCE)
        assert report.entries[0].volume_diff_cm3 == 0.0

    def test_label_out_of_range(self, geometry):
        ref = box_mask(geometry, [(1, ((1, 5), (1, 5), (1, 5)))])
        with pytest.raises(InvalidArgumentError):
            evaluate_case(ref, ref, labels=[2])


def all_pairs(from_coords, to_coords, spacing):
    """Nearest distance (mm) from each `from` voxel to the `to` set, by brute force."""
    return cdist(from_coords * spacing, to_coords * spacing).min(axis=1)


def nearest_rank_95(values):
    ordered = np.sort(values)
    return ordered[-(-95 * len(ordered) // 100) - 1]


@pytest.mark.parametrize('seed', range(30))
def test_metrics_match_all_pairs_oracle(seed):
    rng = np.random.default_rng(seed)
    geometry = GridGeometry(dims=tuple(rng.integers(3, 11, size=3)),
                            spacing=tuple(rng.uniform(0.5, 2.5, size=3)))
    density = rng.uniform(0.1, 0.6)
    pred = LabelVolume(geometry, 2, (rng.random(geometry.shape) < density).astype(np.uint8))
    ref = LabelVolume(geometry, 2, (rng.random(geometry.shape) < density).astype(np.uint8))
    pred_surface, ref_surface = extract_surface(pred, 1), extract_surface(ref, 1)
    if pred_surface.empty or ref_surface.empty:
        pytest.skip("random draw left a structure empty")
    spacing = np.asarray(geometry.spacing)

    nx, ny, nz = geometry.dims
    grid = np.argwhere(np.ones(geometry.shape, dtype=bool))[:, ::-1]
    expected_field = all_pairs(grid, ref_surface.coords, spacing).reshape(nz, ny, nx)
    np.testing.assert_allclose(distance_field(ref_surface), expected_field, rtol=1e-9, atol=1e-12)

    forward = all_pairs(pred_surface.coords, ref_surface.coords, spacing)
    backward = all_pairs(ref_surface.coords, pred_surface.coords, spacing)
    assert mdta(pred_surface, ref_surface) == pytest.approx((forward.mean() + backward.mean()) / 2, rel=1e-9)
    assert hd95(pred_surface, ref_surface) == pytest.approx(
        max(nearest_rank_95(forward), nearest_rank_95(backward)), rel=1e-9)


NEIGHBOURS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))


@pytest.mark.parametrize('seed', range(10))
def test_surface_matches_six_neighbour_check(seed):
    rng = np.random.default_rng(seed)
    geometry = GridGeometry(dims=(8, 8, 8), spacing=(1.0, 1.0, 1.0))
    mask = LabelVolume(geometry, 2, (rng.random(geometry.shape) < rng.uniform(0.3, 0.9)).astype(np.uint8))
    inside = mask.data == 1

    expected = np.zeros_like(inside)
    for z, y, x in zip(*np.nonzero(inside)):
        for dz, dy, dx in NEIGHBOURS:
            nz, ny, nx = z + dz, y + dy, x + dx
            if not (0 <= nz < 8 and 0 <= ny < 8 and 0 <= nx < 8) or not inside[nz, ny, nx]:
                expected[z, y, x] = True
                break
    np.testing.assert_array_equal(extract_surface(mask, 1).mask, expected)


def shifted_pair(offset):
    geometry = GridGeometry(dims=(20, 18, 16), spacing=(0.9, 1.2, 1.7))
    x, y, z = offset
    pred = box_mask(geometry, [(1, ((2 + x, 6 + x), (1 + y, 5 + y), (2 + z, 4 + z)))])
    ref = box_mask(geometry, [(1, ((3 + x, 8 + x), (2 + y, 4 + y), (1 + z, 5 + z)))])
    return extract_surface(pred, 1), extract_surface(ref, 1)


@pytest.mark.parametrize('offset', [(1, 0, 0), (0, 3, 2), (9, 10, 7)])
def test_metrics_are_translation_invariant(offset):
    pred, ref = shifted_pair((0, 0, 0))
    moved_pred, moved_ref = shifted_pair(offset)
    assert mdta(moved_pred, moved_ref) == pytest.approx(mdta(pred, ref), rel=1e-12)
    assert hd95(moved_pred, moved_ref) == pytest.approx(hd95(pred, ref), rel=1e-12)


@pytest.mark.parametrize('k', [2.0, 0.37, 3.1])
def test_metrics_scale_with_spacing(k, rng):
    spacing = (0.8, 1.1, 2.5)
    data_a = (rng.random((7, 9, 11)) < 0.4).astype(np.uint8)
    data_b = (rng.random((7, 9, 11)) < 0.4).astype(np.uint8)

    def surfaces(scale):
        geometry = GridGeometry(dims=(11, 9, 7), spacing=tuple(s * scale for s in spacing))
        return extract_surface(LabelVolume(geometry, 2, data_a), 1), extract_surface(LabelVolume(geometry, 2, data_b), 1)

    a, b = surfaces(1.0)
    scaled_a, scaled_b = surfaces(k)
    assert mdta(scaled_a, scaled_b) == pytest.approx(k * mdta(a, b), rel=1e-12)
    assert hd95(scaled_a, scaled_b) == pytest.approx(k * hd95(a, b), rel=1e-12)
