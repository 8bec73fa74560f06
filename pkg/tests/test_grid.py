import numpy as np
import pytest

from src.utils.errors import GeometryMismatchError, InvalidArgumentError, ValidationError
from src.volumes.grid import (GridGeometry, LabelVolume, ScoreVolume, bounding_box, box_slices,
                              dilate_box, require_same_geometry, structure_volume_cm3, union_box)
from tests.conftest import box_mask


class TestGridGeometry:

    def test_shape_and_sampling_are_in_array_order(self):
        geometry = GridGeometry(dims=(4, 5, 6), spacing=(0.5, 1.0, 2.5))
        assert geometry.shape == (6, 5, 4)
        assert geometry.sampling == (2.5, 1.0, 0.5)
        assert geometry.voxel_count == 120
        assert geometry.voxel_volume_mm3 == pytest.approx(1.25)

    @pytest.mark.parametrize('dims, spacing', [
        ((0, 4, 4), (1, 1, 1)),
        ((4, 4), (1, 1, 1)),
        ((4, 4, 4), (1, 0, 1)),
        ((4, 4, 4), (1, float('nan'), 1)),
    ])
    def test_invalid_geometry_is_rejected(self, dims, spacing):
        with pytest.raises(ValidationError):
            GridGeometry(dims=dims, spacing=spacing)

    def test_voxel_count_beyond_addressable_size_is_rejected(self):
        with pytest.raises(ValidationError):
            GridGeometry(dims=(2 ** 32, 2 ** 32, 2 ** 32), spacing=(1, 1, 1))
        assert GridGeometry(dims=(2 ** 20, 2 ** 20, 4), spacing=(1, 1, 1)).voxel_count == 2 ** 42


class TestVolumes:

    def test_label_values_must_fit_num_labels(self, small_geometry):
        data = np.zeros(small_geometry.shape, dtype=np.uint8)
        data[0, 0, 0] = 3
        with pytest.raises(ValidationError):
            LabelVolume(small_geometry, 3, data)

    def test_num_labels_range(self, small_geometry):
        data = np.zeros(small_geometry.shape, dtype=np.uint8)
        with pytest.raises(ValidationError):
            LabelVolume(small_geometry, 1, data)
        with pytest.raises(ValidationError):
            LabelVolume(small_geometry, 257, data)

    def test_score_volume_needs_two_finite_channels(self, small_geometry):
        with pytest.raises(ValidationError):
            ScoreVolume(small_geometry, np.zeros((1,) + small_geometry.shape))
        data = np.zeros((2,) + small_geometry.shape)
        data[1, 2, 2, 2] = np.inf
        with pytest.raises(ValidationError):
            ScoreVolume(small_geometry, data)

    def test_volume_data_is_read_only(self, small_geometry):
        mask = box_mask(small_geometry, [(1, ((1, 2), (1, 2), (1, 2)))])
        with pytest.raises(ValueError):
            mask.data[0, 0, 0] = 1

    def test_mask_rejects_unknown_label(self, small_geometry):
        mask = box_mask(small_geometry, [(1, ((1, 2), (1, 2), (1, 2)))])
        with pytest.raises(InvalidArgumentError):
            mask.mask(2)


class TestBoxes:

    def test_bounding_box_is_in_xyz_order(self, small_geometry):
        mask = box_mask(small_geometry, [(1, ((2, 4), (1, 3), (0, 1)))])
        assert bounding_box(mask, 1) == ((2, 4), (1, 3), (0, 1))

    def test_absent_label_has_no_box(self, small_geometry):
        mask = box_mask(small_geometry, [(1, ((2, 4), (1, 3), (0, 1)))], num_labels=3)
        assert bounding_box(mask, 2) is None

    def test_dilate_box_clamps_to_grid(self):
        geometry = GridGeometry(dims=(10, 6, 8), spacing=(1, 1, 1))
        assert dilate_box(((0, 2), (3, 3), (5, 7)), 2, geometry) == ((0, 4), (1, 5), (3, 7))

    def test_negative_margin_is_rejected(self, small_geometry):
        with pytest.raises(InvalidArgumentError):
            dilate_box(((0, 1), (0, 1), (0, 1)), -1, small_geometry)

    def test_union_and_slices(self, small_geometry):
        box = union_box(((1, 2), (3, 4), (0, 0)), ((0, 1), (4, 6), (2, 3)))
        assert box == ((0, 2), (3, 6), (0, 3))
        assert union_box(None, box) == box
        zs, ys, xs = box_slices(box)
        assert (zs, ys, xs) == (slice(0, 4), slice(3, 7), slice(0, 3))


def test_structure_volume_uses_physical_spacing():
    geometry = GridGeometry(dims=(6, 6, 6), spacing=(1.0, 2.0, 0.5))
    mask = box_mask(geometry, [(1, ((0, 1), (0, 0), (0, 4)))])
    # 10 voxels of 1 mm^3 each
    assert structure_volume_cm3(mask, 1) == pytest.approx(0.01)


def test_require_same_geometry_names_offenders(small_geometry):
    other = GridGeometry(dims=(12, 10, 8), spacing=(1.0, 1.0, 2.0))
    first = box_mask(small_geometry, [(1, ((1, 2), (1, 2), (1, 2)))])
    second = box_mask(other, [(1, ((1, 2), (1, 2), (1, 2)))])
    assert require_same_geometry([first, first]) == small_geometry
    with pytest.raises(GeometryMismatchError) as info:
        require_same_geometry([first, second], names=['a.mha', 'b.mha'])
    assert info.value.paths == ['b.mha']


def test_structure_volumes_add_up_to_the_grid():
    geometry = GridGeometry(dims=(9, 7, 5), spacing=(0.7, 1.3, 2.1))
    data = np.random.default_rng(3).integers(0, 5, size=geometry.shape)
    mask = LabelVolume(geometry, 5, data)
    total = sum(structure_volume_cm3(mask, label) for label in range(mask.num_labels))
    assert total == pytest.approx(geometry.voxel_count * geometry.voxel_volume_mm3 / 1000.0, rel=1e-12)


@pytest.mark.parametrize('seed', range(20))
def test_bounding_box_matches_full_scan(seed):
    rng = np.random.default_rng(seed)
    geometry = GridGeometry(dims=(8, 8, 8), spacing=(1.0, 1.0, 1.0))
    mask = LabelVolume(geometry, 3, (rng.random(geometry.shape) < rng.uniform(0.001, 0.05)).astype(np.uint8))

    xs, ys, zs = [], [], []
    for z in range(8):
        for y in range(8):
            for x in range(8):
                if mask.data[z, y, x] == 1:
                    xs.append(x)
                    ys.append(y)
                    zs.append(z)
    box = bounding_box(mask, 1)
    if not xs:
        assert box is None
        return
    assert box == ((min(xs), max(xs)), (min(ys), max(ys)), (min(zs), max(zs)))
    assert dilate_box(box, 0, geometry) == box
    assert bounding_box(mask, 2) is None
