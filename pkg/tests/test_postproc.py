import numpy as np
import pytest

from oracles import nearest_center, sliding_nms
from panofuse.errors import DimensionError
from panofuse.postproc import (
    BevMaps,
    PanopticLabeling,
    apply_fog,
    assign_panoptic,
    bev_instances,
    majority_vote,
    nms_centers,
    postprocess,
    shift_and_cluster,
)


class TestNms:
    def test_single_peak(self):
        heat = np.zeros((7, 7))
        heat[3, 4] = 0.9
        heat[3, 3] = 0.5
        assert nms_centers(heat) == [((3, 4), 0.9)]

    def test_threshold_inclusive(self):
        heat = np.zeros((5, 5))
        heat[2, 2] = 0.1
        assert nms_centers(heat) == [((2, 2), 0.1)]
        heat[2, 2] = 0.0999
        assert nms_centers(heat) == []

    def test_plateau_keeps_first_cell(self):
        heat = np.zeros((6, 6))
        heat[2, 2] = heat[2, 3] = heat[3, 2] = 0.8
        assert nms_centers(heat) == [((2, 2), 0.8)]

    def test_peaks_outside_window_both_survive(self):
        heat = np.zeros((10, 10))
        heat[1, 1] = 0.5
        heat[1, 4] = 0.7
        assert nms_centers(heat) == [((1, 4), 0.7), ((1, 1), 0.5)]

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            nms_centers(np.zeros((3, 3)), kernel=4)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_sliding_window(self, seed):
        rng = np.random.default_rng(seed)
        # coarse values so ties happen
        heat = np.round(rng.uniform(0, 1, (16, 16)), 1)
        assert nms_centers(heat, 5, 0.1) == sliding_nms(heat.tolist(), 5, 0.1)


class TestClustering:
    def test_fog_mask(self):
        sem = np.array([[[1, 5, 2]]])
        fog = np.array([[[0.5, 0.9, 0.49]]])
        assert apply_fog(sem, fog, [1, 2]).tolist() == [[[True, False, False]]]
        with pytest.raises(DimensionError):
            apply_fog(sem, fog[..., :2], [1])

    def test_no_centres(self):
        assert shift_and_cluster([[0, 0]], np.zeros((1, 1, 2)), []).tolist() == [0]

    def test_tie_goes_to_higher_score(self):
        centers = [((0, 0), 0.5), ((0, 2), 0.9)]
        assert shift_and_cluster([[0, 1]], np.zeros((1, 3, 2)), centers).tolist() == [1]

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_all_pairs_oracle(self, seed):
        rng = np.random.default_rng(seed)
        offsets = rng.integers(-3, 4, (12, 12, 2)).astype(float)
        cells = np.argwhere(rng.uniform(size=(12, 12)) < 0.4)
        centers = sorted(
            [((int(rng.integers(12)), int(rng.integers(12))), float(rng.choice([0.3, 0.6]))) for _ in range(4)],
            key=lambda c: (-c[1], c[0]),
        )
        got = shift_and_cluster(cells, offsets, centers)
        expect = [nearest_center(c, offsets[c[0], c[1]], centers) for c in cells.tolist()]
        assert got.tolist() == expect

    def test_bev_instances_uses_any_height(self):
        fg = np.zeros((3, 3, 2), bool)
        fg[1, 1, 1] = True
        out = bev_instances(fg, np.zeros((3, 3, 2)), [((1, 1), 1.0)])
        assert out[1, 1] == 1 and out.sum() == 1


class TestAssign:
    def test_majority_vote_ties_to_smaller_class(self):
        sem = np.array([3, 1, 3, 1, 5])
        inst = np.array([1, 1, 1, 1, 0])
        assert majority_vote(sem, inst).tolist() == [1, 1, 1, 1, 5]

    def test_renumbering_and_invalid_points(self):
        vox = np.array([[0, 2, 0], [0, 0, 0], [-1, -1, -1], [0, 1, 0]])
        sem = np.array([1, 1, 1, 5])
        cell_inst = np.array([[4, 0, 7]])
        fg = np.ones((1, 3, 1), bool)
        out = assign_panoptic(vox, sem, cell_inst, fg, [1])
        assert out.instance.tolist() == [2, 1, 0, 0]

    def test_postprocess_two_objects(self):
        h, w, z = 10, 10, 2
        heat = np.zeros((h, w))
        heat[2, 2] = 1.0
        heat[7, 7] = 0.8
        offsets = np.zeros((h, w, 2))
        sem = np.full((h, w, z), 5)
        sem[1:4, 1:4, 1] = 1
        sem[6:9, 6:9, 1] = 2
        offsets[1:4, 1:4] = 2 - np.stack(np.mgrid[1:4, 1:4], axis=-1)
        offsets[6:9, 6:9] = 7 - np.stack(np.mgrid[6:9, 6:9], axis=-1)
        fog = (sem < 5).astype(float)
        bev = BevMaps(heat, offsets, sem, fog)
        vox = np.array([[1, 1, 1], [3, 3, 1], [6, 8, 1], [0, 0, 0], [5, 5, 1]])
        out = postprocess(bev, vox, [1, 2])
        assert out.semantic.tolist() == [1, 1, 2, 5, 5]
        assert out.instance.tolist() == [1, 1, 2, 0, 0]

    def test_bev_maps_shapes(self):
        with pytest.raises(DimensionError):
            BevMaps(np.zeros((2, 2)), np.zeros((2, 2, 2)), np.zeros((2, 3, 1)), np.zeros((2, 3, 1)))
        probs = np.zeros((3, 2, 2, 1))
        probs[2] = 1.0
        assert np.all(BevMaps(np.zeros((2, 2)), np.zeros((2, 2, 2)), probs, np.zeros((2, 2, 1))).semantic == 2)

    def test_labeling(self):
        a = PanopticLabeling([1, 2], [0, 3])
        assert a.n_instances == 3 and len(a) == 2
        assert a.equals(PanopticLabeling(np.array([1, 2]), np.array([0, 3])))
        with pytest.raises(DimensionError):
            PanopticLabeling([1], [1, 2])
