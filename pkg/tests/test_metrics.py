import numpy as np
import pytest

from oracles import brute_pq
from panofuse.errors import DimensionError
from panofuse.metrics import (
    ClassInfo,
    ClassTable,
    PanopticAccumulator,
    evaluate,
    match_segments,
    miou,
    panoptic_quality,
)
from panofuse.postproc import PanopticLabeling

CLASSES = ClassTable(
    {
        0: ClassInfo("unlabeled", False, ignore=True),
        1: ClassInfo("car", True),
        2: ClassInfo("person", True),
        3: ClassInfo("road", False),
        4: ClassInfo("tree", False),
    }
)


def labeling(sem, inst):
    return PanopticLabeling(np.array(sem), np.array(inst))


def random_labeling(rng, n):
    sem = rng.integers(0, 5, n)
    inst = np.where(np.isin(sem, [1, 2]), rng.integers(0, 4, n), 0)
    return labeling(sem, inst)


class TestClassTable:
    def test_partitions(self):
        assert CLASSES.things == [1, 2] and CLASSES.stuff == [3, 4] and CLASSES.ignored == [0]

    def test_json_roundtrip(self):
        again = ClassTable.from_json(CLASSES.to_json())
        assert again == CLASSES

    def test_duplicate_id(self):
        with pytest.raises(ValueError):
            ClassTable.from_json('[{"id": 1, "name": "a"}, {"id": 1, "name": "b"}]')

    def test_validate(self):
        with pytest.raises(ValueError):
            ClassTable({1: ClassInfo("car", True)}).validate()


class TestPq:
    def test_worked_example(self):
        # car: one GT segment of 5 points, prediction covers 3 of them plus 0 extra -> IoU 0.6
        # person: one GT segment, missed entirely
        gt = labeling([1] * 5 + [2] * 2, [1] * 5 + [1] * 2)
        pred = labeling([1] * 3 + [3] * 2 + [3] * 2, [1] * 3 + [0] * 4)
        rep = evaluate(gt, pred, ClassTable({k: CLASSES[k] for k in (1, 2, 3)}))
        car = rep.per_class[1]
        assert car["sq"] == pytest.approx(0.6) and car["rq"] == 1.0 and car["pq"] == pytest.approx(0.6)
        assert rep.per_class[2]["pq"] == 0.0

    def test_tp_plus_fn(self):
        gt = labeling([1] * 5 + [1] * 5, [1] * 5 + [2] * 5)
        pred = labeling([1] * 3 + [0] * 7, [1] * 3 + [0] * 7)
        m = match_segments(gt, pred, CLASSES)[1]
        assert (m.tp, m.fp, m.fn) == (1, 0, 1)
        rep = panoptic_quality({1: m}, CLASSES)
        assert rep.per_class[1]["pq"] == pytest.approx(0.4)
        assert rep.per_class[1]["sq"] == pytest.approx(0.6)
        assert rep.per_class[1]["rq"] == pytest.approx(2 / 3)

    def test_perfect(self):
        rng = np.random.default_rng(0)
        gt = random_labeling(rng, 200)
        rep = evaluate(gt, gt, CLASSES)
        assert rep.pq == 1.0 and rep.pq_dagger == 1.0 and rep.miou == 1.0

    def test_ignore_points_dropped(self):
        gt = labeling([0, 0, 3, 3], [0, 0, 0, 0])
        pred = labeling([4, 4, 3, 3], [0, 0, 0, 0])
        rep = evaluate(gt, pred, CLASSES)
        assert rep.pq == 1.0 and rep.miou == 1.0

    def test_thing_points_without_instance_are_not_segments(self):
        gt = labeling([1, 1], [0, 0])
        pred = labeling([1, 1], [0, 0])
        m = match_segments(gt, pred, CLASSES)[1]
        assert (m.tp, m.fp, m.fn) == (0, 0, 0)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 200))
        gt = random_labeling(rng, n)
        # prediction: perturb a fraction of the ground truth so matches happen
        sem = gt.semantic.copy()
        inst = gt.instance.copy()
        flip = rng.uniform(size=n) < 0.3
        sem[flip] = rng.integers(0, 5, flip.sum())
        inst[flip] = rng.integers(0, 4, flip.sum())
        pred = labeling(sem, inst)
        got = match_segments(gt, pred, CLASSES)
        ref = brute_pq(gt.semantic.tolist(), gt.instance.tolist(), sem.tolist(), inst.tolist(), [1, 2], [3, 4], [0])
        for c, (iou_sum, tp, fp, fn) in ref.items():
            m = got[c]
            assert (m.tp, m.fp, m.fn) == (tp, fp, fn)
            assert sum(m.tp_ious) == pytest.approx(iou_sum, abs=1e-12)

    def test_pq_is_sq_times_rq(self):
        rng = np.random.default_rng(5)
        rep = evaluate(random_labeling(rng, 150), random_labeling(rng, 150), CLASSES)
        for row in rep.per_class.values():
            assert abs(row["pq"] - row["sq"] * row["rq"]) <= 1e-9

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            evaluate(labeling([1], [1]), labeling([1, 1], [1, 1]), CLASSES)


class TestAggregates:
    def test_miou_over_present_classes(self):
        mean, per = miou([3, 3, 4], [3, 4, 4], CLASSES)
        assert per == {3: 0.5, 4: 0.5} and mean == 0.5

    def test_dagger_uses_iou_for_stuff(self):
        gt = labeling([3, 3, 3, 1], [0, 0, 0, 1])
        pred = labeling([3, 3, 4, 1], [0, 0, 0, 1])
        rep = evaluate(gt, pred, CLASSES)
        # road: IoU 2/3 (matched, PQ 2/3); tree: FP only (PQ 0, IoU 0); car perfect
        assert rep.pq == pytest.approx((1 + 2 / 3 + 0) / 3)
        assert rep.pq_dagger == pytest.approx((1 + 2 / 3 + 0) / 3)
        assert rep.pq_th == 1.0 and rep.pq_st == pytest.approx(1 / 3)

    def test_pooling_differs_from_frame_average(self):
        good = labeling([1] * 4, [1] * 4)
        empty_pred = labeling([0] * 4, [0] * 4)
        acc = PanopticAccumulator(CLASSES).add(good, good).add(good, empty_pred)
        rep = acc.report()
        # pooled car counts: tp 1, fn 1 -> PQ = 1 / 1.5
        assert rep.per_class[1]["pq"] == pytest.approx(2 / 3)

    def test_outputs(self):
        rep = evaluate(labeling([1, 3], [1, 0]), labeling([1, 3], [1, 0]), CLASSES)
        assert rep.to_keyvalue().startswith("pq = 1.000000000\n")
        assert rep.to_csv(CLASSES).splitlines()[1].startswith("1,car,1,1.000000")
        assert "car" in rep.to_table(CLASSES)
