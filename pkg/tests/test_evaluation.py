"""Tests for average precision and the six-metric evaluation suite"""

from collections import defaultdict

import numpy as np
import pytest

from src.errors import DatasetValidationError, ReportSchemaError
from src.geometry import BBox
from src.models import ContactState, Frame, FrameSet, HandRecord, HandSide, ObjectRecord, CategoryTable
from src.services.evaluation import (
    METRIC_KEYS, ApConfig, AssociationSource, EvalReport, Interpolation, MapAllMode, average_precision,
    evaluate, greedy_assign,
)
from src.services.interactions import encode_offset
from src.services.matcher import HandObjectMatcher

COCO = Interpolation.COCO101
ALL = Interpolation.ALL_POINTS


def sweep_ap(matches, gt_count, interpolation):
    """Brute-force precision/recall sweep"""
    if gt_count == 0 or not matches:
        return 0.0
    ranked = sorted(matches, key=lambda m: -m[0])
    precision, recall, tp = [], [], 0
    for k, (_, hit) in enumerate(ranked, start=1):
        tp += int(hit)
        precision.append(tp / k)
        recall.append(tp / gt_count)

    if interpolation == COCO:
        total = 0.0
        for r in np.linspace(0.0, 1.0, 101):
            reachable = [p for p, rc in zip(precision, recall) if rc >= r]
            total += max(reachable) if reachable else 0.0
        return total / 101

    total, previous = 0.0, 0.0
    for i in range(len(ranked)):
        total += (recall[i] - previous) * max(precision[i:])
        previous = recall[i]
    return total


@pytest.mark.unit
class TestAveragePrecision:
    def test_no_ground_truth(self):
        assert average_precision([(0.9, False)], 0) == 0.0

    def test_no_detections(self):
        assert average_precision([], 3) == 0.0

    def test_perfect_ranking(self):
        matches = [(0.9, True), (0.8, True)]
        assert average_precision(matches, 2, COCO) == 1.0
        assert average_precision(matches, 2, ALL) == 1.0

    def test_half_recall(self):
        """One hit out of two: 51 of 101 recall samples are reachable"""
        assert average_precision([(0.9, True)], 2, COCO) == pytest.approx(51 / 101)
        assert average_precision([(0.9, True)], 2, ALL) == pytest.approx(0.5)

    def test_ranking_uses_scores(self):
        assert average_precision([(0.1, False), (0.9, True)], 1, COCO) == 1.0

    def test_negative_gt_count(self):
        with pytest.raises(ValueError):
            average_precision([], -1)

    def test_matches_brute_force_sweep(self):
        rng = np.random.default_rng(99)
        for _ in range(250):
            n = int(rng.integers(1, 9))
            matches = [(float(rng.choice([0.2, 0.5, 0.7, rng.uniform()])), bool(rng.integers(0, 2)))
                       for _ in range(n)]
            gt_count = max(sum(hit for _, hit in matches) + int(rng.integers(0, 3)), 1)
            assert average_precision(matches, gt_count, COCO) == pytest.approx(
                sweep_ap(matches, gt_count, COCO), abs=1e-9)
            assert average_precision(matches, gt_count, ALL) == pytest.approx(
                sweep_ap(matches, gt_count, ALL), abs=1e-12)


class _Box:
    def __init__(self, box, score=1.0, tag=None):
        self.box, self.score, self.tag = box, score, tag


@pytest.mark.unit
class TestGreedyAssign:
    def test_highest_iou_claimed(self):
        gts = [_Box(BBox(x=0, y=0, w=10, h=10)), _Box(BBox(x=2, y=0, w=10, h=10))]
        dets = [_Box(BBox(x=2, y=0, w=10, h=10), 0.9), _Box(BBox(x=0, y=0, w=10, h=10), 0.8)]
        assert greedy_assign(dets, gts, 0.5) == [(0.9, True), (0.8, True)]

    def test_ground_truth_claimed_once(self):
        gts = [_Box(BBox(x=0, y=0, w=10, h=10))]
        dets = [_Box(BBox(x=0, y=0, w=10, h=10), 0.5), _Box(BBox(x=0, y=0, w=10, h=10), 0.9)]
        assert greedy_assign(dets, gts, 0.5) == [(0.9, True), (0.5, False)]

    def test_predicate_failure_leaves_ground_truth_free(self):
        gts = [_Box(BBox(x=0, y=0, w=10, h=10), tag="a")]
        dets = [_Box(BBox(x=0, y=0, w=10, h=10), 0.9, tag="b"), _Box(BBox(x=0, y=0, w=10, h=10), 0.8, tag="a")]
        result = greedy_assign(dets, gts, 0.5, lambda d, g: d.tag == g.tag)
        assert result == [(0.9, False), (0.8, True)]

    def test_below_threshold(self):
        gts = [_Box(BBox(x=0, y=0, w=10, h=10))]
        dets = [_Box(BBox(x=5, y=0, w=10, h=10), 0.9)]
        assert greedy_assign(dets, gts, 0.5) == [(0.9, False)]


@pytest.mark.integration
class TestEvaluate:
    def test_perfection_fixture(self, fixture_gt, perfect_dets):
        report = evaluate(fixture_gt, perfect_dets)
        assert report.metrics() == {key: 100.0 for key in METRIC_KEYS}
        assert report.map_det == 100.0
        assert report.mar_obj == 100.0

    def test_perfection_from_file_associations(self, fixture_gt):
        report = evaluate(fixture_gt, fixture_gt, ApConfig(associations=AssociationSource.FILE))
        assert report.metrics() == {key: 100.0 for key in METRIC_KEYS}

    def test_empty_detections(self, fixture_gt):
        empty = FrameSet(frames=tuple(f.model_copy(update={"hands": (), "objects": ()}) for f in fixture_gt.frames),
                         categories=fixture_gt.categories)
        report = evaluate(fixture_gt, empty)
        assert report.metrics() == {key: 0.0 for key in METRIC_KEYS}

    def test_micro_dataset_coco101(self, micro_dataset):
        gt, dets = micro_dataset
        report = evaluate(gt, dets)
        assert report.ap_hand == pytest.approx(100.0)
        assert report.ap_h_side == pytest.approx(100 * 56 / 101)
        assert report.ap_h_state == pytest.approx(100.0)
        assert report.map_obj == pytest.approx(100 * (51 / 101 + 1) / 2)
        assert report.map_h_obj == pytest.approx(report.map_obj)
        assert report.map_all == pytest.approx(100 * (51 / 101) / 2)
        assert report.map_det == pytest.approx(100.0)
        assert report.counts["ap_h_side"].model_dump() == {"tp": 2, "fp": 1, "fn": 1}
        assert report.per_category == pytest.approx({"pliers": 100 * 51 / 101, "screwdriver": 100.0})

    def test_micro_dataset_all_points(self, micro_dataset):
        gt, dets = micro_dataset
        report = evaluate(gt, dets, ApConfig(interpolation=ALL))
        assert report.ap_h_side == pytest.approx(100 * 5 / 9)
        assert report.map_obj == pytest.approx(75.0)
        assert report.map_all == pytest.approx(25.0)

    def test_pooled_map_all(self, micro_dataset):
        """Pooled: hands 0.9 TP, 0.8 FP (side), 0.7 FP (object) over 3 GT hands"""
        gt, dets = micro_dataset
        report = evaluate(gt, dets, ApConfig(map_all_mode=MapAllMode.POOLED, interpolation=ALL))
        assert report.map_all == pytest.approx(100 / 3)

    def test_relaxed_side_raises_map_all(self, micro_dataset):
        gt, dets = micro_dataset
        strict = evaluate(gt, dets)
        relaxed = evaluate(gt, dets, ApConfig(require_side=False))
        assert relaxed.map_all > strict.map_all

    def test_parallel_matches_sequential(self, fixture_gt, perfect_dets):
        assert evaluate(fixture_gt, perfect_dets, jobs=1) == evaluate(fixture_gt, perfect_dets, jobs=3)

    def test_frame_mismatch_named(self, fixture_gt, perfect_dets):
        dets = perfect_dets.with_frames(perfect_dets.frames[:-1])
        with pytest.raises(DatasetValidationError, match="frame 12"):
            evaluate(fixture_gt, dets)

    def test_category_table_mismatch(self, micro_dataset):
        gt, dets = micro_dataset
        other = dets.model_copy(update={"categories": CategoryTable.from_names(["pliers", "mug"])})
        with pytest.raises(DatasetValidationError, match="categories"):
            evaluate(gt, other)


@pytest.mark.unit
class TestReportDocument:
    def test_flat_roundtrip(self, micro_dataset):
        report = evaluate(*micro_dataset).model_copy(update={"metadata": {"pretraining": "synthetic"}})
        flat = report.to_flat()
        assert flat["metadata.pretraining"] == "synthetic"
        assert "per_category.pliers" in flat
        assert EvalReport.from_flat(flat, expected_version=1) == report

    def test_schema_version_mismatch(self):
        with pytest.raises(ReportSchemaError):
            EvalReport.from_flat({"schema_version": 99}, expected_version=1)


# ============ Monotonicity suite ============

CELL = 160
SIDE = 50


def _cell_box(cell, jitter=(0, 0, 0, 0)):
    row, col = divmod(int(cell), 4)
    dx, dy, dw, dh = jitter
    return BBox(x=col * CELL + 20 + dx, y=row * CELL + 20 + dy, w=SIDE + dw, h=SIDE + dh)


def _jittered(box, jitter):
    dx, dy, dw, dh = jitter
    return BBox(x=box.x + dx, y=box.y + dy, w=box.w + dw, h=box.h + dh)


def random_instance(rng, num_frames=4):
    """
    Ground truth on a 4x3 grid of disjoint cells so every detection overlaps at
    most one ground-truth box; detections are jittered copies plus clutter.
    """
    table = CategoryTable.from_names(["a", "b", "c"])
    gt_frames, det_frames = [], []
    for frame_id in range(1, num_frames + 1):
        cells = rng.permutation(12)
        n_hands, n_objects = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        hand_cells, object_cells, spare = cells[:n_hands], cells[n_hands:n_hands + n_objects], cells[6:]

        objects = [ObjectRecord(id=10 + k, box=_cell_box(c), category=int(rng.integers(1, 4)))
                   for k, c in enumerate(object_cells)]
        hands = []
        for k, c in enumerate(hand_cells):
            box = _cell_box(c)
            side = HandSide.LEFT if rng.integers(0, 2) else HandSide.RIGHT
            if k < len(objects) and rng.uniform() < 0.7:
                objects[k] = objects[k].model_copy(update={"active": True, "linked_hand": k + 1})
                hands.append(HandRecord(id=k + 1, box=box, side=side, state=ContactState.IN_CONTACT,
                                        offset=encode_offset(box, objects[k].box, 640, 480)))
            else:
                hands.append(HandRecord(id=k + 1, box=box, side=side, state=ContactState.NO_CONTACT))
        gt_frames.append(Frame(frame_id=frame_id, width=640, height=480, hands=tuple(hands), objects=tuple(objects)))

        def jitter():
            return tuple(int(v) for v in rng.integers(-3, 4, size=4))

        det_objects = []
        for o in objects:
            if rng.uniform() < 0.85:
                category = o.category if rng.uniform() < 0.8 else int(rng.integers(1, 4))
                det_objects.append(ObjectRecord(id=o.id, box=_jittered(o.box, jitter()),
                                                score=float(rng.uniform()), category=category))
        for k, c in enumerate(spare[:int(rng.integers(0, 3))]):
            det_objects.append(ObjectRecord(id=50 + k, box=_cell_box(c, jitter()), score=float(rng.uniform()),
                                            category=int(rng.integers(1, 4))))

        det_hands = []
        for h in hands:
            if rng.uniform() >= 0.85:
                continue
            box = _jittered(h.box, jitter())
            side = h.side if rng.uniform() < 0.7 else (HandSide.LEFT if h.side == HandSide.RIGHT else HandSide.RIGHT)
            in_contact = h.in_contact if rng.uniform() < 0.7 else not h.in_contact
            det_hands.append(HandRecord(
                id=h.id, box=box, score=float(rng.uniform()), side=side,
                state=ContactState.IN_CONTACT if in_contact else ContactState.NO_CONTACT,
                offset=encode_offset(box, box, 640, 480) if in_contact else None,
            ))
        for k, c in enumerate(spare[3:3 + int(rng.integers(0, 2))]):
            det_hands.append(HandRecord(id=90 + k, box=_cell_box(c, jitter()), score=float(rng.uniform()),
                                        side=HandSide.LEFT, state=ContactState.NO_CONTACT))

        free = list(range(len(det_objects)))
        rng.shuffle(free)
        for h in det_hands:
            if h.in_contact and free and rng.uniform() < 0.8:
                k = free.pop()
                det_objects[k] = det_objects[k].model_copy(update={"active": True, "linked_hand": h.id})
        det_frames.append(Frame(frame_id=frame_id, width=640, height=480,
                                hands=tuple(det_hands), objects=tuple(det_objects)))

    return (FrameSet(frames=tuple(gt_frames), categories=table),
            FrameSet(frames=tuple(det_frames), categories=table))


@pytest.mark.slow
class TestMonotonicity:
    @pytest.mark.parametrize("interpolation", [COCO, ALL])
    def test_relaxing_predicates_never_lowers_ap(self, interpolation):
        rng = np.random.default_rng(1234)
        for _ in range(100):
            gt, dets = random_instance(rng)
            base = dict(interpolation=interpolation, associations=AssociationSource.FILE)
            strict = evaluate(gt, dets, ApConfig(**base))
            eps = 1e-9
            assert strict.ap_h_side <= strict.ap_hand + eps
            assert strict.ap_h_state <= strict.ap_hand + eps
            assert strict.map_h_obj <= strict.map_obj + eps

            for relax in ("require_side", "require_state", "require_object"):
                relaxed = evaluate(gt, dets, ApConfig(**base, **{relax: False}))
                assert strict.map_all <= relaxed.map_all + eps
            relaxed_hand = evaluate(gt, dets, ApConfig(**base, require_hand=False))
            assert relaxed_hand.map_h_obj == pytest.approx(strict.map_obj)


# ============ Brute-force evaluator ============

IOU = 0.5


def corner_iou(a, b):
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.w * a.h + b.w * b.h - inter)


def enumerate_greedy(dets, gts, accept=None):
    """Score-ordered assignment spelled out: every free, accepted GT above IoU is listed, best wins"""
    taken, out = set(), []
    for det in sorted(dets, key=lambda d: -d.score):
        options = []
        for j, gt in enumerate(gts):
            overlap = corner_iou(det.box, gt.box)
            if j not in taken and overlap >= IOU and (accept is None or accept(det, gt)):
                options.append((overlap, -j))
        if options:
            taken.add(-max(options)[1])
        out.append((det.score, bool(options)))
    return out


def brute_force_evaluate(gt, dets, interpolation):
    """Six EHOI metrics and their tp/fp/fn tallies with file-provided associations"""
    pools = defaultdict(lambda: ([], [0]))

    def add(metric, category, matches, gt_count):
        pools[metric, category][0].extend(matches)
        pools[metric, category][1][0] += gt_count

    det_frames = {f.frame_id: f for f in dets.frames}
    categories = gt.categories.ids
    for g in sorted(gt.frames, key=lambda f: f.frame_id):
        d = det_frames[g.frame_id]
        add("ap_hand", 0, enumerate_greedy(d.hands, g.hands), len(g.hands))
        add("ap_h_side", 0, enumerate_greedy(d.hands, g.hands, lambda a, b: a.side == b.side), len(g.hands))
        add("ap_h_state", 0, enumerate_greedy(d.hands, g.hands, lambda a, b: a.state == b.state), len(g.hands))

        det_active = [o for o in d.objects if o.active]

        def same_hand(det_obj, gt_obj):
            gt_hand = g.hand(gt_obj.linked_hand) if gt_obj.linked_hand is not None else None
            det_hand = d.hand(det_obj.linked_hand) if det_obj.linked_hand is not None else None
            return gt_hand is not None and det_hand is not None and corner_iou(det_hand.box, gt_hand.box) >= IOU

        def actives_of(hand):
            return [o for o in g.objects if o.active and o.linked_hand == hand.id]

        def object_of(hand):
            owned = sorted((o for o in det_active if o.linked_hand == hand.id), key=lambda o: o.id)
            return owned[0] if owned else None

        def interaction_correct(dh, gh):
            obj = object_of(dh)
            return (dh.side == gh.side and dh.state == gh.state and obj is not None
                    and any(a.category == obj.category and corner_iou(obj.box, a.box) >= IOU
                            for a in actives_of(gh)))

        gt_contact = [h for h in g.hands if h.state == ContactState.IN_CONTACT]
        det_contact = [h for h in d.hands if h.state == ContactState.IN_CONTACT]
        for c in categories:
            gts = [o for o in g.objects if o.active and o.category == c]
            found = [o for o in det_active if o.category == c]
            add("map_obj", c, enumerate_greedy(found, gts), len(gts))
            add("map_h_obj", c, enumerate_greedy(found, gts, same_hand), len(gts))

            hands = [h for h in gt_contact if any(a.category == c for a in actives_of(h))]
            claimed = [h for h in det_contact if object_of(h) is not None and object_of(h).category == c]
            add("map_all", c, enumerate_greedy(claimed, hands, interaction_correct), len(hands))

    metrics, counts = {}, {}
    for metric in METRIC_KEYS:
        keys = [k for k in pools if k[0] == metric]
        scored = [sweep_ap(pools[k][0], pools[k][1][0], interpolation) for k in keys if pools[k][1][0] > 0]
        metrics[metric] = 100.0 * sum(scored) / len(scored) if scored else 0.0
        tp = sum(hit for k in keys for _, hit in pools[k][0])
        fp = sum(not hit for k in keys for _, hit in pools[k][0])
        counts[metric] = {"tp": tp, "fp": fp, "fn": sum(pools[k][1][0] for k in keys) - tp}
    return metrics, counts


@pytest.mark.integration
class TestAgainstBruteForce:
    @pytest.mark.parametrize("interpolation", [COCO, ALL])
    def test_random_instances(self, interpolation):
        """Two frames keep every pool at 8 detections or fewer"""
        rng = np.random.default_rng(2024)
        for _ in range(200):
            gt, dets = random_instance(rng, num_frames=2)
            report = evaluate(gt, dets, ApConfig(interpolation=interpolation, associations=AssociationSource.FILE))
            metrics, counts = brute_force_evaluate(gt, dets, interpolation)
            assert {k: report.counts[k].model_dump() for k in METRIC_KEYS} == counts
            assert report.metrics() == pytest.approx(metrics, abs=1e-9)

    def test_micro_dataset(self, micro_dataset):
        """One hand per frame: matcher output written onto the objects equals match-mode associations"""
        gt, dets = micro_dataset
        matches = HandObjectMatcher.match_dataset(dets)
        linked = dets.with_frames(HandObjectMatcher.apply_matches(f, fm) for f, fm in zip(dets.frames, matches))
        metrics, counts = brute_force_evaluate(gt, linked, COCO)
        report = evaluate(gt, dets)
        assert {k: report.counts[k].model_dump() for k in METRIC_KEYS} == counts
        assert report.metrics() == pytest.approx(metrics, abs=1e-9)


@pytest.mark.integration
class TestInvariance:
    def test_frame_order(self, micro_dataset):
        rng = np.random.default_rng(55)
        instances = [micro_dataset] + [random_instance(rng) for _ in range(20)]
        for gt, dets in instances:
            order = rng.permutation(len(gt.frames))
            shuffled_gt = gt.with_frames([gt.frames[i] for i in order])
            reversed_dets = dets.with_frames(reversed(dets.frames))
            for associations in AssociationSource:
                cfg = ApConfig(associations=associations)
                assert evaluate(shuffled_gt, reversed_dets, cfg) == evaluate(gt, dets, cfg)

    def test_interpolations_agree_on_perfection(self, fixture_gt, perfect_dets):
        coco = evaluate(fixture_gt, perfect_dets, ApConfig(interpolation=COCO))
        all_points = evaluate(fixture_gt, perfect_dets, ApConfig(interpolation=ALL))
        assert coco.metrics() == all_points.metrics() == {key: 100.0 for key in METRIC_KEYS}

    def test_interpolations_agree_on_dense_curves(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            gt_count = int(rng.integers(500, 2000))
            hits = [(float(rng.uniform(0.3, 1.0)), True) for _ in range(gt_count)]
            misses = [(float(rng.uniform()), False) for _ in range(int(rng.integers(0, gt_count // 2)))]
            matches = hits + misses
            gap = average_precision(matches, gt_count, COCO) - average_precision(matches, gt_count, ALL)
            assert abs(gap) < 0.01
