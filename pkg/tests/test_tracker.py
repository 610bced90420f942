import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from leodet.errors import InvalidInputError
from leodet.geometry import DetBox, pairwise_iou
from leodet.tracker import (
    Tracker,
    TrackerParams,
    inpaint,
    predict,
    run_tracker,
    track_sequence,
)

from conftest import random_boxes, reference_greedy_match


def make_box(x, y, w=10.0, h=10.0, cls=0, t=0, p_obj=0.9, p_iou=(0.9, 0.1)):
    return DetBox(x=x, y=y, w=w, h=h, class_id=cls, t_step=t, p_obj=p_obj, p_iou=p_iou)


def single_track(box, params=None):
    tk = Tracker(params or TrackerParams())
    tk.step([box], box.t_step)
    return tk


class TestPredict:
    def test_velocity_advance(self):
        tk = single_track(make_box(0, 0))
        tr = tk.live[0]
        tr.velocity = (2.0, 1.0)
        p = predict(tr, 1)
        assert (p.x, p.y, p.w, p.h) == (2.0, 1.0, 10.0, 10.0)

    def test_zero_velocity(self):
        tk = single_track(make_box(5, 6))
        p = predict(tk.live[0], 1)
        assert (p.x, p.y) == (5.0, 6.0)

    def test_multi_step_gap(self):
        tk = single_track(make_box(0, 0))
        tr = tk.live[0]
        tr.velocity = (2.0, 0.0)
        assert predict(tr, 3).x == 6.0


class TestStep:
    def test_two_track_matching(self):
        tk = Tracker()
        tk.step([make_box(0, 0), make_box(20, 0)], 0)
        owners = tk.step([make_box(1, 0, t=1), make_box(21, 0, t=1)], 1)
        assert owners == [0, 1]
        assert [tr.n for tr in tk.live] == [2, 2]

    def test_greedy_matches_optimal_on_separated_objects(self):
        # well-separated objects: greedy and Hungarian agree
        tk = Tracker()
        tk.step([make_box(0, 0), make_box(20, 0)], 0)
        boxes = [make_box(1, 0, t=1), make_box(21, 0, t=1)]
        predicted = [predict(tr, 1) for tr in tk.live]
        ious = pairwise_iou(predicted, boxes)
        rows, cols = linear_sum_assignment(-ious)
        optimal = sorted(zip(rows.tolist(), cols.tolist()))
        owners = tk.step(boxes, 1)
        greedy = sorted((tid, j) for j, tid in enumerate(owners))
        assert greedy == optimal

    def test_decay_from_init(self):
        tk = single_track(make_box(0, 0))
        tk.step([], 1)
        tk.step([], 2)
        assert tk.live[0].q == pytest.approx(0.9 * 0.9 * 0.9)
        assert tk.live[0].q > 0.55

    def test_matched_then_deleted_after_six(self):
        tk = single_track(make_box(0, 0))
        tk.step([make_box(0, 0, t=1)], 1)
        assert tk.live[0].q == 1.0
        for t in range(2, 8):
            tk.step([], t)
        # q = 0.9^6 = 0.531441 < 0.55, deleted at the 6th unmatched step
        assert not tk.live
        assert tk.dead[0].q == pytest.approx(0.9**6)

    def test_never_matched_survives_five_steps(self):
        tk = single_track(make_box(0, 0))
        for k in range(1, 5):
            tk.step([], k)
            assert tk.live, f"deleted prematurely at step {k}"
        tk.step([], 5)
        assert not tk.live

    def test_wrong_timestep_rejected(self):
        tk = single_track(make_box(0, 0))
        with pytest.raises(InvalidInputError):
            tk.step([make_box(0, 0, t=5)], 1)

    def test_different_classes_never_match(self):
        tk = Tracker()
        tk.step([make_box(0, 0, cls=0)], 0)
        owners = tk.step([make_box(0, 0, cls=1, t=1)], 1)
        assert owners == [1]  # new track, not matched to track 0


class TestTrackSequence:
    def test_static_object_full_length(self):
        frames = [[make_box(50, 50, t=t)] for t in range(10)]
        out = track_sequence(frames)
        assert len(out) == 10
        assert all(tb.track_len == 10 for tb in out)
        assert len({tb.track_id for tb in out}) == 1

    def test_gap_reidentification(self):
        # present 0-4, gone 5-6, present 7-12, slow motion: one track, n=11
        frames = []
        for t in range(13):
            if 5 <= t <= 6:
                frames.append([])
            else:
                frames.append([make_box(10 + 0.5 * t, 20, t=t)])
        out = track_sequence(frames)
        assert len({tb.track_id for tb in out}) == 1
        assert all(tb.track_len == 11 for tb in out)

    def test_empty_sequence(self):
        assert track_sequence([]) == []
        assert track_sequence([[], [], []]) == []

    def test_boxes_passed_through_unchanged(self):
        rng = np.random.default_rng(21)
        frames = [random_boxes(rng, 5, t_step=t) for t in range(6)]
        per_frame, _ = run_tracker(frames)
        for t, row in enumerate(per_frame):
            assert [tb.box for tb in row] == frames[t]

    def test_track_ids_never_reused(self):
        rng = np.random.default_rng(22)
        frames = [random_boxes(rng, int(rng.integers(0, 6)), t_step=t) for t in range(30)]
        _, tracks = run_tracker(frames)
        ids = [tr.id for tr in tracks]
        assert len(ids) == len(set(ids))

    def test_greedy_invariant_to_box_permutation(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            frames = [random_boxes(rng, 6, t_step=t) for t in range(5)]
            base = {
                (tb.box.t_step, tb.box.x, tb.box.y): tb.track_len
                for tb in track_sequence(frames)
            }
            perm_frames = []
            for row in frames:
                idx = rng.permutation(len(row))
                perm_frames.append([row[i] for i in idx])
            perm = {
                (tb.box.t_step, tb.box.x, tb.box.y): tb.track_len
                for tb in track_sequence(perm_frames)
            }
            assert base == perm

    def test_reversed_sequence_same_boxes(self):
        rng = np.random.default_rng(24)
        frames = [random_boxes(rng, 4, t_step=t) for t in range(8)]
        fwd = track_sequence(frames)
        bwd = track_sequence(frames[::-1])
        fwd_keys = sorted((tb.box.x, tb.box.y, tb.box.w) for tb in fwd)
        bwd_keys = sorted((tb.box.x, tb.box.y, tb.box.w) for tb in bwd)
        assert fwd_keys == bwd_keys


class TestGreedyOracle:
    def test_matches_reference_on_random_instances(self):
        rng = np.random.default_rng(25)
        params = TrackerParams()
        for _ in range(100):
            n_tracks = int(rng.integers(1, 12))
            n_boxes = int(rng.integers(1, 12))
            tk = Tracker(params)
            tk.step(random_boxes(rng, n_tracks, t_step=0), 0)
            track_order = list(tk.live)
            boxes = random_boxes(rng, n_boxes, t_step=1)
            predicted = [predict(tr, 1) for tr in track_order]
            ious = pairwise_iou(predicted, boxes)
            expected = reference_greedy_match(
                ious,
                [tr.class_id for tr in track_order],
                [b.class_id for b in boxes],
                params.tau_iou,
                ids_a=[tr.id for tr in track_order],
            )
            owners = tk.step(boxes, 1)
            got = sorted(
                (next(i for i, tr in enumerate(track_order) if tr.id == tid), j)
                for j, tid in enumerate(owners)
                if tid in {tr.id for tr in track_order}
            )
            assert got == expected


class TestInpaint:
    def test_linear_interpolation(self):
        # wide boxes so the t=0 -> t=2 jump still clears the IoU gate
        frames = [[make_box(0, 0, w=40, t=0)], [], [make_box(10, 0, w=40, t=2)]]
        # pad with matches so n reaches the threshold
        for t in range(3, 7):
            frames.append([make_box(10, 0, w=40, t=t)])
        _, tracks = run_tracker(frames)
        filled = inpaint(tracks, min_len=6)
        assert len(filled) == 1
        box = filled[0].box
        assert (box.t_step, box.x, box.y) == (1, 5.0, 0.0)
        assert filled[0].inpainted

    def test_short_track_not_inpainted(self):
        frames = [[make_box(0, 0, t=0)], [], [make_box(2, 0, t=2)], [make_box(3, 0, t=3)]]
        _, tracks = run_tracker(frames)
        assert tracks[0].n == 3
        assert inpaint(tracks, min_len=6) == []

    def test_gapless_track_unchanged(self):
        frames = [[make_box(0, 0, t=t)] for t in range(8)]
        _, tracks = run_tracker(frames)
        assert inpaint(tracks, min_len=6) == []

    def test_scores_copied_from_nearest_match(self):
        frames = []
        for t in range(9):
            if t == 4:
                frames.append([])
            else:
                p = 0.8 if t < 4 else 0.6
                frames.append([make_box(float(t), 0, t=t, p_obj=p)])
        _, tracks = run_tracker(frames)
        filled = inpaint(tracks, min_len=6)
        assert len(filled) == 1
        # nearest matched neighbours are t=3 and t=5, tie goes to the earlier
        assert filled[0].box.p_obj == 0.8


def test_functional_step_wrapper():
    from leodet.tracker import step

    params = TrackerParams()
    tracks, next_id = step([], [make_box(0, 0)], 0, params)
    assert len(tracks) == 1 and next_id == 1
    tracks, next_id = step(tracks, [make_box(1, 0, t=1)], 1, params, next_id)
    assert tracks[0].n == 2 and next_id == 1
    # six unmatched steps delete the track
    for t in range(2, 8):
        tracks, next_id = step(tracks, [], t, params, next_id)
    assert tracks == []
