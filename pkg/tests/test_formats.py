import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leodet.errors import FormatError
from leodet.evrep import EventStream
from leodet.formats import (
    BoxRecord,
    DetectionFile,
    load_events,
    read_detection_file,
    read_events_csv,
    read_evb1,
    read_split,
    register_event_reader,
    write_detection_file,
    write_events_csv,
    write_evb1,
    write_split,
)
from leodet.geometry import DetBox
from leodet.protocol import wsod_split


def stream_from(rows, width=304, height=240, duration=1000):
    return EventStream(np.array(rows, dtype=np.int64).reshape(-1, 4), width, height, duration)


class TestEvb1:
    def test_round_trip(self, tmp_path):
        s = stream_from([(10, 3, 4, 1), (20, 300, 239, -1), (999, 0, 0, 1)])
        path = tmp_path / "events.evb1"
        write_evb1(path, s)
        back = read_evb1(path)
        assert np.array_equal(back.events, s.events)
        assert (back.width, back.height, back.duration_us) == (304, 240, 1000)

    def test_byte_layout(self, tmp_path):
        s = stream_from([(0x0102030405060708, 0x1122, 0x3344, -1)],
                        width=0xABCD, height=0xEF01,
                        duration=0x0102030405060709)
        path = tmp_path / "events.evb1"
        write_evb1(path, s)
        raw = path.read_bytes()
        assert raw[:4] == b"EVB1"
        assert raw[4:6] == bytes([0xCD, 0xAB])          # u16 width LE
        assert raw[6:8] == bytes([0x01, 0xEF])          # u16 height LE
        assert raw[8:16] == (0x0102030405060709).to_bytes(8, "little")
        body = raw[16:]
        assert len(body) == 20
        assert body[0:8] == (0x0102030405060708).to_bytes(8, "little")
        assert body[8:10] == (0x1122).to_bytes(2, "little")
        assert body[10:12] == (0x3344).to_bytes(2, "little")
        assert body[12] == 0xFF  # i8 -1

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.evb1"
        path.write_bytes(b"NOPE" + bytes(12))
        with pytest.raises(FormatError):
            read_evb1(path)

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "short.evb1"
        path.write_bytes(b"EVB1")
        with pytest.raises(FormatError):
            read_evb1(path)


class TestCsv:
    def test_round_trip(self, tmp_path):
        s = stream_from([(10, 3, 4, 1), (20, 5, 6, -1)])
        path = tmp_path / "events.csv"
        write_events_csv(path, s)
        back = read_events_csv(path, width=304, height=240, duration_us=1000)
        assert np.array_equal(back.events, s.events)

    def test_duration_inferred(self, tmp_path):
        s = stream_from([(10, 3, 4, 1)], duration=11)
        path = tmp_path / "events.csv"
        write_events_csv(path, s)
        assert read_events_csv(path, 304, 240).duration_us == 11

    def test_header_checked(self, tmp_path):
        path = tmp_path / "events.csv"
        path.write_text("a,b,c,d\n1,2,3,4\n")
        with pytest.raises(FormatError):
            read_events_csv(path, 304, 240)


class TestLoadEventsDispatch:
    def test_custom_reader_registered(self, tmp_path):
        called = {}

        def reader(path):
            called["path"] = path
            return stream_from([(1, 0, 0, 1)])

        register_event_reader(".dat", reader)
        path = tmp_path / "raw.dat"
        path.write_bytes(b"")
        assert len(load_events(path)) == 1
        assert called["path"] == path

    def test_unknown_suffix_rejected(self, tmp_path):
        with pytest.raises(FormatError):
            load_events(tmp_path / "events.xyz")


finite_coord = st.floats(min_value=-500, max_value=2000, allow_nan=False,
                         allow_infinity=False)
prob = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


@st.composite
def det_records(draw):
    num_classes = 2
    cls = draw(st.integers(0, num_classes - 1))
    box = DetBox(
        x=draw(finite_coord),
        y=draw(finite_coord),
        w=draw(st.floats(min_value=0.1, max_value=500, allow_nan=False)),
        h=draw(st.floats(min_value=0.1, max_value=500, allow_nan=False)),
        class_id=cls,
        t_step=draw(st.integers(0, 31)),
        p_obj=draw(prob),
        p_iou=tuple(draw(st.lists(prob, min_size=num_classes, max_size=num_classes))),
    )
    src = draw(st.sampled_from(["det", "gt", "pseudo"]))
    if src == "pseudo":
        return BoxRecord(
            seq=draw(st.sampled_from(["seq-a", "seq-b"])),
            box=box,
            src=src,
            cert=draw(st.sampled_from(["keep", "ignore"])),
            prov="detected",
            tlen_f=draw(st.integers(0, 40)),
            tlen_b=draw(st.integers(0, 40)),
        )
    return BoxRecord(seq=draw(st.sampled_from(["seq-a", "seq-b"])), box=box, src=src)


class TestDetectionFile:
    @settings(max_examples=50, deadline=None)
    @given(records=st.lists(det_records(), max_size=30))
    def test_round_trip_lossless(self, records, tmp_path_factory):
        tmp = tmp_path_factory.mktemp("ndjson")
        df = DetectionFile(classes=["car", "pedestrian"], width=304, height=240,
                           num_steps=32, records=records,
                           extra={"round": 2, "config_digest": "deadbeef"})
        path = tmp / "dets.ndjson"
        write_detection_file(path, df)
        back = read_detection_file(path)
        assert back.classes == df.classes
        assert (back.width, back.height, back.num_steps) == (304, 240, 32)
        assert back.extra == df.extra
        canonical = sorted(
            enumerate(records), key=lambda kv: (kv[1].seq, kv[1].box.t_step, kv[0])
        )
        assert back.records == [r for _, r in canonical]

    def test_write_is_deterministic(self, tmp_path):
        records = [
            BoxRecord("b", DetBox(1, 2, 3, 4, 0, 5, 0.5, (0.5, 0.5))),
            BoxRecord("a", DetBox(1, 2, 3, 4, 1, 3, 0.5, (0.5, 0.5))),
        ]
        df = DetectionFile(["car", "pedestrian"], 304, 240, 10, records)
        p1, p2 = tmp_path / "a.ndjson", tmp_path / "b.ndjson"
        write_detection_file(p1, df)
        write_detection_file(p2, df)
        assert p1.read_bytes() == p2.read_bytes()

    def test_missing_format_tag_rejected(self, tmp_path):
        path = tmp_path / "x.ndjson"
        path.write_text(json.dumps({"classes": [], "width": 1, "height": 1, "num_steps": 1}) + "\n")
        with pytest.raises(FormatError):
            read_detection_file(path)

    def test_class_out_of_range_rejected(self, tmp_path):
        path = tmp_path / "x.ndjson"
        header = {"format": "leodet/1", "classes": ["car"], "width": 10,
                  "height": 10, "num_steps": 4}
        rec = {"seq": "s", "t": 0, "cls": 3, "x": 0, "y": 0, "w": 1, "h": 1,
               "p_obj": 0.5, "p_iou": [0.5], "src": "det"}
        path.write_text(json.dumps(header) + "\n" + json.dumps(rec) + "\n")
        with pytest.raises(FormatError):
            read_detection_file(path)

    def test_frames_and_gt_index(self, tmp_path):
        records = [
            BoxRecord("s", DetBox(0, 0, 5, 5, 0, 1, 0.9, (0.9, 0.1)), src="det"),
            BoxRecord("s", DetBox(0, 0, 5, 5, 0, 1, 1.0, (1.0, 0.0)), src="gt"),
            BoxRecord("s", DetBox(0, 0, 5, 5, 0, 3, 1.0, (1.0, 0.0)), src="gt"),
        ]
        df = DetectionFile(["car", "pedestrian"], 304, 240, 6, records)
        assert [len(row) for row in df.frames("s", src="det")] == [0, 1, 0, 0, 0, 0]
        assert sorted(df.gt_by_step("s")) == [1, 3]
        assert df.label_index() == {"s": [1, 3]}


class TestSplitFile:
    def test_round_trip(self, tmp_path):
        split = wsod_split({"a": list(range(40)), "b": list(range(11))}, 0.1)
        path = tmp_path / "split.json"
        write_split(path, split)
        assert read_split(path) == split

    def test_byte_reproducible(self, tmp_path):
        split = wsod_split({"b": list(range(11)), "a": list(range(40))}, 0.1)
        p1, p2 = tmp_path / "s1.json", tmp_path / "s2.json"
        write_split(p1, split)
        write_split(p2, split)
        assert p1.read_bytes() == p2.read_bytes()

    def test_missing_key_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"mode": "wsod"}))
        with pytest.raises(FormatError):
            read_split(path)
