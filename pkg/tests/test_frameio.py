import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from thermoseed.frameio import (
    HEATMAP_LUT, MalformedHeaderError, RawFrame, SequenceError, TruncatedPayloadError,
    UnsupportedBitDepthError, encode_pgm, export_depth_map, export_frame, export_heatmap,
    export_histogram_csv, load_depth_map, load_image, load_raw_frame, load_sequence, parse_pgm,
    quantize, read_histogram_csv,
)
from thermoseed.tctr import build_histogram


def _pgm(w, h, maxval, samples, comment=b""):
    head = b"P5\n" + comment + f"{w} {h}\n{maxval}\n".encode()
    return head + np.asarray(samples, dtype=">u2").tobytes()


def test_reads_hand_written_2x2(tmp_path):
    p = tmp_path / "f.pgm"
    p.write_bytes(_pgm(2, 2, 65535, [0, 65535, 1000, 2000]))
    f = load_raw_frame(p)
    assert f.counts.tolist() == [[0, 65535], [1000, 2000]]
    assert (f.width, f.height) == (2, 2)


def test_header_comments_are_skipped():
    data = _pgm(2, 2, 65535, [1, 2, 3, 4], comment=b"# written by hand\n")
    assert parse_pgm(data).ravel().tolist() == [1, 2, 3, 4]


def test_maxval_255_rejected(tmp_path):
    p = tmp_path / "f.pgm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes(4))
    with pytest.raises(UnsupportedBitDepthError, match="unsupported bit depth"):
        load_raw_frame(p)


@pytest.mark.parametrize("data", [b"P2\n2 2\n65535\n", b"P5\n2\n", b"P5\nx 2\n65535\n", b""])
def test_malformed_header(data):
    with pytest.raises(MalformedHeaderError):
        parse_pgm(data + bytes(8))


def test_truncated_payload():
    with pytest.raises(TruncatedPayloadError):
        parse_pgm(_pgm(2, 2, 65535, [1, 2, 3]))


def test_error_kinds_are_distinct():
    kinds = {MalformedHeaderError, UnsupportedBitDepthError, TruncatedPayloadError}
    assert len(kinds) == 3
    for a in kinds:
        for b in kinds - {a}:
            assert not issubclass(a, b)


def test_rawframe_invariants():
    with pytest.raises(ValueError):
        RawFrame(np.zeros((1, 5), np.uint16))
    with pytest.raises(ValueError):
        RawFrame(np.zeros(4, np.uint16))


@settings(max_examples=30, deadline=None)
@given(arrays(np.uint16, st.tuples(st.integers(2, 9), st.integers(2, 9))))
def test_pgm16_round_trip_is_bit_exact(counts):
    assert np.array_equal(parse_pgm(encode_pgm(counts)), counts)


def test_export_then_load_identical(tmp_path):
    counts = np.random.default_rng(0).integers(0, 65536, (5, 7)).astype(np.uint16)
    export_frame(RawFrame(counts), tmp_path / "a.pgm")
    assert np.array_equal(load_raw_frame(tmp_path / "a.pgm").counts, counts)


def test_sequence_ordering(tmp_path):
    for name in ["f002.pgm", "f000.pgm", "f001.pgm"]:
        (tmp_path / name).write_bytes(_pgm(2, 2, 65535, [int(name[3])] * 4))
    seq = load_sequence(tmp_path)
    assert len(seq) == 3
    assert [f.frame_index for f in seq] == [0, 1, 2]
    assert [int(f.counts[0, 0]) for f in seq] == [0, 1, 2]


def test_sequence_dimension_mismatch(tmp_path):
    (tmp_path / "a.pgm").write_bytes(_pgm(2, 2, 65535, [0] * 4))
    (tmp_path / "b.pgm").write_bytes(_pgm(3, 3, 65535, [0] * 9))
    with pytest.raises(SequenceError, match="dimension mismatch"):
        load_sequence(tmp_path)


def test_sequence_no_frames(tmp_path):
    with pytest.raises(SequenceError, match="no frames"):
        load_sequence(tmp_path)


def test_endpoint_and_midpoint_quantization(tmp_path):
    export_frame(np.ones((2, 2)), tmp_path / "one.png", "png8")
    assert np.array(Image.open(tmp_path / "one.png")).ravel().tolist() == [255] * 4
    export_frame(np.full((2, 2), 0.5), tmp_path / "half.png", "png16")
    assert np.array(Image.open(tmp_path / "half.png")).ravel().tolist() == [32768] * 4
    export_frame(np.full((2, 2), 0.5), tmp_path / "half.pgm", "pgm16")
    assert load_raw_frame(tmp_path / "half.pgm").counts.ravel().tolist() == [32768] * 4


def test_nan_rejected(tmp_path):
    x = np.zeros((2, 2))
    x[0, 1] = np.nan
    with pytest.raises(ValueError, match="NaN"):
        export_frame(x, tmp_path / "n.png", "png16")
    assert not (tmp_path / "n.png").exists()


def test_out_of_range_rejected():
    with pytest.raises(ValueError):
        quantize(np.array([1.5]), 8)


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        export_frame(np.zeros((2, 2)), tmp_path / "missing" / "x.pgm")


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(0, 1)), st.sampled_from(["png8", "png16", "pgm16"]))
def test_quantization_error_bound(tmp_path_factory, values, fmt):
    p = tmp_path_factory.mktemp("q") / ("x.png" if fmt != "pgm16" else "x.pgm")
    export_frame(values, p, fmt)
    bits = 8 if fmt == "png8" else 16
    assert np.max(np.abs(load_image(p) - values)) <= 0.5 / (2 ** bits - 1) + 1e-15


def test_histogram_csv(tmp_path):
    px = np.array([[1000, 1000, 1000, 1000], [1000, 1000, 1400, 1600]], np.uint16)
    export_histogram_csv(build_histogram([px], 3), tmp_path / "h.csv")
    header = (tmp_path / "h.csv").read_text().splitlines()[0]
    assert header == "bin_start,bin_end,count,alpha,offset"
    rows = read_histogram_csv(tmp_path / "h.csv")
    assert len(rows) == 3
    assert abs(sum(r["alpha"] for r in rows) - 1.0) <= 1e-12
    assert rows[1]["count"] == 0 and rows[1]["alpha"] == 0.0


def test_heatmap_is_rgb_with_fixed_ramp(tmp_path):
    assert HEATMAP_LUT.shape == (256, 3)
    export_heatmap(np.linspace(0, 1, 16).reshape(4, 4), tmp_path / "h.png")
    img = np.array(Image.open(tmp_path / "h.png"))
    assert img.shape == (4, 4, 3)
    assert img[0, 0].tolist() == HEATMAP_LUT[0].tolist()
    assert img[-1, -1].tolist() == HEATMAP_LUT[255].tolist()


def test_depth_maps_round_trip(tmp_path):
    d = np.random.default_rng(1).uniform(1, 10, (4, 5))
    export_depth_map(d, tmp_path / "d.npy")
    assert np.array_equal(load_depth_map(tmp_path / "d.npy"), d)
    export_depth_map(d, tmp_path / "d.pgm")
    assert np.max(np.abs(load_depth_map(tmp_path / "d.pgm") - d)) <= 0.0005 + 1e-12
