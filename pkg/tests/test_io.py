import numpy as np
import pytest

from acontrario import io
from acontrario.detect import Detection


def test_pgm_roundtrip_16bit(tmp_path):
    img = np.random.default_rng(0).integers(0, 65535, (17, 23)).astype(float)
    io.write_pgm(tmp_path / "a.pgm", img)
    np.testing.assert_array_equal(io.read_pgm(tmp_path / "a.pgm"), img)


def test_pgm_8bit_with_comment(tmp_path):
    data = bytes(range(12))
    (tmp_path / "b.pgm").write_bytes(b"P5\n# made by hand\n4 3\n# max\n255\n" + data)
    np.testing.assert_array_equal(io.read_pgm(tmp_path / "b.pgm"), np.arange(12).reshape(3, 4))


@pytest.mark.parametrize("content", [b"P2\n1 1\n255\n0", b"P5\n4 4\n255\n" + bytes(3), b"P5\n4"])
def test_pgm_errors(tmp_path, content):
    (tmp_path / "c.pgm").write_bytes(content)
    with pytest.raises(io.FormatError):
        io.read_pgm(tmp_path / "c.pgm")


def test_detection_csv_roundtrip(tmp_path):
    d = Detection(1.23456, 7.5, 1, 8, 1.5e-7, np.log(1.5e-7), 6.0, 2.75, 2, 3.0)
    io.write_detections(tmp_path / "d.csv", [(0, d), (3, d)])
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "frame,x,y,nfa,r_opt,pass,scale_r"
    assert lines[1] == "0,1.2346,7.5000,1.500000e-07,2.75,afterHiding,3"
    frames, xy = io.read_points(tmp_path / "d.csv")
    assert frames.tolist() == [0, 3]
    np.testing.assert_allclose(xy, [[1.2346, 7.5]] * 2)


def test_truth_rows(tmp_path):
    io.write_detections(tmp_path / "t.csv", [(0, 1.0, 2.0)])
    assert (tmp_path / "t.csv").read_text().splitlines()[1] == "0,1.0000,2.0000,,,,"


def test_malformed_row_reports_line(tmp_path):
    (tmp_path / "e.csv").write_text("frame,x,y\n0,1,2\n1,abc,3\n")
    with pytest.raises(io.FormatError) as exc:
        io.read_points(tmp_path / "e.csv")
    assert exc.value.line == 3
    assert ":3:" in str(exc.value)


def test_missing_column(tmp_path):
    (tmp_path / "f.csv").write_text("frame,x\n0,1\n")
    with pytest.raises(io.FormatError):
        io.read_points(tmp_path / "f.csv")


def test_points_by_frame():
    frames = np.array([2, 0, 2])
    xy = np.array([[1.0, 1], [2, 2], [3, 3]])
    per = io.points_by_frame(frames, xy, 4)
    assert [len(p) for p in per] == [1, 0, 2, 0]


def test_tracks_roundtrip(tmp_path):
    tracks = [(np.array([3, 4, 5]), np.array([[1.0, 2], [2, 3], [3, 4]])), (np.array([0]), np.array([[9.0, 9]]))]
    io.write_tracks(tmp_path / "t.csv", tracks)
    back = io.read_tracks(tmp_path / "t.csv")
    for (f1, x1), (f2, x2) in zip(tracks, back):
        np.testing.assert_array_equal(f1, f2)
        np.testing.assert_allclose(x1, x2)


def test_track_duplicate_frame(tmp_path):
    (tmp_path / "t.csv").write_text("track_id,frame,x,y\n0,1,0,0\n0,1,1,1\n")
    with pytest.raises(io.FormatError):
        io.read_tracks(tmp_path / "t.csv")


def test_keyvalue_roundtrip(tmp_path):
    io.write_keyvalue(tmp_path / "k.txt", {"a": 1, "radii": "2,3"}, comment="hello")
    assert io.read_keyvalue(tmp_path / "k.txt") == {"a": "1", "radii": "2,3"}
    (tmp_path / "bad.txt").write_text("novalue\n")
    with pytest.raises(io.FormatError):
        io.read_keyvalue(tmp_path / "bad.txt")


def test_svg_is_plain(tmp_path):
    io.write_froc_svg(tmp_path / "f.svg", {"run": [(0.0, 0.5), (0.01, 0.9), (0.05, 1.0)]})
    text = (tmp_path / "f.svg").read_text()
    assert text.count("<path") == 2 and 'version="1.1"' in text
    assert "href" not in text
