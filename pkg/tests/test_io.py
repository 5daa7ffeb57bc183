import numpy as np
import pytest

from proxyattn.core import ProxyError
from proxyattn.io import ingest_points, read_text_points, write_ply, write_xyz


def test_three_line_xyz(tmp_path):
    f = tmp_path / "p.xyz"
    f.write_text("0 0 0\n1, 2, 3\n# comment\n\n4 5 6\n")
    pc = ingest_points(f, channels=2)
    assert pc.n == 3
    np.testing.assert_array_equal(pc.positions[1], [1, 2, 3])
    np.testing.assert_array_equal(pc.features, np.zeros((3, 2)))


def test_text_features(tmp_path):
    f = tmp_path / "p.txt"
    f.write_text("0 0 0 7 8\n1 1 1 9 10\n")
    pc = ingest_points(f)
    np.testing.assert_array_equal(pc.features, [[7, 8], [9, 10]])


def test_two_column_row_names_line(tmp_path):
    f = tmp_path / "bad.xyz"
    f.write_text("0 0 0\n1 1 1\n2 2\n")
    with pytest.raises(ProxyError, match=r"bad.xyz:3:.*3 columns"):
        ingest_points(f)


def test_ragged_and_non_numeric(tmp_path):
    f = tmp_path / "r.xyz"
    f.write_text("0 0 0\n1 1 1 5\n")
    with pytest.raises(ProxyError, match=":2:"):
        ingest_points(f)
    f.write_text("0 0 x\n")
    with pytest.raises(ProxyError, match=":1:.*non-numeric"):
        ingest_points(f)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.xyz"):
        ingest_points(tmp_path / "nope.xyz")


def test_ply_roundtrip_matches_text(tmp_path):
    rng = np.random.default_rng(0)
    pos = rng.uniform(-10, 10, (100, 3))
    write_ply(tmp_path / "p.ply", pos)
    pc = ingest_points(tmp_path / "p.ply")
    assert pc.n == 100
    write_xyz(tmp_path / "p.xyz", pc.positions)
    again = read_text_points(tmp_path / "p.xyz")
    np.testing.assert_array_equal(pc.positions, pos.astype(np.float32).astype(np.float64))
    np.testing.assert_array_equal(again.positions.astype(np.float32), pc.positions.astype(np.float32))


def test_ply_features_and_foreign_layout(tmp_path):
    rec = np.zeros(4, dtype=[("red", "u1"), ("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                             ("w", "<f8")])
    rec["x"] = [1, 2, 3, 4]
    rec["red"] = [9, 8, 7, 6]
    rec["w"] = 0.5
    header = ("ply\nformat binary_little_endian 1.0\ncomment hi\nelement vertex 4\n"
              "property uchar red\nproperty float x\nproperty float y\nproperty float z\n"
              "property double w\nend_header\n")
    (tmp_path / "f.ply").write_bytes(header.encode() + rec.tobytes())
    pc = ingest_points(tmp_path / "f.ply")
    np.testing.assert_array_equal(pc.positions[:, 0], [1, 2, 3, 4])
    np.testing.assert_array_equal(pc.features, [[9, 0.5], [8, 0.5], [7, 0.5], [6, 0.5]])


@pytest.mark.parametrize("header,msg", [
    ("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n", "binary_little_endian"),
    ("ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty list uchar int i\nend_header\n", ":4:"),
    ("ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\n"
     "property float y\nproperty float z\nend_header\n", "truncated"),
    ("ply\nformat binary_little_endian 1.0\nbogus\nend_header\n", ":3:"),
])
def test_ply_errors(tmp_path, header, msg):
    (tmp_path / "e.ply").write_bytes(header.encode() + b"\0" * 12)
    with pytest.raises(ProxyError, match=msg):
        ingest_points(tmp_path / "e.ply")
