import numpy as np
import pytest

from roughpme.io import digest, dump_field, load_field, read_field_csv, write_dat, write_field_csv
from roughpme.torus import TorusGrid


@pytest.mark.parametrize("dim,n", [(1, 64), (2, 16)])
def test_binary_roundtrip_bit_exact(tmp_path, dim, n):
    g = TorusGrid(dim, n)
    f = g.field(np.random.default_rng(0).standard_normal(g.shape))
    dump_field(tmp_path / "f.bin", f)
    h = load_field(tmp_path / "f.bin")
    assert h.grid == g
    assert np.array_equal(h.values, f.values)


def test_binary_header_layout(tmp_path):
    g = TorusGrid(2, 8)
    vals = np.arange(64, dtype=float).reshape(8, 8)
    dump_field(tmp_path / "f.bin", g.field(vals))
    raw = (tmp_path / "f.bin").read_bytes()
    assert raw[:4] == b"RPME"
    body = np.frombuffer(raw[16:], dtype="<f8")
    np.testing.assert_array_equal(body[:8], vals[:, 0])  # column-major


def test_binary_rejects_corruption(tmp_path):
    g = TorusGrid(1, 16)
    dump_field(tmp_path / "f.bin", g.field(np.ones(16)))
    raw = (tmp_path / "f.bin").read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError, match="magic"):
        load_field(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="expected"):
        load_field(tmp_path / "short.bin")


@pytest.mark.parametrize("dim,n", [(1, 32), (2, 8)])
def test_csv_roundtrip(tmp_path, dim, n):
    g = TorusGrid(dim, n)
    f = g.field(np.random.default_rng(1).standard_normal(g.shape))
    write_field_csv(tmp_path / "f.csv", f)
    assert np.array_equal(read_field_csv(tmp_path / "f.csv").values, f.values)


def test_digest_sensitivity(tmp_path):
    a = np.arange(6.0)
    assert digest(a) == digest(a.copy())
    assert digest(a) != digest(a.reshape(2, 3))
    b = a.copy()
    b[3] = np.nextafter(b[3], 10)
    assert digest(a) != digest(b)
    write_dat(tmp_path / "s.dat", [1, 2], [3, 4], "x y")
    assert (tmp_path / "s.dat").read_text().splitlines()[0] == "# x y"
