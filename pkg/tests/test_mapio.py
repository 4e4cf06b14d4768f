import numpy as np
import pytest

from cestden.mapio import (
    read_map_csv,
    read_pgm,
    write_map_csv,
    write_mask_pgm,
    write_pgm,
)


class TestWritePgm:
    def test_exact_bytes_for_known_map(self, tmp_path):
        m = np.array([[0.0, 0.5, 1.0], [0.25, 0.75, 1.0]])
        path = tmp_path / "m.pgm"
        window = write_pgm(m, path)
        assert window == (0.0, 1.0)
        blob = path.read_bytes()
        assert blob == b"P5\n3 2\n255\n" + bytes([0, 128, 255, 64, 191, 255])

    def test_explicit_window_clips(self, tmp_path):
        m = np.array([[-1.0, 0.5, 2.0]])
        path = tmp_path / "m.pgm"
        window = write_pgm(m, path, window=(0.0, 1.0))
        assert window == (0.0, 1.0)
        assert read_pgm(path).tolist() == [[0, 128, 255]]

    def test_degenerate_window_writes_zeros(self, tmp_path):
        m = np.full((4, 5), 2.5)
        path = tmp_path / "m.pgm"
        assert write_pgm(m, path) == (2.5, 2.5)
        assert np.array_equal(read_pgm(path), np.zeros((4, 5), dtype=np.uint8))

    def test_round_trip_shape(self, tmp_path):
        rng = np.random.default_rng(0)
        m = rng.uniform(size=(7, 3))
        path = tmp_path / "m.pgm"
        write_pgm(m, path)
        assert read_pgm(path).shape == (7, 3)

    def test_rejects_bad_input(self, tmp_path):
        path = tmp_path / "m.pgm"
        with pytest.raises(ValueError, match="2-D"):
            write_pgm(np.zeros(5), path)
        bad = np.zeros((3, 3))
        bad[1, 1] = np.inf
        with pytest.raises(ValueError, match="non-finite"):
            write_pgm(bad, path)
        with pytest.raises(ValueError, match="window"):
            write_pgm(np.zeros((3, 3)), path, window=(1.0, 0.0))
        with pytest.raises(ValueError, match="window"):
            write_pgm(np.zeros((3, 3)), path, window=(0.0, np.nan))


class TestMaskPgm:
    def test_true_maps_to_255(self, tmp_path):
        mask = np.array([[True, False], [False, True]])
        path = tmp_path / "mask.pgm"
        write_mask_pgm(mask, path)
        assert read_pgm(path).tolist() == [[255, 0], [0, 255]]

    def test_rejects_non_boolean(self, tmp_path):
        with pytest.raises(ValueError, match="boolean"):
            write_mask_pgm(np.zeros((2, 2)), tmp_path / "x.pgm")


class TestReadPgm:
    def test_parses_header_comments(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n2 # trailing\n2\n255\n" + bytes(4))
        assert read_pgm(path).shape == (2, 2)

    def test_rejects_wrong_magic(self, tmp_path):
        path = tmp_path / "x.pgm"
        path.write_bytes(b"P2\n1 1\n255\n0")
        with pytest.raises(ValueError, match="not a binary PGM"):
            read_pgm(path)

    def test_rejects_truncated_header(self, tmp_path):
        path = tmp_path / "x.pgm"
        path.write_bytes(b"P5\n3 2\n")
        with pytest.raises(ValueError, match="truncated PGM header"):
            read_pgm(path)

    def test_rejects_truncated_payload(self, tmp_path):
        path = tmp_path / "x.pgm"
        path.write_bytes(b"P5\n3 2\n255\n\x00\x00")
        with pytest.raises(ValueError, match="truncated PGM payload"):
            read_pgm(path)

    def test_rejects_unsupported_maxval(self, tmp_path):
        path = tmp_path / "x.pgm"
        path.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(ValueError, match="maxval"):
            read_pgm(path)


class TestMapCsv:
    def test_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        m = rng.normal(size=(6, 9)) * np.logspace(-12, 12, 9)
        m[0, 0] = -0.0
        path = tmp_path / "m.csv"
        write_map_csv(m, path)
        back = read_map_csv(path)
        assert back.dtype == np.float64
        assert np.array_equal(back, m)
        assert np.signbit(back[0, 0])

    def test_one_line_per_row(self, tmp_path):
        path = tmp_path / "m.csv"
        write_map_csv(np.zeros((4, 2)), path)
        text = path.read_text()
        assert text.count("\n") == 4
        assert text.splitlines() == ["0,0"] * 4

    def test_rewrite_is_bit_identical(self, tmp_path):
        rng = np.random.default_rng(2)
        m = rng.uniform(size=(5, 5))
        p1 = tmp_path / "a.csv"
        p2 = tmp_path / "b.csv"
        write_map_csv(m, p1)
        write_map_csv(read_map_csv(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_rejects_non_2d(self, tmp_path):
        with pytest.raises(ValueError, match="2-D"):
            write_map_csv(np.zeros(3), tmp_path / "x.csv")

    def test_read_rejects_empty(self, tmp_path):
        path = tmp_path / "e.csv"
        path.write_text("")
        with pytest.raises(ValueError, match="empty"):
            read_map_csv(path)

    def test_read_rejects_ragged(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("1,2\n3\n")
        with pytest.raises(ValueError, match="ragged"):
            read_map_csv(path)
