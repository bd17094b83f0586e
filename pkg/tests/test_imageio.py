import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gibbs_tv.imageio import (
    PgmError,
    PgmImage,
    decode_pgm,
    encode_pgm,
    read_observation,
    read_pgm,
    write_observation,
    write_pgm,
)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.data())
def test_round_trip_bytes(w, h, data):
    raw = np.array(data.draw(st.lists(st.integers(0, 255), min_size=w * h, max_size=w * h)), dtype=np.uint8)
    img = PgmImage.from_bytes(w, h, raw)
    again = decode_pgm(encode_pgm(img))
    assert (again.width, again.height) == (w, h)
    np.testing.assert_array_equal(again.to_bytes(), raw)


def test_file_round_trip(tmp_path):
    img = PgmImage(3, 2, [0, 0.2, 0.4, 0.6, 0.8, 1.0])
    write_pgm(img, tmp_path / "a.pgm")
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n3 2\n255\n")
    np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm").to_bytes(), img.to_bytes())


def test_ascii_and_comments():
    img = decode_pgm(b"P2\n# a comment\n2 2 # trailing\n4\n0 1\n2 4\n")
    np.testing.assert_allclose(img.pixels, [0, 0.25, 0.5, 1])


def test_sixteen_bit():
    data = b"P5 2 1 1000\n" + np.array([0, 1000], dtype=">u2").tobytes()
    np.testing.assert_allclose(decode_pgm(data).pixels, [0, 1])


@pytest.mark.parametrize(
    "data,offset",
    [
        (b"P6\n1 1\n255\n\x00", 0),
        (b"P5\n2 x\n255\n", 5),
        (b"P5\n2 2\n255\n\x00\x00", 13),
        (b"P2\n1 1\n3\n7\n", 9),
        (b"P5\n1 1\n70000\n\x00", 7),
        (b"P5\n0 1\n255\n", 3),
        (b"P5\n2 1\n100\n\x05\xff", 12),
    ],
)
def test_parse_errors_report_offset(data, offset):
    with pytest.raises(PgmError) as err:
        decode_pgm(data)
    assert err.value.offset == offset
    assert f"byte offset {offset}" in str(err.value)


def test_pixel_range_enforced():
    with pytest.raises(ValueError):
        PgmImage(1, 1, [1.5])


def test_observation_round_trip(tmp_path):
    y = np.array([-0.3, 0.5, 1.7, 1e-300])
    write_observation(y, tmp_path / "o.y", 2, 2, sigma=0.4)
    header, back = read_observation(tmp_path / "o.y")
    np.testing.assert_array_equal(back, y)
    assert header["width"] == 2 and header["sigma"] == 0.4 and header["dtype"] == "<f8"
    (tmp_path / "bad.y").write_bytes(b'{"format": "other"}\n')
    with pytest.raises(ValueError):
        read_observation(tmp_path / "bad.y")
