import numpy as np
import pytest
from hypothesis import given, strategies as st

from glaste.data import to_float
from glaste.font import GLYPHS, glyph
from glaste.imageio import _read_ppm, _write_ppm, load_image, save_image
from glaste.text import ALPHABET, BLANK, UnsupportedCharacterError, collapse, decode, encode


@given(st.text(alphabet=ALPHABET, max_size=12))
def test_encode_decode(s):
    assert decode(encode(s)) == s


def test_unsupported_character():
    with pytest.raises(UnsupportedCharacterError):
        encode("Hi!")


def test_collapse():
    assert collapse([0, 0, BLANK, 0, 1, 1]) == [0, 0, 1]


def test_glyphs_distinct():
    assert set(GLYPHS) == set(ALPHABET)
    flat = {ch: g.tobytes() for ch, g in GLYPHS.items()}
    assert len(set(flat.values())) == len(ALPHABET)
    for a in ALPHABET:
        for b in ALPHABET:
            if a < b:
                assert np.abs(glyph(a) - glyph(b)).sum() >= 2


def test_png_round_trip(tmp_path, rng):
    u8 = rng.integers(0, 256, size=(3, 5, 7))
    img = to_float(u8.astype(np.uint8))
    path = save_image(tmp_path / "a.png", img)
    np.testing.assert_array_equal(load_image(path), img)


def test_ppm_fallback(tmp_path, rng):
    u8 = rng.integers(0, 256, size=(4, 6, 3)).astype(np.uint8)
    _write_ppm(tmp_path / "a.ppm", u8)
    np.testing.assert_array_equal(_read_ppm(tmp_path / "a.ppm"), u8)
