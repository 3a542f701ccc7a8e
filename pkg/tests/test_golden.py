"""Byte-stability of the augmentation pipelines against committed PNGs."""

import pathlib

import numpy as np
import pytest
from PIL import Image

from golden_common import GOLDEN_CASES, golden_source, quantize

FIXTURES = pathlib.Path(__file__).resolve().parent / "fixtures"


def load(name):
    path = FIXTURES / f"{name}.png"
    if not path.exists():
        pytest.fail(f"missing golden fixture {path}; run tests/fixtures/regen_goldens.py")
    return np.asarray(Image.open(path).convert("RGB"))


def test_source_image_stable():
    np.testing.assert_array_equal(quantize(golden_source()), load("golden_source"))


def test_view_pairs_match_goldens():
    img = golden_source()
    for name, pair in GOLDEN_CASES(img):
        np.testing.assert_array_equal(quantize(pair.query_view), load(f"{name}_query"),
                                      err_msg=f"{name} query view drifted")
        np.testing.assert_array_equal(quantize(pair.key_view), load(f"{name}_key"),
                                      err_msg=f"{name} key view drifted")
