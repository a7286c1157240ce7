import os
from collections import OrderedDict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from csipoint.errors import ParseError
from csipoint.numerics import checkpoint

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 4)), elements=finite),
       arrays(np.float64, st.integers(1, 5), elements=finite))
def test_round_trip_is_exact_and_stable(a, b):
    state = OrderedDict([("layer.weight", a), ("layer.bias", b)])
    text = checkpoint.dumps(state)
    back = checkpoint.loads(text)
    assert list(back) == ["layer.weight", "layer.bias"]
    assert np.array_equal(back["layer.weight"], a) and np.array_equal(back["layer.bias"], b)
    assert checkpoint.dumps(back) == text


def test_scalar_entry_round_trip():
    back = checkpoint.loads(checkpoint.dumps({"s": np.array(2.5)}))
    assert back["s"].shape == () and back["s"] == 2.5


@pytest.mark.parametrize("text, line", [
    ("wrong-magic 1\n", 1),
    ("csipoint-checkpoint 1\nw 2 2\n1.0 2.0\n", 2),
    ("csipoint-checkpoint 1\nw 2 2 2\n1.0 2.0 3.0\n", 3),
    ("csipoint-checkpoint 1\nw 1 2\n1.0 x\n", 3),
    ("csipoint-checkpoint 1\nw 1 2\n", 3),
])
def test_malformed_files_report_line(text, line):
    with pytest.raises(ParseError) as err:
        checkpoint.loads(text)
    assert err.value.lineno == line


def test_save_is_atomic_and_hash_tracks_content(tmp_path):
    path = tmp_path / "m.ckpt"
    state = {"w": np.arange(3.0)}
    checkpoint.save(state, path)
    assert [p.name for p in tmp_path.iterdir()] == ["m.ckpt"]
    assert checkpoint.state_hash(checkpoint.load(path)) == checkpoint.state_hash(state)
    assert checkpoint.state_hash({"w": np.arange(3.0) + 1e-16 + 1}) != checkpoint.state_hash(state)


def test_failed_write_leaves_no_file(tmp_path):
    with pytest.raises(TypeError):
        checkpoint.atomic_write_text(tmp_path / "x.txt", 5)
    assert os.listdir(tmp_path) == []
