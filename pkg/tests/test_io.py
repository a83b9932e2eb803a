import logging
import os

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from easycore.core.io import file_digest, format_cell, read_rows, read_table, read_yaml, write_rows, write_yaml
from easycore.core.random import SUBSYSTEMS, derive_seed, fisher_yates, generator, uniform_ball
from easycore.core.runlog import configure_logging, resolve_log_path
from easycore.errors import ValidationError


# -- io ------------------------------------------------------------------------

@pytest.mark.parametrize("value,text", [
    (True, "1"), (False, "0"), (0.1, "0.1"), (1e-17, "1e-17"), (3, "3"), (np.float64(2.5), "2.5"), (np.int64(7), "7"),
    ("a", "a"),
])
def test_format_cell(value, text):
    assert format_cell(value) == text


def test_floats_survive_a_table_round_trip(tmp_path):
    values = generator(0, "test").standard_normal(50)
    path = write_rows(str(tmp_path / "sub" / "t.csv"), ["i", "v"], ([i, v] for i, v in enumerate(values)))
    cols = read_table(path, ["v"])
    assert_array_equal([float(v) for v in cols["v"]], values)


def test_read_table_errors(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValidationError):
        read_table(str(path), ["c"])
    path.write_text("a,b\n1\n")
    with pytest.raises(ValidationError):
        read_table(str(path), ["a"])
    path.write_text("")
    with pytest.raises(ValidationError):
        read_rows(str(path))
    with pytest.raises(ValidationError):
        read_rows(str(tmp_path / "missing.csv"))


def test_blank_lines_are_skipped(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a\n\n1\n \n2\n")
    header, rows = read_rows(str(path))
    assert header == ["a"] and rows == [["1"], ["2"]]


def test_yaml_round_trip(tmp_path):
    data = {"run_id": "score-abc", "outputs": ["a.csv"], "nested": {"x": 1.5}}
    path = write_yaml(str(tmp_path / "m.yaml"), data)
    assert read_yaml(path) == data
    (tmp_path / "empty.yaml").write_text("")
    assert read_yaml(str(tmp_path / "empty.yaml")) == {}


def test_file_digest(tmp_path):
    path = tmp_path / "f.bin"
    path.write_bytes(b"abc")
    assert file_digest(str(path)) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


# -- random ----------------------------------------------------------------------

def test_derive_seed_is_stable_and_separates_subsystems():
    keys = {derive_seed(0, s) for s in SUBSYSTEMS}
    assert len(keys) == len(SUBSYSTEMS)
    assert derive_seed(5, "data") == derive_seed(5, "data")
    assert derive_seed(5, "data") != derive_seed(6, "data")
    assert all(0 <= k < 2 ** 64 for k in keys)


def test_generator_streams_are_reproducible():
    assert_array_equal(generator(3, "init").random(5), generator(3, "init").random(5))
    assert not np.array_equal(generator(3, "init").random(5), generator(3, "shuffle").random(5))


def test_fisher_yates_is_a_permutation():
    perm = fisher_yates(100, generator(1, "shuffle"))
    assert sorted(perm.tolist()) == list(range(100))
    assert_array_equal(perm, fisher_yates(100, generator(1, "shuffle")))
    assert_array_equal(fisher_yates(1, generator(1, "shuffle")), [0])
    assert len(fisher_yates(0, generator(1, "shuffle"))) == 0


def test_fisher_yates_positions_are_roughly_uniform():
    counts = np.zeros((4, 4))
    rng = generator(2, "shuffle")
    for _ in range(4000):
        perm = fisher_yates(4, rng)
        counts[np.arange(4), perm] += 1
    assert np.all(np.abs(counts / 4000 - 0.25) < 0.04)


def test_uniform_ball():
    center = np.array([[1.0, -1.0], [0.0, 2.0]])
    draw = uniform_ball(generator(0, "attack-start"), center, 0.3)
    assert np.all(np.abs(draw - center) <= 0.3)
    assert_array_equal(uniform_ball(generator(0, "attack-start"), center, 0), center)


# -- run log ---------------------------------------------------------------------

@pytest.mark.parametrize("path,name,expected", [
    (None, None, os.path.join("runs", "easycore.log")),
    ("", "  ", os.path.join("runs", "easycore.log")),
    ("logs", "score", os.path.join("logs", "score.log")),
    (None, "run.LOG", os.path.join("runs", "run.LOG")),
])
def test_resolve_log_path(path, name, expected):
    assert resolve_log_path(path, name, "runs") == expected


def test_configure_logging_replaces_its_handlers(tmp_path):
    log_path = str(tmp_path / "logs" / "run.log")
    root = configure_logging(logging.INFO, log_path)
    configure_logging(logging.INFO, log_path)
    ours = [h for h in root.handlers if getattr(h, "_easycore", False)]
    assert len(ours) == 2
    logging.getLogger("easycore.test").info("hello")
    for handler in ours:
        handler.flush()
    assert "[easycore.test] hello" in open(log_path).read()
    configure_logging(logging.WARNING)
    assert len([h for h in root.handlers if getattr(h, "_easycore", False)]) == 1
