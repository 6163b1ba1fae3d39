import math

import numpy as np
import pytest

from convexbilliards import body_from_config, law_from_config
from convexbilliards.geometry import CurvatureTable, Disc, Ellipse
from convexbilliards.rng import CHUNK, chunk_streams, stream, substream


# ---------------------------------------------------------------------------
# counter-based streams
# ---------------------------------------------------------------------------

def test_stream_reproducible_and_keyed():
    a1 = stream(42, 3).random(8)
    a2 = stream(42, 3).random(8)
    b = stream(42, 4).random(8)
    c = stream(43, 3).random(8)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b)
    assert not np.array_equal(a1, c)


def test_substream_namespacing():
    x = substream(7, "alpha", 0).random(4)
    y = substream(7, "beta", 0).random(4)
    z = substream(7, "alpha", 0).random(4)
    assert np.array_equal(x, z)
    assert not np.array_equal(x, y)


def test_stream_rejects_negative_seed():
    with pytest.raises(ValueError):
        stream(-1)


def test_chunk_partition_covers_range():
    chunks = chunk_streams(5, "work", 2 * CHUNK + 17)
    spans = [(lo, hi) for lo, hi, _ in chunks]
    assert spans[0][0] == 0
    assert spans[-1][1] == 2 * CHUNK + 17
    for (l1, h1), (l2, h2) in zip(spans, spans[1:]):
        assert h1 == l2
    assert all(hi - lo <= CHUNK for lo, hi in spans)


# ---------------------------------------------------------------------------
# config loaders
# ---------------------------------------------------------------------------

def test_body_from_config_variants(tmp_path):
    assert isinstance(body_from_config({"disc": {"r": 2.0}}), Disc)
    assert isinstance(body_from_config({"ellipse": {"a": 2.0, "b": 1.0}}),
                      Ellipse)
    e = Ellipse(2.0, 1.0)
    s = np.linspace(0.0, e.perimeter, 513)[:-1]
    rows = np.stack([s, np.asarray(e.curvature_at(s))], axis=1)
    path = tmp_path / "curve.csv"
    np.savetxt(path, rows, delimiter=",")
    body = body_from_config({"curvature_table": {"path": str(path)}})
    assert isinstance(body, CurvatureTable)
    assert abs(body.perimeter - e.perimeter) < 1e-5 * e.perimeter


def test_body_from_config_rejects_unknown():
    with pytest.raises(ValueError):
        body_from_config({"square": {"side": 1.0}})
    with pytest.raises(ValueError):
        body_from_config({"disc": {"r": 1.0}, "ellipse": {"a": 2, "b": 1}})


def test_law_from_config_variants(tmp_path):
    assert law_from_config("cosine").kind == "cosine"
    assert law_from_config("uniform_half").kind == "uniform_half"
    law = law_from_config({"truncated_uniform": {"theta_star": 2.0}})
    assert law.support_width == 2.0
    angles = np.linspace(-1.2, 1.2, 49)
    rows = np.stack([angles, 1.0 + 0.2 * np.cos(2 * angles)], axis=1)
    path = tmp_path / "density.csv"
    np.savetxt(path, rows, delimiter=",")
    table = law_from_config({"table": {"path": str(path)}})
    assert table.kind == "table"
    assert abs(table.mass_check() - 1.0) < 1e-8


def test_law_from_config_rejects_unknown():
    with pytest.raises(ValueError):
        law_from_config("bogus")
    with pytest.raises(ValueError):
        law_from_config({"truncated_uniform": {"theta_star": 1.0},
                         "extra": {}})
