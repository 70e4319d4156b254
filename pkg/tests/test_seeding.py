"""
Pruebas de los flujos aleatorios
"""

import numpy as np
import pytest

from utils.seeding import STREAMS, RngStreams, stream_id


def test_same_keys_give_same_numbers():
    streams = RngStreams(3)
    a = streams.generator('sampling', 4, 1).random(5)
    b = RngStreams(3).generator('sampling', 4, 1).random(5)
    np.testing.assert_array_equal(a, b)


def test_streams_are_independent():
    streams = RngStreams(3)
    draws = {name: streams.generator(name, 0).random(4) for name in STREAMS}
    values = [tuple(v) for v in draws.values()]
    assert len(set(values)) == len(STREAMS)
    assert not np.array_equal(streams.generator('sampling', 0).random(4),
                              streams.generator('sampling', 1).random(4))


def test_seed_changes_every_stream():
    assert not np.array_equal(RngStreams(0).generator('member').random(3),
                              RngStreams(1).generator('member').random(3))


def test_stream_id_is_stable():
    assert stream_id('sampling') == stream_id('sampling')
    assert len({stream_id(name) for name in STREAMS}) == len(STREAMS)


def test_invalid_arguments():
    with pytest.raises(ValueError):
        RngStreams(-1)
    with pytest.raises(ValueError):
        RngStreams(0).generator('weather')
