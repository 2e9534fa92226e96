import csv

import numpy as np
import pytest

from eventvlc.codes import barker, extended_codebook, inverting_codebook, wh_transform_decode
from eventvlc.errors import InvalidArgument
from eventvlc.transmitter import (TxConfig, build_session, nominal_data_rate, per_led_rate, presence_update_rate,
                                  random_payload, spread_info)


def test_spread_info_examples():
    assert list(spread_info((1, False), extended_codebook(2))) == [1, -1]
    book = extended_codebook(16)
    np.testing.assert_array_equal(spread_info((5, True), book), -spread_info((5, False), book))
    with pytest.raises(InvalidArgument):
        spread_info((2, False), inverting_codebook(16))
    with pytest.raises(InvalidArgument):
        spread_info(16, inverting_codebook(16))


def test_inverting_book_chips_flip_in_pairs():
    for cw in inverting_codebook(16):
        c = cw.as_array()
        assert np.all(c[1::2] == -c[0::2])


def test_spread_round_trip():
    book = inverting_codebook(16)
    for cw in book:
        assert wh_transform_decode(spread_info(cw.id, book), book)[0] == cw.id


def test_single_frame_session_layout():
    tx = TxConfig()
    s = build_session(tx, [[0]] * tx.n_clusters)
    assert s.chips.shape == (16, 13 + 32)
    np.testing.assert_array_equal(s.chips[:, :13], np.tile(barker(13).as_array(), (16, 1)))
    assert set(np.unique(s.chips)) <= {-1, 1}


def test_pilots_of_distinct_clusters_orthogonal():
    tx = TxConfig()
    s = build_session(tx, random_payload(tx, 3, np.random.default_rng(0)))
    pil = s.chips[:, 13 : 13 + tx.pilot_len].astype(int)
    rows = [cw.row for cw in tx.pilots()]
    g = pil @ pil.T
    for i in range(16):
        for j in range(16):
            if i == j:
                assert g[i, j] == 16
            elif rows[i] != rows[j]:
                assert g[i, j] == 0
            else:  # a row and its inversion
                assert g[i, j] == -16


def test_session_carries_payload():
    tx = TxConfig()
    pay = random_payload(tx, 5, np.random.default_rng(1))
    s = build_session(tx, pay)
    info = tx.info_book()
    for f in range(5):
        seg = s.chips[:, 13 + f * 32 + 16 : 13 + (f + 1) * 32]
        for k in range(16):
            np.testing.assert_array_equal(seg[k], info[pay[k][f]].as_array())
    assert s.n_chips == 13 + 32 * 5
    assert s.frame_start(2) == pytest.approx(13e-4 + 2 * 3.2e-3)


def test_mismatched_frame_counts_rejected():
    tx = TxConfig(n_clusters=2)
    with pytest.raises(InvalidArgument):
        build_session(tx, [[0, 1], [0]])
    with pytest.raises(InvalidArgument):
        build_session(tx, [[0]])


def test_config_validation():
    with pytest.raises(InvalidArgument):
        TxConfig(blink_rate=0)
    with pytest.raises(InvalidArgument):
        TxConfig(n_clusters=17)
    with pytest.raises(InvalidArgument):
        TxConfig(pilot_len=16, info_len=8)


def test_rate_accounting():
    tx = TxConfig()
    assert tx.frame_period == pytest.approx(3.2e-3)
    assert presence_update_rate(tx) == pytest.approx(312.5)
    assert nominal_data_rate(tx, 5)[0] == pytest.approx(25_000)
    assert nominal_data_rate(TxConfig(n_clusters=1), 1)[0] == pytest.approx(312.5)
    assert per_led_rate(27_000, 96) == pytest.approx(281.25)
    with pytest.raises(InvalidArgument):
        nominal_data_rate(tx, 0)


def test_chip_trace(tmp_path):
    tx = TxConfig(n_clusters=2)
    s = build_session(tx, [[0], [1]], start_time=0.001)
    path = tmp_path / "chips.csv"
    s.write_chip_trace(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["time_us", "cluster_id", "chip"]
    assert len(rows) == 1 + 2 * s.n_chips
    assert rows[1] == ["1000", "0", "1"] and rows[3] == ["1100", "0", "1"]
