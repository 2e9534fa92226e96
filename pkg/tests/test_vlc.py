import numpy as np
import pytest
from hypothesis import given, strategies as st

from eventvlc.codes import extended_codebook, inverting_codebook
from eventvlc.errors import ClusterAbsent, DecodeFailure, InvalidArgument
from eventvlc.vlc import (BerReport, ber, decode_frame, decode_indices, distance_bin, integrate_all, integrate_info,
                          symbol_bits, write_ber_csv)

BOOK = inverting_codebook(16)
SIGS = BOOK.pair_signatures.astype(float)
s = SIGS[3]


def test_integrate_examples():
    np.testing.assert_array_equal(integrate_info(np.array([[1.0]]), s[None, None]), s)
    w = np.array([[0.8, 0.2]])
    seg = np.stack([s, -s])[None]
    np.testing.assert_allclose(integrate_info(w, seg, threshold=0.0), 0.6 * s)
    # With the default threshold only the 0.8 cell contributes.
    np.testing.assert_allclose(integrate_info(w, seg), 0.8 * s)


def test_integrate_needs_a_cell_above_threshold():
    with pytest.raises(ClusterAbsent):
        integrate_info(np.array([[0.5, 0.1]]), np.zeros((1, 2, 8)))
    with pytest.raises(InvalidArgument):
        integrate_info(np.ones((2, 2)), np.zeros((2, 3, 8)))


@given(seed=st.integers(0, 10_000))
def test_integrate_linear_over_disjoint_cells(seed):
    rng = np.random.default_rng(seed)
    w = rng.random((4, 5))
    seg = rng.integers(-1, 2, (4, 5, 8)).astype(float)
    part = rng.random((4, 5)) < 0.5
    w = np.where(w > 0.5, w, 0.9)  # every cell selected
    a = np.where(part, w, 0.0)
    b = np.where(part, 0.0, w)
    total = integrate_info(w, seg)
    sub = [integrate_info(x, seg) for x in (a, b) if (x > 0.5).any()]
    np.testing.assert_allclose(total, sum(sub))


def test_integrate_all_matches_per_cluster():
    rng = np.random.default_rng(2)
    w = rng.random((16, 3, 4))
    seg = rng.integers(-1, 2, (3, 4, 8)).astype(float)
    w[5] = 0.2
    out, present = integrate_all(w, seg)
    assert not present[5] and present.sum() == 15
    for k in np.flatnonzero(present):
        np.testing.assert_allclose(out[k], integrate_info(w[k], seg))


def test_decode_examples():
    d = decode_frame(s, BOOK, cluster=2, frame=7)
    assert d.symbol == BOOK[3].id and d.cluster == 2 and d.frame == 7
    assert d.margin == 8.0
    assert decode_frame(0.6 * s, BOOK).symbol == BOOK[3].id
    with pytest.raises(DecodeFailure):
        decode_frame(np.zeros(8), BOOK)
    with pytest.raises(InvalidArgument):
        decode_frame(np.ones(7), BOOK)


@given(idx=st.integers(0, 15), c=st.floats(1e-3, 1e3), seed=st.integers(0, 1000))
def test_decode_scale_invariant(idx, c, seed):
    rng = np.random.default_rng(seed)
    I = SIGS[idx] + rng.normal(0, 0.5, 8)
    assert decode_frame(c * I, BOOK).symbol == decode_frame(I, BOOK).symbol


@given(seed=st.integers(0, 10_000))
def test_vectorised_decode_matches_scalar(seed):
    rng = np.random.default_rng(seed)
    I = rng.integers(-2, 3, (20, 8)).astype(float)
    I[0] = 0
    idx = decode_indices(I, BOOK)
    assert idx[0] == -1
    for row, k in zip(I[1:], idx[1:]):
        if row.any():
            assert BOOK[int(k)].id == decode_frame(row, BOOK).symbol


def test_symbol_bits():
    np.testing.assert_array_equal(symbol_bits(5, 4), [0, 1, 0, 1])
    np.testing.assert_array_equal(symbol_bits([0, 15], 4), [[0, 0, 0, 0], [1, 1, 1, 1]])


def test_ber_examples():
    ref = np.arange(1000) % 32
    dist = np.full(1000, 35.0)
    assert ber(ref, ref, dist, 5).ber == 0.0
    bad = ref.copy()
    bad[10] = 31 - ref[10]  # every bit flipped
    r = ber(bad, ref, dist, 5, speed=8.3)
    assert r.bins == {3: (5, 5000)}
    assert r.ber <= 5 / 5000
    with pytest.raises(InvalidArgument):
        ber(ref[:10], ref, dist, 5)


def test_ber_erasures_and_bins():
    ref = np.zeros((4, 2), dtype=int)
    dec = np.array([[0, -1], [0, 0], [1, 0], [0, 0]])
    dist = np.array([31.0, 39.0, 45.0, 100.2])
    r = ber(dec, ref, dist, 4, bin_range=(3, 9))
    assert r.bins == {3: (4, 16), 4: (1, 8), 9: (0, 8)}
    assert r.rows(lo=40) == [(45.0, 1, 8, 0.125), (95.0, 0, 8, 0.0)]


def test_ber_report_merge_and_csv(tmp_path):
    a = BerReport(8.3, bins={3: (1, 100)})
    b = BerReport(8.3, bins={3: (2, 100), 4: (0, 50)})
    a.add(b)
    assert a.bins == {3: (3, 200), 4: (0, 50)} and a.bits == 250
    with pytest.raises(InvalidArgument):
        a.add(BerReport(8.3, bin_width=5.0))
    path = tmp_path / "ber.csv"
    write_ber_csv(path, [a, BerReport(11.1, bins={3: (0, 10)})])
    assert path.read_text().splitlines() == [
        "bin_mid_m,speed_mps,errors,bits,ber", "35,8.3,3,200,0.015", "45,8.3,0,50,0", "35,11.1,0,10,0"]


def test_distance_bin():
    np.testing.assert_array_equal(distance_bin([29.99, 30.0, 99.9]), [2, 3, 9])
