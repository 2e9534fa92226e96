import numpy as np
import pytest
from hypothesis import given, strategies as st

from eventvlc.errors import InvalidArgument
from eventvlc.ranging import (ClusterUnrangeable, PixelProbMap, RangeEstimate, aggregate, batch_subpixel,
                              fit_sinc_offset, next_pow2, pixel_prob_map, poc, poc_batch, quartiles, spacing_weight,
                              subpixel_peak, theoretical_error, triangulate, unit_spectra)
from oracles import blocky_map, dense_xcorr_shift, fourier_shift, upsampled_xcorr_peak

F, A = 0.035, 5e-6


def test_pixel_prob_map_one_hot():
    sel = np.zeros((2, 2), bool)
    sel[1, 0] = True
    scores = np.zeros((2, 2))
    scores[1, 0] = 1.0
    m = pixel_prob_map(sel, scores, (1, 1), (10, 20), (8, 8), window_origin=(8, 18), cluster=3)
    assert m.values.sum() == 1.0 and m.values[3, 2] == 1.0
    assert m.centroid() == (10.0, 21.0) and m.cluster == 3


def test_pixel_prob_map_masks_unselected_cells():
    sel = np.array([[True, False]])
    scores = np.full((2, 4), 0.9)
    m = pixel_prob_map(sel, scores, (2, 2), (0, 0), (4, 4))
    np.testing.assert_allclose(m.values[:2, :2], 0.9)
    assert m.values[:2, 2:].sum() == 0 and m.values[2:].sum() == 0


def test_pixel_prob_map_errors():
    with pytest.raises(ClusterUnrangeable):
        pixel_prob_map(np.zeros((2, 2), bool), np.ones((4, 4)), (2, 2), (0, 0), (8, 8))
    with pytest.raises(InvalidArgument):
        PixelProbMap(np.zeros((6, 8)), (0, 0))
    with pytest.raises(InvalidArgument):
        pixel_prob_map(np.ones((2, 2), bool), np.ones((4, 4)), (2, 2), (0, 0), (2, 2))


def test_next_pow2():
    assert [next_pow2(n) for n in (0, 1, 2, 3, 64, 65)] == [1, 1, 2, 4, 64, 128]


def test_poc_examples():
    rng = np.random.default_rng(0)
    a = blocky_map(rng)
    s = poc(np.roll(a, 17, axis=1), a)
    assert s.signed_peak() == (0, 17)
    assert s.peak_value == pytest.approx(1.0, abs=1e-3)
    assert poc(a, a).signed_peak() == (0, 0)
    assert np.all(np.abs(s.values) <= 1 + 1e-3)
    with pytest.raises(InvalidArgument):
        poc(np.zeros((8, 8)), a[:8, :8])
    with pytest.raises(InvalidArgument):
        poc(a, a[:32])


def test_poc_zero_padded_shift_matches_dense_oracle():
    rng = np.random.default_rng(3)
    small = (rng.random((10, 6)) < 0.6).astype(float)
    a = np.zeros((32, 32))
    b = np.zeros((32, 32))
    a[2:12, 4:10] = small
    b[15:25, 4:10] = small
    assert dense_xcorr_shift(b, a) == (13, 0)
    assert poc(b, a).signed_peak() == (13, 0)


@given(dy=st.integers(-16, 16), dx=st.integers(-16, 16), seed=st.integers(0, 10_000))
def test_poc_shift_theorem(dy, dx, seed):
    a = blocky_map(np.random.default_rng(seed))
    s = poc(np.roll(a, (dy, dx), axis=(0, 1)), a)
    assert s.signed_peak() == (dy, dx)


@pytest.mark.parametrize("shift", [17.5, 17.25, -6.75, 3.1])
def test_subpixel_against_upsampled_oracle(shift):
    a = blocky_map(np.random.default_rng(5))
    b = fourier_shift(a, shift, 0.0)
    oracle = upsampled_xcorr_peak(b, a)
    (dy, dx), ok = subpixel_peak(poc(b, a))
    assert ok
    assert abs(dy - oracle[0]) < 0.05 and abs(dx - oracle[1]) < 0.05
    assert abs(dy - shift) < 0.05


def test_subpixel_integer_shift_has_no_offset():
    a = blocky_map(np.random.default_rng(6))
    (dy, dx), ok = subpixel_peak(poc(np.roll(a, 9, axis=0), a))
    assert abs(dy - 9) < 0.01 and abs(dx) < 0.01 and ok


def test_sinc_fit_recovers_offsets_and_flags_flat_input():
    k = np.arange(-2, 3)
    for d in (-0.45, -0.2, 0.0, 0.3, 0.49):
        delta, ok = fit_sinc_offset(3.0 * np.sinc(k - d))
        assert ok and abs(delta - d) < 1e-3
    delta, ok = fit_sinc_offset(np.ones(5))
    assert not ok and delta == 0.0


def test_flat_surface_falls_back_to_integer_peak():
    from eventvlc.ranging import CorrelationSurface
    s = CorrelationSurface(np.full((8, 8), 0.1), (0, 3), 0.1)
    (dy, dx), ok = subpixel_peak(s)
    assert (dy, dx) == (0.0, 3.0) and not ok


def test_batch_path_matches_scalar_path():
    rng = np.random.default_rng(8)
    maps = np.stack([fourier_shift(blocky_map(rng, (32, 16), (4, 12), (6, 10)), rng.uniform(0, 12), 0)
                     for _ in range(5)])
    shape = (64, 32)
    unit = unit_spectra(maps, shape)
    ia, ib = np.array([1, 2, 3, 4]), np.array([0, 0, 1, 2])
    disp, ok = batch_subpixel(poc_batch(unit, ia, ib, shape))
    for n, (i, j) in enumerate(zip(ia, ib)):
        pad = lambda m: np.pad(m, ((0, shape[0] - m.shape[0]), (0, shape[1] - m.shape[1])))
        (dy, dx), _ = subpixel_peak(poc(pad(maps[i]), pad(maps[j])))
        assert abs(disp[n, 0] - dy) < 1e-3 and abs(disp[n, 1] - dx) < 1e-3


def test_triangulate_examples():
    assert triangulate(126.0, 0.9, F, A) == pytest.approx(50.0)
    assert triangulate(25.2, 0.36, F, A) == pytest.approx(100.0)
    assert triangulate(252.0, 0.9, F, A) == pytest.approx(25.0)
    for bad in (0.0, -3.0):
        with pytest.raises(InvalidArgument):
            triangulate(bad, 0.9, F, A)


def test_theoretical_error_examples():
    assert theoretical_error(50.0, F, 0.9, A, 1.0) == pytest.approx(0.4, abs=1e-6)
    assert theoretical_error(50.0, F, 0.9, A, 0.0) == pytest.approx(0.0, abs=1e-12)
    vals = [theoretical_error(L, F, 0.9, A, 0.5) for L in range(30, 101, 5)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    with pytest.raises(InvalidArgument):
        theoretical_error(5000.0, F, 0.9, A, 7.0)
    with pytest.raises(InvalidArgument):
        theoretical_error(-1.0, F, 0.9, A, 0.5)


def _est(values, spacings=None):
    spacings = spacings or [0.6] * len(values)
    return [RangeEstimate((0, n + 1), 10.0, s, v, spacing_weight(s)) for n, (v, s) in enumerate(zip(values, spacings))]


def test_aggregate_examples():
    assert aggregate(_est([50.0] * 5)).distance_m == pytest.approx(50.0)
    r = aggregate(_est([50.0, 50.1, 49.9, 80.0, 20.0]))
    assert r.distance_m == pytest.approx(50.0) and not r.degraded and r.n_used == 3
    with pytest.raises(InvalidArgument):
        aggregate([])
    r = aggregate(_est([40.0, 60.0]))
    assert r.degraded and r.distance_m == pytest.approx(50.0)


def test_aggregate_iqr_fence():
    r = aggregate(_est([10.0, 50.0, 50.2, 49.8, 50.1, 49.9, 58.0, 90.0]))
    assert r.n_used == 5 and r.distance_m == pytest.approx(50.0)


def test_aggregate_prefers_long_baselines():
    spacing = [0.3, 0.3, 0.3, 0.9, 0.9, 0.9, 0.9]
    values = [50.6, 50.5, 50.7, 50.0, 50.1, 49.9, 50.0]
    weighted = aggregate(_est(values, spacing)).distance_m
    assert abs(weighted - 50.0) < abs(np.mean(values) - 50.0)


def test_aggregate_zero_weights_degrade_to_median():
    est = [RangeEstimate((0, n), 1.0, 0.0, v, 0.0) for n, v in enumerate([1.0, 2.0, 3.0, 4.0])]
    r = aggregate(est)
    assert r.degraded and r.distance_m == 2.5


@given(values=st.lists(st.floats(1.0, 200.0), min_size=3, max_size=12),
       spacing=st.lists(st.sampled_from([0.3, 0.42, 0.6, 0.78]), min_size=12, max_size=12),
       perm_seed=st.integers(0, 1000), c=st.floats(0.1, 10.0))
def test_aggregate_permutation_invariant_and_scale_equivariant(values, spacing, perm_seed, c):
    est = _est(values, spacing[: len(values)])
    base = aggregate(est).distance_m
    perm = np.random.default_rng(perm_seed).permutation(len(est))
    assert aggregate([est[i] for i in perm]).distance_m == pytest.approx(base, rel=1e-12)
    scaled = [RangeEstimate(e.pair, e.displacement_px, e.spacing_m, c * e.distance_m, e.weight) for e in est]
    assert aggregate(scaled).distance_m == pytest.approx(c * base, rel=1e-9)


def test_quartiles_linear_convention():
    assert quartiles([1, 2, 3, 4]) == (1.75, 3.25)
    assert quartiles([5.0]) == (5.0, 5.0)
