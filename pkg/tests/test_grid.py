import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from acontrario import grid
from acontrario.grid import GeometryError, MeasurementUnavailable, build_kernels


def _count_lattice(r2_lo, r2_hi, n):
    return sum(1 for dy in range(-n, n + 1) for dx in range(-n, n + 1) if r2_lo < dy * dy + dx * dx <= r2_hi)


def test_smallest_disc():
    k = build_kernels(1, 2)
    assert len(k.inner) == 5
    assert len(k.ring) > 0


def test_radius3_counts_by_enumeration():
    k = build_kernels(3, 2)
    assert len(k.inner) == _count_lattice(-1, 9, 6) == 29
    assert len(k.ring) == _count_lattice(9, 36, 6) == 84
    assert abs(len(k.inner) - np.pi * 9) / (np.pi * 9) < 0.05
    assert k.norm_diff == pytest.approx(np.sqrt(1 / 29 + 1 / 84), rel=1e-15)


def test_thin_ring_preset():
    k = build_kernels(3, 1.25)
    d = np.sqrt((k.ring ** 2).sum(1))
    assert len(k.ring) == 16
    assert np.all((d > 3) & (d <= 3.75))


@pytest.mark.parametrize("radius,alpha", [(0.5, 2), (3, 1), (3, 0.9), (np.nan, 2)])
def test_invalid_geometry(radius, alpha):
    with pytest.raises(GeometryError):
        build_kernels(radius, alpha)


@pytest.mark.parametrize("radius", [6, 7.5, 10, 14])
def test_disc_area_converges(radius):
    k = build_kernels(radius, 2)
    assert abs(len(k.inner) / (np.pi * radius ** 2) - 1) < 0.05


def test_constant_image_measure():
    img = np.full((30, 30), 7.25)
    assert grid.measure_at(img, build_kernels(3, 2), 15, 15) == (7.25, 7.25)


def test_impulse_measure():
    img = np.zeros((20, 20))
    img[10, 10] = 1.0
    k = build_kernels(1, 2)
    m1, m2 = grid.measure_at(img, k, 10, 10)
    assert m1 == pytest.approx(1 / len(k.inner))
    assert m2 == 0.0


def test_gaussian_spot_against_mask_sum():
    yy, xx = np.mgrid[0:41, 0:41]
    img = 100 + 40 * np.exp(-((xx - 20) ** 2 + (yy - 20) ** 2) / (2 * 2.0 ** 2))
    k = build_kernels(3, 2)
    m1, m2 = grid.measure_at(img, k, 20, 20)
    d2 = (xx - 20) ** 2 + (yy - 20) ** 2
    inner = img[d2 <= 9].mean()
    ring = img[(d2 > 9) & (d2 <= 36)].mean()
    assert m1 - m2 == pytest.approx(inner - ring, abs=1e-12)


def test_measure_errors():
    img = np.zeros((20, 20))
    k = build_kernels(3, 2)
    with pytest.raises(MeasurementUnavailable):
        grid.measure_at(img, k, 2, 10)
    hidden = np.zeros(img.shape, bool)
    hidden[7:14, 7:14] = True
    with pytest.raises(MeasurementUnavailable):
        grid.measure_at(img, k, 10, 10, hidden)


def test_hidden_pixels_excluded():
    img = np.zeros((30, 30))
    img[15, 15] = 1000.0
    hidden = np.zeros(img.shape, bool)
    hidden[15, 15] = True
    m1, _ = grid.measure_at(img, build_kernels(3, 2), 15, 15, hidden)
    assert m1 == 0.0


def test_local_sigma_flat_ring_is_floor():
    img = np.full((30, 30), 5.0)
    img[0, 0] = 15.0
    s = grid.local_sigma(img, build_kernels(3, 2), 15, 15)
    assert s == pytest.approx(1e-6 * 10.0)
    assert s > 0


def test_robust_scale_hand_oracle():
    # median 5, absolute deviations all 5 -> MAD 5
    assert grid.robust_scale([0, 0, 0, 0, 10, 10, 10, 10]) == pytest.approx(1.4826 * 5)


def test_local_sigma_needs_eight_pixels():
    img = np.random.default_rng(0).normal(size=(30, 30))
    k = build_kernels(3, 2)
    hidden = np.ones(img.shape, bool)
    ys, xs = 15 + k.ring[:7, 0], 15 + k.ring[:7, 1]
    hidden[ys, xs] = False
    with pytest.raises(MeasurementUnavailable):
        grid.local_sigma(img, k, 15, 15, hidden)


def test_local_sigma_calibration():
    rng = np.random.default_rng(7)
    k = build_kernels(6, 2)
    assert len(k.ring) >= 200
    ok = 0
    for _ in range(400):
        img = rng.normal(0, 5, (25, 25))
        ok += abs(grid.local_sigma(img, k, 12, 12) - 5) <= 0.75
    assert ok / 400 >= 0.95


def test_estimate_noise_ignores_smooth_background():
    rng = np.random.default_rng(3)
    yy, xx = np.mgrid[0:256, 0:256]
    img = 100 + 0.5 * xx + 0.3 * yy + rng.normal(0, 10, (256, 256))
    assert grid.estimate_noise(img) == pytest.approx(10, rel=0.03)


def test_measure_maps_match_pointwise(rng):
    img = rng.normal(0, 1, (32, 35))
    k = build_kernels(2, 2)
    m1, m2 = grid.measure_maps(img, k)
    m = k.margin
    for y, x in [(m, m), (m + 3, m + 9), (31 - m, 34 - m)]:
        assert (m1[y - m, x - m], m2[y - m, x - m]) == pytest.approx(grid.measure_at(img, k, x, y))


def test_as_image_rejects():
    with pytest.raises(ValueError):
        grid.as_image(np.zeros(5))
    with pytest.raises(ValueError):
        grid.as_image(np.array([[1.0, np.nan]]))


@given(c=st.floats(-1e6, 1e6), r=st.sampled_from([1, 2, 3, 4.5]), a=st.sampled_from([1.25, 2, 3.5]))
def test_constant_field_property(c, r, a):
    try:
        k = build_kernels(r, a)
    except GeometryError:
        assume(False)
    n = 2 * k.margin + 3
    m1, m2 = grid.measure_at(np.full((n, n), c), k, n // 2, n // 2)
    assert m1 == pytest.approx(c) and m2 == pytest.approx(c)


@given(shift=st.floats(-1e4, 1e4), scale=st.floats(0.01, 100))
def test_measure_affine_property(shift, scale):
    img = np.random.default_rng(1).normal(0, 1, (21, 21))
    k = build_kernels(3, 2)
    a1, a2 = grid.measure_at(img, k, 10, 10)
    b1, b2 = grid.measure_at(scale * img + shift, k, 10, 10)
    assert b1 - b2 == pytest.approx(scale * (a1 - a2), rel=1e-6, abs=1e-6)
