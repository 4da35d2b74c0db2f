import numpy as np
import pytest

from acontrario import _accel, kernels
from acontrario.grid import build_kernels

needs_numba = pytest.mark.skipif(not _accel.NUMBA_AVAILABLE, reason="numba not installed")


def _setup(rng, radius=3.0, alpha=2.0, shape=(40, 52)):
    k = build_kernels(radius, alpha)
    img = rng.normal(100, 10, shape)
    return img, k


def test_backend_name():
    assert _accel.backend() in ("numba", "numpy")


@pytest.mark.parametrize("offsets_name", ["inner", "ring"])
def test_mask_mean_numpy_matches_direct_sum(rng, offsets_name):
    img, k = _setup(rng)
    offs = getattr(k, offsets_name)
    m = k.margin
    out = kernels._mask_mean_map_numpy(img, offs, m)
    assert out.shape == (img.shape[0] - 2 * m, img.shape[1] - 2 * m)
    for y, x in [(m, m), (m + 5, m + 11), (img.shape[0] - m - 1, img.shape[1] - m - 1)]:
        direct = np.mean([img[y + dy, x + dx] for dy, dx in offs])
        assert out[y - m, x - m] == pytest.approx(direct, rel=1e-12)


@needs_numba
@pytest.mark.parametrize("radius,alpha", [(2, 2), (3, 1.25), (2, 3.5)])
def test_mask_mean_backends_agree(rng, radius, alpha):
    img, k = _setup(rng, radius, alpha)
    for offs in (k.inner, k.ring):
        a = kernels._mask_mean_map_numba(img, offs, k.margin)
        b = kernels._mask_mean_map_numpy(img, offs, k.margin)
        np.testing.assert_allclose(a, b, rtol=1e-12)


def test_ring_mad_numpy_matches_direct(rng):
    img, k = _setup(rng)
    excluded = rng.uniform(size=img.shape) < 0.3
    m = k.margin
    out = kernels._ring_mad_map_numpy(img, k.ring, m, excluded, rows_per_block=3)
    for y, x in [(m, m), (m + 7, m + 2), (m + 10, m + 20)]:
        vals = np.array([img[y + dy, x + dx] for dy, dx in k.ring if not excluded[y + dy, x + dx]])
        direct = 1.4826 * np.median(np.abs(vals - np.median(vals)))
        assert out[y - m, x - m] == pytest.approx(direct, rel=1e-12)


def test_ring_mad_nan_when_too_few_samples(rng):
    img, k = _setup(rng)
    excluded = np.ones(img.shape, dtype=bool)
    out = kernels._ring_mad_map_numpy(img, k.ring, k.margin, excluded)
    assert np.all(np.isnan(out))


@needs_numba
def test_ring_mad_backends_agree(rng):
    img, k = _setup(rng)
    excluded = rng.uniform(size=img.shape) < 0.5
    a = kernels._ring_mad_map_numba(img, k.ring, k.margin, excluded)
    b = kernels._ring_mad_map_numpy(img, k.ring, k.margin, excluded)
    np.testing.assert_allclose(a, b, rtol=1e-12, equal_nan=True)


def _random_layer(rng, n_triples=60, n_pairs=12, n_prev=9, lprev=5, lmax=6):
    head = np.sort(rng.integers(0, n_pairs, n_triples)).astype(np.int32)
    tail = rng.integers(-1, n_prev, n_triples).astype(np.int32)
    acc = rng.uniform(0, 3, n_triples).round(1)  # rounding creates ties
    ok = rng.uniform(size=n_triples) < 0.8
    d_prev = rng.uniform(0, 3, (n_prev, lprev + 1)).round(1)
    d_prev[rng.uniform(size=d_prev.shape) < 0.3] = np.inf
    d_prev[:, :3] = np.inf
    return head, tail, acc, ok, d_prev, n_pairs, lmax


def _dp_reference(head, tail, acc, ok, d_prev, n_pairs, lmax):
    d = np.full((n_pairs, lmax + 1), np.inf)
    b = np.full((n_pairs, lmax + 1), -1)
    for q in range(len(head)):
        if not ok[q]:
            continue
        for ell in range(3, lmax + 1):
            if ell == 3:
                v = acc[q]
            elif tail[q] >= 0 and ell - 1 < d_prev.shape[1]:
                v = max(d_prev[tail[q], ell - 1], acc[q])
            else:
                continue
            if v < d[head[q], ell]:
                d[head[q], ell] = v
                b[head[q], ell] = q
    return d, b


@pytest.mark.parametrize("seed", range(5))
def test_dp_layer_numpy_matches_reference(seed):
    args = _random_layer(np.random.default_rng(seed))
    d, b = kernels._dp_layer_numpy(*args)
    dr, br = _dp_reference(*args)
    np.testing.assert_array_equal(d, dr)
    np.testing.assert_array_equal(b, br)


@needs_numba
@pytest.mark.parametrize("seed", range(5))
def test_dp_layer_backends_agree(seed):
    args = _random_layer(np.random.default_rng(seed))
    d1, b1 = kernels._dp_layer_numba(*args)
    d2, b2 = kernels._dp_layer_numpy(*args)
    np.testing.assert_array_equal(d1, d2)
    np.testing.assert_array_equal(b1, b2)


def test_dp_layer_empty():
    d, b = kernels.dp_layer(np.empty(0, np.int32), np.empty(0, np.int32), np.empty(0),
                            np.empty(0, bool), np.empty((0, 3)), 0, 4)
    assert d.shape == (0, 5) and b.shape == (0, 5)
