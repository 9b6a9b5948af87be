import numpy as np
import pytest

from fpm_spoof import kernels
from helpers import numerical_grad, relative_error

CASES = [
    # (N, C, H, W, K, kh, stride, pad)
    (2, 3, 7, 9, 4, 3, 1, 1),
    (2, 3, 8, 10, 4, 3, 2, 1),
    (1, 5, 6, 6, 2, 1, 2, 0),
    (3, 1, 5, 5, 2, 3, 1, 1),
    (1, 2, 9, 4, 3, 3, 2, 1),
]


def _conv_reference(x, w, stride, pad):
    """Naive python-loop convolution."""
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wd + 2 * pw - kw) // sw + 1
    y = np.zeros((n, k, oh, ow), dtype=np.float64)
    for ni in range(n):
        for ki in range(k):
            for a in range(oh):
                for b in range(ow):
                    acc = 0.0
                    for ci in range(c):
                        for u in range(kh):
                            ih = a * sh - ph + u
                            if not 0 <= ih < h:
                                continue
                            for v in range(kw):
                                iw = b * sw - pw + v
                                if 0 <= iw < wd:
                                    acc += x[ni, ci, ih, iw] * w[ki, ci, u, v]
                    y[ni, ki, a, b] = acc
    return y


@pytest.fixture(params=sorted(kernels.available_backends()))
def backend(request):
    prev = kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


@pytest.mark.parametrize("case", CASES)
def test_forward_matches_reference(backend, case):
    n, c, h, w, k, kh, stride, pad = case
    rng = np.random.default_rng(hash(case) % 2**32)
    x = rng.normal(size=(n, c, h, w))
    wt = rng.normal(size=(k, c, kh, kh))
    y = kernels.conv2d_forward(x, wt, (stride, stride), (pad, pad))
    np.testing.assert_allclose(y, _conv_reference(x, wt, (stride, stride), (pad, pad)), atol=1e-10)


@pytest.mark.parametrize("case", CASES)
def test_backward_input_finite_differences(backend, case):
    n, c, h, w, k, kh, stride, pad = case
    rng = np.random.default_rng(1 + hash(case) % 2**32)
    x = rng.normal(size=(n, c, h, w))
    wt = rng.normal(size=(k, c, kh, kh))
    gy = rng.normal(size=kernels.conv2d_forward(x, wt, (stride, stride), (pad, pad)).shape)

    def loss(xv):
        return float((kernels.conv2d_forward(xv, wt, (stride, stride), (pad, pad)) * gy).sum())

    gx = kernels.conv2d_backward_input(gy, wt, (stride, stride), (pad, pad), x.shape)
    assert relative_error(gx, numerical_grad(loss, x.copy())) < 1e-6


@pytest.mark.parametrize("case", CASES[:3])
def test_backward_weight_finite_differences(backend, case):
    n, c, h, w, k, kh, stride, pad = case
    rng = np.random.default_rng(2 + hash(case) % 2**32)
    x = rng.normal(size=(n, c, h, w))
    wt = rng.normal(size=(k, c, kh, kh))
    gy = rng.normal(size=kernels.conv2d_forward(x, wt, (stride, stride), (pad, pad)).shape)

    def loss(wv):
        return float((kernels.conv2d_forward(x, wv, (stride, stride), (pad, pad)) * gy).sum())

    gw = kernels.conv2d_backward_weight(x, gy, (stride, stride), (pad, pad), (kh, kh))
    assert relative_error(gw, numerical_grad(loss, wt.copy())) < 1e-6


@pytest.mark.skipif(len(kernels.available_backends()) < 2, reason="single backend")
@pytest.mark.parametrize("case", CASES)
def test_backends_agree(case):
    n, c, h, w, k, kh, stride, pad = case
    rng = np.random.default_rng(3)
    x = rng.normal(size=(n, c, h, w)).astype(np.float32)
    wt = rng.normal(size=(k, c, kh, kh)).astype(np.float32)
    outs = {}
    for name in kernels.available_backends():
        prev = kernels.set_backend(name)
        try:
            y = kernels.conv2d_forward(x, wt, (stride, stride), (pad, pad))
            gy = np.ones_like(y)
            outs[name] = (
                y,
                kernels.conv2d_backward_input(gy, wt, (stride, stride), (pad, pad), x.shape),
                kernels.conv2d_backward_weight(x, gy, (stride, stride), (pad, pad), (kh, kh)),
            )
        finally:
            kernels.set_backend(prev)
    a, b = outs["numba"], outs["numpy"]
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=2e-5, atol=2e-5)


def test_backend_selection_round_trip():
    prev = kernels.set_backend("numpy")
    try:
        assert kernels.get_backend() == "numpy"
    finally:
        kernels.set_backend(prev)
    with pytest.raises(Exception):
        kernels.set_backend("cuda")


def test_float32_dtype_preserved(backend):
    x = np.ones((1, 1, 4, 4), dtype=np.float32)
    w = np.ones((1, 1, 3, 3), dtype=np.float32)
    assert kernels.conv2d_forward(x, w, (1, 1), (1, 1)).dtype == np.float32
