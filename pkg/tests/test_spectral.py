import numpy as np
import pytest
from hypothesis import given, strategies as st

from glaste.gradcheck import Case, check_case, t64
from glaste.spectral import UnsupportedSizeError, ffc_block, ffc_residual_stack, irfft2, rfft2, rfft2_complex
from glaste.tensor import DimensionError, Tensor

POW2 = [4, 8, 16, 32, 64]


def direct_half_dft(x):
    """Double-sum DFT of a 2-D array, columns 0..W/2."""
    h, w = x.shape
    out = np.zeros((h, w // 2 + 1), dtype=np.complex128)
    ys, xs = np.mgrid[0:h, 0:w]
    for u in range(h):
        for v in range(w // 2 + 1):
            out[u, v] = np.sum(x * np.exp(-2j * np.pi * (u * ys / h + v * xs / w)))
    return out


def spectrum(x):
    s = rfft2(Tensor(x[None, None], dtype=np.float64)).data[0]
    return s[0] + 1j * s[1]


def test_constant_image_dc_only():
    v, h, w = 0.75, 4, 8
    z = spectrum(np.full((h, w), v))
    assert z[0, 0] == pytest.approx(v * h * w)
    z[0, 0] = 0
    assert np.abs(z).max() < 1e-12


def test_impulse_is_flat():
    x = np.zeros((8, 4))
    x[0, 0] = 1
    z = spectrum(x)
    np.testing.assert_allclose(z.real, 1.0, atol=1e-12)
    np.testing.assert_allclose(z.imag, 0.0, atol=1e-12)


@pytest.mark.parametrize("h", [4, 8, 16])
@pytest.mark.parametrize("w", [4, 8, 16])
def test_matches_direct_dft(rng, h, w):
    x = rng.normal(size=(h, w))
    assert np.abs(spectrum(x) - direct_half_dft(x)).max() < 1e-5


@pytest.mark.parametrize("h", POW2)
@pytest.mark.parametrize("w", POW2)
def test_roundtrip_and_parseval(rng, h, w):
    x = rng.normal(size=(2, 3, h, w))
    spec = rfft2(Tensor(x, dtype=np.float64))
    back = irfft2(spec, w).data
    assert np.abs(back - x).max() < 1e-5
    z = rfft2_complex(x)
    weights = np.full(w // 2 + 1, 2.0)
    weights[0] = weights[-1] = 1.0  # bins without a conjugate partner count once
    energy = (np.abs(z) ** 2 * weights).sum(axis=(-2, -1)) / (h * w)
    np.testing.assert_allclose(energy, (x ** 2).sum(axis=(-2, -1)), rtol=1e-5)


def test_dc_only_spectrum_inverts_to_constant():
    h, w, v = 4, 8, -0.3
    spec = np.zeros((1, 2, h, w // 2 + 1))
    spec[0, 0, 0, 0] = v * h * w
    np.testing.assert_allclose(irfft2(Tensor(spec, dtype=np.float64), w).data, v, atol=1e-12)


def test_size_errors():
    with pytest.raises(UnsupportedSizeError):
        rfft2(Tensor(np.zeros((1, 1, 6, 8))))
    spec = rfft2(Tensor(np.zeros((1, 1, 8, 8))))
    with pytest.raises(DimensionError):
        irfft2(spec, 16)


@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(1, 2, 8, 4)), rng.normal(size=(1, 2, 8, 4))
    lhs = rfft2(Tensor(a * x + b * y, dtype=np.float64)).data
    rhs = a * rfft2(Tensor(x, dtype=np.float64)).data + b * rfft2(Tensor(y, dtype=np.float64)).data
    assert np.abs(lhs - rhs).max() < 1e-5 * max(1.0, np.abs(rhs).max())


def test_ffc_identity_weights_roundtrip(rng):
    c = 4
    x = rng.normal(size=(1, c, 8, 8))
    w = Tensor(np.eye(2 * c)[:, :, None, None], dtype=np.float64)
    out = ffc_block(Tensor(x, dtype=np.float64), w, Tensor(np.zeros(2 * c), dtype=np.float64), activation="identity")
    assert np.abs(out.data - x).max() < 1e-10


def test_ffc_shapes(rng):
    x = Tensor(rng.normal(size=(1, 4, 8, 8)))
    w, b = Tensor(rng.normal(size=(8, 8, 1, 1))), Tensor(np.zeros(8))
    assert ffc_block(x, w, b).shape == (1, 4, 8, 8)
    y = Tensor(rng.normal(size=(1, 8, 16, 16)))
    layers = [(Tensor(rng.normal(scale=0.1, size=(16, 16, 1, 1))), Tensor(np.zeros(16))) for _ in range(3)]
    assert ffc_residual_stack(y, layers).shape == (1, 8, 16, 16)


def test_ffc_residual_zero_weights_is_identity(rng):
    x = rng.normal(size=(1, 3, 8, 8)).astype(np.float32)
    zero = [(Tensor(np.zeros((6, 6, 1, 1), dtype=np.float32)), Tensor(np.zeros(6, dtype=np.float32)))]
    np.testing.assert_array_equal(ffc_residual_stack(Tensor(x), zero).data, x)


def test_ffc_gradient_matches_finite_differences(rng):
    # the spatial sum only sees the DC bin, so most weight gradients are
    # exactly zero; the input gradient is the meaningful one here
    x = t64(rng, 1, 4, 8, 8)
    w, b = Tensor(rng.normal(scale=0.5, size=(8, 8, 1, 1)), dtype=np.float64), Tensor(rng.normal(scale=0.1, size=8), dtype=np.float64)
    case = Case([x], lambda x: ffc_block(x, w, b).sum())
    assert check_case(case, rng) < 1e-4


def test_ffc_global_receptive_field(rng):
    """A single output pixel reacts to the far corner of the input."""
    c, h, w = 2, 16, 16
    x = rng.normal(size=(1, c, h, w))
    wt = Tensor(rng.normal(scale=0.5, size=(2 * c, 2 * c, 1, 1)), dtype=np.float64)
    bias = Tensor(rng.normal(scale=0.1, size=2 * c), dtype=np.float64)

    def probe(arr):
        return ffc_residual_stack(Tensor(arr, dtype=np.float64), [(wt, bias)]).data[0, 0, 0, 0]

    for k, l in [(h - 1, w - 1), (h // 2, w - 1), (h - 1, 3)]:
        xp, xm = x.copy(), x.copy()
        xp[0, 1, k, l] += 1e-4
        xm[0, 1, k, l] -= 1e-4
        assert abs(probe(xp) - probe(xm)) / 2e-4 > 1e-6
