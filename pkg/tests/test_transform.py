import numpy as np
import pytest

from latentmark.audio import AudioClip
from latentmark.transform import (
    LatentGrid,
    ShapeError,
    TooShortError,
    TransformConfig,
    cola_deviation,
    decode,
    decode_vjp,
    encode,
    irfft_adjoint,
    periodic_hann,
    reflect_pad,
    reflect_pad_adjoint,
    rfft_adjoint,
    stft,
    stft_adjoint,
)

CFG = TransformConfig()


def _clip(n, seed=0, channels=2):
    return AudioClip(np.random.default_rng(seed).standard_normal((channels, n)))


def _dot(a, b):
    return float(np.sum(a * b))


def test_config_invariants():
    assert cola_deviation(CFG.window, CFG.hop) < 1e-12
    n = np.arange(1024)
    assert np.allclose(periodic_hann(1024), 0.5 - 0.5 * np.cos(2 * np.pi * n / 1024), atol=0)
    with pytest.raises(ValueError):
        TransformConfig(1024, 512)


@pytest.mark.parametrize("n", [4410, 44100, 441000])
def test_roundtrip(n):
    x = _clip(n, seed=n)
    y = decode(encode(x, CFG), CFG, n)
    assert np.max(np.abs(y.samples - x.samples)) < 1e-6


def test_frame_count_matches_padding_scheme():
    for n in (513, 1000, 4410):
        z = encode(_clip(n), CFG)
        assert z.frames == (n + 1024 - 1024) // 256 + 1 == CFG.num_frames(n)
        assert z.bins == 513


def test_zero_clip_gives_zero_latent():
    assert np.all(encode(AudioClip(np.zeros((2, 3000))), CFG).values == 0)


def test_zero_latent_gives_zero_waveform():
    z = encode(_clip(3000), CFG).zeros_like()
    assert np.all(decode(z, CFG, 3000).samples == 0)


def test_encode_is_linear():
    x, y = _clip(5000, 1), _clip(5000, 2)
    lhs = encode(AudioClip(x.samples + y.samples), CFG).values
    rhs = encode(x, CFG).values + encode(y, CFG).values
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_decode_superposition():
    x, y = _clip(5000, 3), _clip(5000, 4)
    out = decode(encode(x, CFG) + encode(y, CFG), CFG, 5000).samples
    assert np.max(np.abs(out - (x.samples + y.samples))) < 1e-6


def test_bin_centred_sine_concentrates_energy():
    sr, k = 44100, 40
    f = k * sr / 1024
    n = 8192
    x = np.sin(2 * np.pi * f * np.arange(n) / sr)
    Z = encode(AudioClip(x[None], sr), CFG).to_complex()[0]
    # oracle: brute-force windowed DFT of one steady-state frame
    start = 10 * 256 - 512
    seg = x[start:start + 1024] * periodic_hann(1024)
    dft = np.array([np.sum(seg * np.exp(-2j * np.pi * b * np.arange(1024) / 1024)) for b in range(513)])
    assert np.allclose(Z[10], dft, atol=1e-8)
    for t in range(3, Z.shape[0] - 3):
        energy = np.abs(Z[t]) ** 2
        # Hann leaks into k +- 1 at half amplitude: bin k holds 2/3, the main lobe all of it
        assert np.argmax(energy) == k
        assert abs(energy[k] / energy.sum() - 2 / 3) < 1e-6
        assert np.sum(energy[k - 1:k + 2]) / energy.sum() > 0.99


def test_too_short_clip():
    with pytest.raises(TooShortError):
        encode(AudioClip(np.zeros((1, 100))), CFG)


def test_decode_shape_error():
    z = encode(_clip(4000), CFG)
    with pytest.raises(ShapeError):
        decode(z, CFG, 9000)


def test_adjoint_identity_many_pairs():
    rng = np.random.default_rng(7)
    n = 2000
    frames = CFG.num_frames(n)
    for _ in range(100):
        z = LatentGrid(rng.standard_normal((2, frames, 513, 2)))
        w = rng.standard_normal((2, n))
        lhs = _dot(decode(z, CFG, n).samples, w)
        rhs = _dot(z.values, decode_vjp(w, CFG).values)
        assert abs(lhs - rhs) < 1e-9 * max(1.0, abs(lhs))


def test_zero_cotangent():
    assert np.all(decode_vjp(np.zeros((2, 3000)), CFG).values == 0)


def test_decode_vjp_finite_difference():
    rng = np.random.default_rng(8)
    n = 3000
    z = rng.standard_normal((2, CFG.num_frames(n), 513, 2))

    def f(v):
        y = decode(LatentGrid(v), CFG, n).samples
        return 0.5 * _dot(y, y)

    grad = decode_vjp(decode(LatentGrid(z), CFG, n), CFG).values
    h = 1e-5
    for _ in range(5):
        u = rng.standard_normal(z.shape)
        fd = (f(z + h * u) - f(z - h * u)) / (2 * h)
        an = _dot(grad, u)
        assert abs(fd - an) / abs(an) < 1e-6


def test_primitive_adjoints():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((2, 700))
    g = rng.standard_normal((2, 700 + 2 * 64))
    assert abs(_dot(reflect_pad(x, 64), g) - _dot(x, reflect_pad_adjoint(g, 64))) < 1e-10
    X = np.fft.rfft(x, axis=-1)
    G = rng.standard_normal(X.shape) + 1j * rng.standard_normal(X.shape)
    lhs = _dot(X.real, G.real) + _dot(X.imag, G.imag)
    assert abs(lhs - _dot(x, rfft_adjoint(G, 700))) < 1e-8
    y = np.fft.irfft(G, n=700, axis=-1)
    H = irfft_adjoint(x, 700)
    assert abs(_dot(y, x) - (_dot(G.real, H.real) + _dot(G.imag, H.imag))) < 1e-10
    S = stft(x, 256, 64)
    G2 = rng.standard_normal(S.shape) + 1j * rng.standard_normal(S.shape)
    lhs = _dot(S.real, G2.real) + _dot(S.imag, G2.imag)
    assert abs(lhs - _dot(x, stft_adjoint(G2, 256, 64, 700))) < 1e-8 * abs(lhs)


def test_energy_ratio_constant_for_fixed_length():
    # Half-spectrum Parseval: interior bins count twice.  With silent edges the
    # reflection padding contributes nothing and every kept sample sees the
    # steady-state squared-window sum of 1.5, so the ratio is exactly 1.5 * W.
    n = 8000
    c = np.full(513, 2.0)
    c[[0, -1]] = 1.0
    ratios = []
    for seed in range(6):
        x = _clip(n, seed).samples.copy()
        x[:, :1024] = 0
        x[:, -1024:] = 0
        Z = encode(AudioClip(x), CFG).to_complex()
        ratios.append(np.sum(c * np.abs(Z) ** 2) / np.sum(x**2))
    ratios = np.array(ratios)
    assert np.max(np.abs(ratios / (1.5 * 1024) - 1)) < 1e-6
