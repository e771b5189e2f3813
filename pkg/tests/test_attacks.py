import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentmark.audio import AudioClip, si_snr
from latentmark.attacks import (
    ATTACK_KINDS,
    EVAL_ONLY,
    EXACT,
    GRAD_MODES,
    STOCHASTIC_KINDS,
    STRAIGHT_THROUGH,
    TRAINABLE_KINDS,
    AttackContractError,
    AttackParamError,
    AttackSampler,
    AttackSpec,
    Upfirdn,
    apply_attack,
    attack_forward,
    attack_vjp,
    external_codec_roundtrip,
    fir_adjoint,
    fir_apply,
    design_fir,
    imdct,
    in_training_range,
    mdct,
    sample_training_attack,
)

SR = 44100


def _noise(n, seed=0, channels=2, scale=0.3):
    return scale * np.random.default_rng(seed).standard_normal((channels, n))


def _rms(x):
    return float(np.sqrt(np.mean(x**2)))


def test_identity_is_bitwise_and_backward_identity():
    x = _noise(1000)
    y, tape = attack_forward(x, SR, AttackSpec("identity"))
    assert np.array_equal(x, y)
    w = _noise(1000, 1)
    assert np.array_equal(attack_vjp(AttackSpec("identity"), tape, w), w)


def test_crop_halves_ten_seconds():
    clip = AudioClip(_noise(10 * SR), SR)
    out, _ = apply_attack(clip, AttackSpec("crop"), np.random.default_rng(0))
    assert out.num_samples == 5 * SR
    assert out.duration == 5.0


def test_crop_is_contiguous_slice():
    x = np.arange(1000.0)[None].repeat(2, 0)
    y, _ = attack_forward(x, SR, AttackSpec("crop"), np.random.default_rng(3))
    assert np.all(np.diff(y[0]) == 1.0)


def test_quantize_distinct_values():
    x = np.random.default_rng(1).uniform(-1.2, 1.2, (2, 50_000))
    y, tape = attack_forward(x, SR, AttackSpec("quantize"))
    assert len(np.unique(y)) <= 512
    w = _noise(50_000, 2)
    assert np.array_equal(attack_vjp(AttackSpec("quantize"), tape, w), w)


def test_echo_impulse_response():
    x = np.zeros((1, SR))
    x[0, 0] = 1.0
    y, _ = attack_forward(x, SR, AttackSpec("echo"))
    nz = np.flatnonzero(np.abs(y[0]) > 1e-12)
    assert list(nz) == [0, round(0.5 * SR)]
    assert abs(y[0, 0] - 1.0) < 1e-12 and abs(y[0, nz[1]] - 0.5) < 1e-12


def _steady_gain_db(kind, freq, **params):
    t = np.arange(2 * SR) / SR
    x = np.sin(2 * np.pi * freq * t)[None]
    y, _ = attack_forward(x, SR, AttackSpec(kind, params))
    core = slice(SR // 2, -SR // 2)
    return 20 * np.log10(_rms(y[:, core]) / _rms(x[:, core]))


def test_lowpass_response():
    assert _steady_gain_db("lowpass", 4000) <= -40
    assert abs(_steady_gain_db("lowpass", 100)) <= 1


def test_highpass_and_bandpass_response():
    assert _steady_gain_db("highpass", 200) <= -40
    assert abs(_steady_gain_db("highpass", 6000)) <= 1
    assert abs(_steady_gain_db("bandpass", 2000)) <= 1
    assert _steady_gain_db("bandpass", 100) <= -30
    assert _steady_gain_db("bandpass", 12000) <= -30


def test_gains_verbatim():
    x = _noise(500)
    assert np.allclose(attack_forward(x, SR, AttackSpec("duck"))[0], 10 * x)
    assert np.allclose(attack_forward(x, SR, AttackSpec("boost"))[0], 0.1 * x)


def test_suppress_fraction():
    x = np.ones((2, 10_000))
    y, _ = attack_forward(x, SR, AttackSpec("suppress"), np.random.default_rng(0))
    assert np.all(np.sum(y == 0, axis=-1) == 300)


def test_speed_output_shorter():
    x = _noise(8820)
    y, _ = attack_forward(x, SR, AttackSpec("speed"))
    assert y.shape[-1] == (8820 - 1) // 1.25 + 1


def test_smooth_moving_average():
    x = np.zeros((1, 200))
    x[0, 100] = 1.0
    y, _ = attack_forward(x, SR, AttackSpec("smooth", {"window": 4}))
    assert abs(y.sum() - 1.0) < 1e-12
    assert np.count_nonzero(np.abs(y) > 1e-15) == 4


def test_resample_roundtrip_bandlimited():
    t = np.arange(SR) / SR
    rng = np.random.default_rng(2)
    freqs = rng.uniform(100, 14_000, 20)
    x = sum(np.sin(2 * np.pi * f * t + rng.uniform(0, 6)) for f in freqs)[None] / 20
    y, _ = attack_forward(x, SR, AttackSpec("resample"))
    assert y.shape == x.shape
    core = slice(2000, -2000)
    assert si_snr(AudioClip(x[:, core]), AudioClip(y[:, core])) >= 40


def test_mdct_perfect_reconstruction():
    x = _noise(9000, 3)
    for window in (1024, 1152):
        assert np.max(np.abs(imdct(mdct(x, window), window, 9000) - x)) < 1e-10


def test_codec_surrogates_degrade_but_keep_signal():
    x = _noise(SR, 4, scale=0.2)
    for kind in ("codec_surrogate_mp3", "codec_surrogate_aac"):
        y, tape = attack_forward(x, SR, AttackSpec(kind))
        snr = si_snr(AudioClip(x), AudioClip(y))
        assert 0 < snr < 60
        assert AttackSpec(kind).grad_mode == STRAIGHT_THROUGH


def test_noise_levels():
    x = np.zeros((2, 200_000))
    g, _ = attack_forward(x, SR, AttackSpec("noise_gaussian"), np.random.default_rng(0))
    p, _ = attack_forward(x, SR, AttackSpec("noise_pink"), np.random.default_rng(0))
    assert abs(g.std() - 0.05) < 1e-3
    assert abs(p.std() - 0.1) < 2e-3
    spec = np.abs(np.fft.rfft(p[0])) ** 2
    assert spec[100:1000].mean() > 10 * spec[10_000:100_000].mean()


@pytest.mark.parametrize("kind", sorted(STOCHASTIC_KINDS))
def test_stochastic_reproducible(kind):
    x = _noise(6000, 5)
    a, _ = attack_forward(x, SR, AttackSpec(kind), np.random.default_rng(9))
    b, _ = attack_forward(x, SR, AttackSpec(kind), np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_stochastic_requires_rng():
    with pytest.raises((ValueError, AttackContractError)):
        attack_forward(_noise(100), SR, AttackSpec("noise_gaussian"))


def test_regen_is_eval_only():
    x = _noise(4000)
    y, tape = attack_forward(x, SR, AttackSpec("regen_surrogate"), np.random.default_rng(0))
    assert y.shape == x.shape
    assert GRAD_MODES["regen_surrogate"] == EVAL_ONLY
    with pytest.raises(AttackContractError):
        attack_vjp(AttackSpec("regen_surrogate"), tape, y)


def test_invalid_params():
    with pytest.raises(AttackParamError):
        AttackSpec("lowpass", {"cutoff": -5})
    with pytest.raises(AttackParamError):
        AttackSpec("nope")
    with pytest.raises(AttackParamError):
        AttackSpec("echo", {"gain": 2})


def test_fir_adjoint_identity():
    rng = np.random.default_rng(6)
    h = design_fir("lowpass", SR, 500.0)
    for _ in range(10):
        x, w = rng.standard_normal((2, 2, 3000))
        assert abs(np.sum(fir_apply(x, h) * w) - np.sum(x * fir_adjoint(w, h))) < 1e-9


def test_upfirdn_adjoint_identity():
    rng = np.random.default_rng(7)
    for up, down in [(320, 441), (441, 320), (4, 5)]:
        op = Upfirdn(up, down, 1000)
        x = rng.standard_normal((2, 1000))
        y = op.forward(x)
        w = rng.standard_normal(y.shape)
        assert abs(np.sum(y * w) - np.sum(x * op.adjoint(w))) < 1e-9


def _fd_attack(spec, n=8820, seed=0, directions=5, h=1e-6):
    rng = np.random.default_rng(seed)
    x = 0.3 * rng.standard_normal((2, n))
    y, tape = attack_forward(x, SR, spec, np.random.default_rng(1))
    w = rng.standard_normal(y.shape)
    g = attack_vjp(spec, tape, w)
    worst = 0.0
    for _ in range(directions):
        u = rng.standard_normal(x.shape)
        fp = np.sum(attack_forward(x + h * u, SR, spec, np.random.default_rng(1))[0] * w)
        fm = np.sum(attack_forward(x - h * u, SR, spec, np.random.default_rng(1))[0] * w)
        fd = (fp - fm) / (2 * h)
        an = float(np.sum(g * u))
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an)))
    return worst


@pytest.mark.parametrize("kind", [k for k in ATTACK_KINDS if GRAD_MODES[k] == EXACT])
def test_exact_attacks_finite_difference(kind):
    assert _fd_attack(AttackSpec(kind)) < 1e-5


def test_straight_through_resizes_cotangent():
    spec = AttackSpec("codec_surrogate_aac")
    x = _noise(5000)
    y, tape = attack_forward(x, SR, spec)
    g = attack_vjp(spec, tape, np.ones_like(y))
    assert g.shape == x.shape


def test_sampler_coverage_and_exclusion():
    sampler = AttackSampler()
    rng = np.random.default_rng(0)
    draws = [sample_training_attack(sampler, rng) for _ in range(10_000)]
    kinds = {d.kind for d in draws}
    assert kinds == set(TRAINABLE_KINDS) | {"identity"}
    assert "regen_surrogate" not in kinds
    assert all(in_training_range(d) for d in draws)


def test_sampler_deterministic():
    a = [AttackSampler().sample(np.random.default_rng(4)) for _ in range(3)]
    s1 = [sample_training_attack(AttackSampler(), r) for r in [np.random.default_rng(4)] * 50]
    s2 = [sample_training_attack(AttackSampler(), r) for r in [np.random.default_rng(4)] * 50]
    assert s1 == s2 and a[0] == a[1]


def test_sampler_rejects_empty_and_eval_only():
    with pytest.raises(AttackParamError):
        AttackSampler(kinds=(), include_identity=False)
    with pytest.raises(AttackParamError):
        AttackSampler(kinds=("regen_surrogate",))


def test_training_ranges_exclude_evaluation_values():
    # the declared bandpass ranges (low 300-800, high 4000-8000) contain 500-5000
    inside = {k for k in TRAINABLE_KINDS if in_training_range(AttackSpec(k))}
    assert inside == {"bandpass"}


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_sampled_specs_valid(seed):
    spec = AttackSampler().sample(np.random.default_rng(seed))
    assert in_training_range(spec)
    assert spec.grad_mode != EVAL_ONLY


def test_external_codec_missing_binary():
    clip = AudioClip(_noise(2000), SR)
    out, ok = external_codec_roundtrip(clip, AttackSpec("codec_surrogate_mp3"), binary="no-such-encoder")
    assert out is None and ok is False
