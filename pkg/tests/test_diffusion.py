from __future__ import annotations

import math

import numpy as np
import pytest

from src.core.diffusion import (
    GaussianPriorPredictor,
    LinearPredictor,
    ZeroPredictor,
    ddim_denoise_estimate,
    ddim_invert,
    ddim_sample,
    detect_message,
    forward_noise,
    generate_pair,
    generate_plain,
    generate_watermarked,
    make_predictor,
    make_schedule,
    recover_spectrum,
)
from src.core.attacks import AttackSpec, apply_attack
from src.core.errors import InvalidArgumentError
from src.core.metrics import auc, bit_accuracy, detection_score, word_accuracy
from src.core.ring_codec import Message, WatermarkKey, decode_bits
from src.core.tensors import LatentTensor, Rng, sample_gaussian


def _rel_l2(a: LatentTensor, b: LatentTensor) -> float:
    return float(np.linalg.norm(a.data - b.data) / np.linalg.norm(b.data))


def _sample_gain(coeffs, ab) -> float:
    """Product of the per-step scalar multipliers of deterministic sampling."""
    gain = 1.0
    for t in range(len(ab) - 1, 0, -1):
        c = coeffs[t - 1]
        gain *= (1 - math.sqrt(1 - ab[t]) * c) / math.sqrt(ab[t]) * math.sqrt(ab[t - 1]) + math.sqrt(1 - ab[t - 1]) * c
    return gain


def _invert_gain(coeffs, ab) -> float:
    gain = 1.0
    for t in range(0, len(ab) - 1):
        c = coeffs[max(t, 1) - 1]
        gain *= (1 - math.sqrt(1 - ab[t]) * c) / math.sqrt(ab[t]) * math.sqrt(ab[t + 1]) + math.sqrt(1 - ab[t + 1]) * c
    return gain


def test_schedule_shape_and_validation():
    sched = make_schedule(40)
    assert sched.alpha_bar.shape == (41,)
    assert sched.alpha_bar[0] == 1.0
    assert np.all(np.diff(sched.alpha_bar) < 0)
    with pytest.raises(InvalidArgumentError):
        make_schedule(0)
    with pytest.raises(InvalidArgumentError):
        make_schedule(10, beta_start=0.1, beta_end=0.01)


def test_forward_noise_endpoints(short_schedule):
    x0 = sample_gaussian(Rng(1), (1, 8, 8))
    eps = sample_gaussian(Rng(2), (1, 8, 8))
    np.testing.assert_array_equal(forward_noise(x0, eps, 0, short_schedule).data, x0.data)
    with pytest.raises(InvalidArgumentError):
        forward_noise(x0, eps, 11, short_schedule)


def test_denoise_estimate_of_zero_predictor(short_schedule, zero_predictor):
    xt = sample_gaussian(Rng(3), (1, 8, 8))
    est = ddim_denoise_estimate(xt, 5, zero_predictor, short_schedule)
    np.testing.assert_allclose(est.data, xt.data / short_schedule.sqrt_ab(5), rtol=1e-12)
    with pytest.raises(InvalidArgumentError):
        ddim_denoise_estimate(xt, 0, zero_predictor, short_schedule)


def test_gaussian_prior_recovers_the_prior_mean(short_schedule):
    mu = 1.5
    pred = GaussianPriorPredictor(mean=mu, variance=0.8)
    for t in (1, 5, 10):
        xt = LatentTensor(np.full((1, 4, 4), short_schedule.sqrt_ab(t) * mu))
        est = ddim_denoise_estimate(xt, t, pred, short_schedule)
        np.testing.assert_allclose(est.data, mu, atol=1e-12)


def test_zero_predictor_round_trip(short_schedule, zero_predictor):
    xT = sample_gaussian(Rng(4), (2, 16, 16))
    x0 = ddim_sample(xT, zero_predictor, short_schedule)
    np.testing.assert_allclose(x0.data, xT.data / short_schedule.sqrt_ab(10), rtol=1e-12)
    np.testing.assert_allclose(ddim_invert(x0, zero_predictor, short_schedule).data, xT.data, atol=1e-9)


def test_sample_from_step_zero_is_identity(short_schedule, prior_predictor):
    x = sample_gaussian(Rng(5), (1, 8, 8))
    np.testing.assert_array_equal(ddim_sample(x, prior_predictor, short_schedule, start_step=0).data, x.data)


@pytest.mark.parametrize("steps", [5, 40])
def test_linear_predictor_matches_scalar_recurrence(steps):
    sched = make_schedule(steps)
    coeffs = 0.3 * Rng(steps).standard_normal(steps)
    pred = LinearPredictor(coeffs)
    ab = sched.alpha_bar
    xT = sample_gaussian(Rng(6), (1, 4, 4))

    x0 = ddim_sample(xT, pred, sched)
    np.testing.assert_allclose(x0.data, _sample_gain(coeffs, ab) * xT.data, rtol=1e-12)

    back = ddim_invert(x0, pred, sched)
    expected = _invert_gain(coeffs, ab) * _sample_gain(coeffs, ab) * xT.data
    np.testing.assert_allclose(back.data, expected, rtol=1e-12)


def test_linear_predictor_scalar_and_length_checks(short_schedule):
    x = np.ones((1, 2, 2))
    np.testing.assert_array_equal(LinearPredictor(0.0)(x, 3, short_schedule), np.zeros_like(x))
    with pytest.raises(InvalidArgumentError):
        LinearPredictor([0.1, 0.2])(x, 1, short_schedule)


def test_gaussian_prior_round_trip_is_close(full_schedule, prior_predictor):
    xT = sample_gaussian(Rng(7), (1, 64, 64))
    x0 = ddim_sample(xT, prior_predictor, full_schedule)
    assert _rel_l2(ddim_invert(x0, prior_predictor, full_schedule), xT) < 0.15


def test_round_trip_error_grows_with_prior_mean(full_schedule):
    zero = LatentTensor.zeros(1, 16, 16)
    errors = []
    for mean in (0.0, 1.0, 4.0):
        pred = GaussianPriorPredictor(mean=mean, variance=0.8)
        back = ddim_invert(ddim_sample(zero, pred, full_schedule), pred, full_schedule)
        errors.append(float(np.linalg.norm(back.data)))
    assert errors[0] == 0.0
    assert errors[0] <= errors[1] <= errors[2]


def test_make_predictor():
    assert isinstance(make_predictor({"kind": "zero"}), ZeroPredictor)
    prior = make_predictor({"kind": "gaussian_prior", "mean": 0.5})
    assert prior.variance == 1.0
    assert prior.to_json() == {"kind": "gaussian_prior", "mean": 0.5, "variance": 1.0}
    assert make_predictor({"kind": "linear", "coefficients": [0.1]}).to_json()["coefficients"] == [0.1]
    with pytest.raises(InvalidArgumentError):
        make_predictor({"kind": "unet"})
    with pytest.raises(InvalidArgumentError):
        make_predictor({"kind": "zero", "mean": 1.0})
    with pytest.raises(InvalidArgumentError):
        make_predictor({"kind": "gaussian_prior", "variance": 0.0})


def test_watermarked_generation_is_detected(short_schedule, zero_predictor, small_key):
    msg = Message.from_string("110010")
    gen = generate_watermarked(Rng(9), small_key, msg, zero_predictor, short_schedule, channels=2)
    assert gen.image.shape == (2, 32, 32)
    assert gen.xT_wm.imag_residual < 1e-6
    report = detect_message(gen.image, small_key, zero_predictor, short_schedule, expected=msg)
    assert report.present
    assert report.bits == msg
    assert report.reference == "expected"
    blind = detect_message(gen.image, small_key, zero_predictor, short_schedule)
    assert blind.reference == "decoded"
    assert blind.bits == msg


def test_generation_is_deterministic(short_schedule, prior_predictor, small_key):
    msg = Message.from_string("000111")
    a = generate_pair(Rng(10), small_key, msg, prior_predictor, short_schedule)
    b = generate_pair(Rng(10), small_key, msg, prior_predictor, short_schedule)
    np.testing.assert_array_equal(a.watermarked.image.data, b.watermarked.image.data)
    np.testing.assert_array_equal(a.plain.data, b.plain.data)
    # the plain image shares the watermarked one's initial noise
    np.testing.assert_array_equal(
        a.plain.data, generate_plain(Rng(10), (1, 32, 32), prior_predictor, short_schedule).image.data
    )


def test_all_zero_image_is_degenerate(short_schedule, zero_predictor, small_key):
    report = detect_message(LatentTensor.zeros(1, 32, 32), small_key, zero_predictor, short_schedule,
                            expected=Message.from_string("101010"))
    assert report.degenerate
    assert report.p_value == 1.0
    assert not report.present
    assert report.to_json()["statistic"] is None


def test_gaussian_prior_world_decodes_every_message(full_schedule, prior_predictor):
    key = WatermarkKey(radius=10, scaler=100.0, height=64, width=64)
    for i in range(100):
        rng = Rng(99).child(i)
        msg = Message.random(rng.child(0), key.radius)
        gen = generate_watermarked(rng.child(1), key, msg, prior_predictor, full_schedule)
        assert decode_bits(recover_spectrum(gen.image, prior_predictor, full_schedule), key) == msg


def test_exact_inversion_world_separates_perfectly(full_schedule, zero_predictor):
    key = WatermarkKey(radius=10, scaler=100.0, height=64, width=64)
    pos, neg, truth, decoded = [], [], [], []
    for i in range(500):
        rng = Rng(500).child(i)
        msg = Message.random(rng.child(0), key.radius)
        pair = generate_pair(rng.child(1), key, msg, zero_predictor, full_schedule)
        report = detect_message(pair.watermarked.image, key, zero_predictor, full_schedule, expected=msg)
        plain = detect_message(pair.plain, key, zero_predictor, full_schedule, expected=msg)
        pos.append(detection_score(report.p_value))
        neg.append(detection_score(plain.p_value))
        truth.append(msg)
        decoded.append(report.bits)
    assert auc(pos, neg) == 1.0
    assert bit_accuracy(truth, decoded) == 1.0
    assert word_accuracy(truth, decoded) == 1.0


def test_single_step_schedule_and_beta_bounds():
    sched = make_schedule(1, beta_start=0.1, beta_end=0.1)
    assert sched.alpha_bar[1] == pytest.approx(0.9, abs=1e-15)
    with pytest.raises(InvalidArgumentError):
        make_schedule(10, beta_start=1e-4, beta_end=1.0)


def test_forward_noise_is_the_closed_form_mix(short_schedule):
    x0 = sample_gaussian(Rng(3).child(0), (2, 8, 8))
    eps = sample_gaussian(Rng(3).child(1), (2, 8, 8))
    ab = short_schedule.alpha_bar[5]
    expected = math.sqrt(ab) * x0.data + math.sqrt(1.0 - ab) * eps.data
    np.testing.assert_allclose(forward_noise(x0, eps, 5, short_schedule).data, expected, rtol=0, atol=1e-12)


def test_low_energy_images_still_get_a_p_value(full_schedule, prior_predictor):
    key = WatermarkKey(radius=10, scaler=100.0, height=64, width=64)
    msg = Message.random(Rng(6), key.radius)
    dim = apply_attack(generate_plain(Rng(6), (1, 64, 64), prior_predictor, full_schedule).image,
                       AttackSpec("brightness", {"factor": 0.1}))
    faint = LatentTensor(0.05 * sample_gaussian(Rng(8), (1, 64, 64)).data)
    for image in (dim, faint):
        report = detect_message(image, key, prior_predictor, full_schedule, expected=msg)
        assert not report.degenerate
        assert report.statistic.method == "scipy"
        assert 0.0 <= report.p_value <= 1.0
