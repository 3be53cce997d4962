import json
import math

import numpy as np
import pytest

import fcac


def test_hamming_window_endpoints():
    w = fcac.hamming_window(3)
    assert w[0] == pytest.approx(0.08, abs=1e-12)
    assert w[1] == pytest.approx(1.0, abs=1e-12)
    assert w[2] == pytest.approx(0.08, abs=1e-12)


def test_log_mel_shape_and_determinism():
    clip = fcac.synth_clip(2, duration_s=0.3, noise_level=0.05, signature_seed=7, clip_seed=9)
    spec = fcac.log_mel_spectrogram(clip, n_mels=32, fmin_hz=100.0)
    assert spec.shape == (28, 32)
    again = fcac.log_mel_spectrogram(clip, n_mels=32, fmin_hz=100.0)
    assert np.array_equal(spec, again)


def test_mel_filterbank_rows_positive():
    fb = fcac.mel_filterbank(n_mels=26, sample_rate=16000, n_fft=512)
    assert fb.shape == (26, 257)
    assert (fb >= 0.0).all()
    assert (fb.sum(axis=1) > 0.0).all()


def test_aa_pd_anchor_row():
    row = [100.0, 99.40, 98.88, 96.90, 96.33, 95.55, 93.50, 92.47, 92.88, 91.73]
    aa, pd = fcac.aa_pd(row, "all")
    assert abs(aa - 95.77) <= 0.01
    assert pd == pytest.approx(8.27, abs=1e-12)


def test_supcon_matches_numpy_reference():
    rng = np.random.default_rng(3)
    rows = rng.normal(size=(6, 4))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    labels = [0, 0, 1, 1, 2, 2]
    tau = 0.2

    total = 0.0
    for a in range(6):
        sims = rows @ rows[a] / tau
        denom = sum(math.exp(sims[m]) for m in range(6) if m != a)
        inner = [math.log(math.exp(sims[i]) / denom)
                 for i in range(6) if i != a and labels[i] == labels[a]]
        total += -sum(inner) / len(inner)

    assert fcac.supcon_loss(rows, labels, tau) == pytest.approx(total, abs=1e-10)


def test_stochastic_sampler_collapses_at_zero_sigma():
    mu = np.arange(12, dtype=float).reshape(3, 4)
    w = fcac.sample_weights(mu, np.zeros_like(mu), seed=5)
    assert np.array_equal(w, mu)
    noisy1 = fcac.sample_weights(mu, np.full_like(mu, 0.3), seed=5)
    noisy2 = fcac.sample_weights(mu, np.full_like(mu, 0.3), seed=5)
    assert np.array_equal(noisy1, noisy2)


def test_predict_tie_breaks_to_smaller_class_id():
    mu = np.array([[1.0, 1.0], [0.0, 0.0]])
    cls, scores = fcac.predict(np.array([1.0, 0.2]), mu, [4, 2])
    assert cls == 2
    assert len(scores) == 2


def test_run_protocol_smoke():
    config = {
        "seed": 5,
        "dsp": {"n_mels": 16, "fmin_hz": 100.0},
        "embedder": {"embedding_dim": 8, "channels": [2, 2], "blocks": [1, 1],
                     "projection_dim": 4},
        "optimizer": {"learning_rate": 0.05, "momentum": 0.9},
        "protocol": {"n_base_classes": 3, "sessions": 1, "way": 2, "shot": 3,
                     "base_epochs": 2, "classifier_epochs": 2, "incremental_epochs": 3,
                     "batch_size": 8},
        "dataset": {"kind": "synthetic", "classes": 5, "train_per_class": 4,
                    "eval_per_class": 1, "duration_s": 0.12, "noise_level": 0.05},
    }
    report = json.loads(fcac.run_protocol_json(json.dumps(config)))
    assert len(report["sessions"]) == 2
    assert report["sessions"][0]["incr"] is None
    assert report["sessions"][1]["incr"] is not None
    assert report["summary"]["all"] is not None

    again = json.loads(fcac.run_protocol_json(json.dumps(config)))
    assert again == report
