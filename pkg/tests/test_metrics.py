import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import lfilter

from semg2v.dsp import AudioWaveform
from semg2v.features import LOG_FLOOR, MelSpectrogram, mel_spectrogram
from semg2v.metrics import MCD_SCALE, cer, levenshtein, mcd, mcd_from_cepstra, stoi
from semg2v.synth import SyntheticSpec, generate_utterance
from semg2v.vocoder import griffin_lim, griffin_lim_magnitude, mel_to_linear

FS = 16000


@pytest.fixture(scope="module")
def speech():
    """Harmonic, formant-shaped test signal from the synthetic generator."""
    utt = generate_utterance(SyntheticSpec(n_utterances=1, syllables_per_utterance=(4, 4), seed=3), 0)
    return utt.audio


def tone(freq, seconds=1.0, amp=0.5):
    return amp * np.sin(2 * np.pi * freq * np.arange(int(seconds * FS)) / FS)


# -- Griffin-Lim ---------------------------------------------------------------

def test_griffin_lim_tone_peak():
    mel = mel_spectrogram(AudioWaveform(tone(440.0, 2.0)))
    out = griffin_lim(mel, iters=60, seed=0).samples
    spec = np.abs(np.fft.rfft(out * np.hanning(len(out))))
    peak = np.argmax(spec) * FS / len(out)
    assert abs(peak - 440.0) <= FS / 1024


def test_griffin_lim_silence():
    mel = MelSpectrogram(np.full((40, 80), np.log(LOG_FLOOR)))
    out = griffin_lim(mel, iters=10).samples
    assert np.sqrt(np.mean(out ** 2)) < 1e-4


def test_griffin_lim_error_non_increasing():
    mel = mel_spectrogram(AudioWaveform(tone(300.0) + tone(1200.0, amp=0.2)))
    _, errors = griffin_lim_magnitude(mel_to_linear(mel.frames), iters=60, seed=0, return_errors=True)
    assert errors[59] <= errors[29]


def test_griffin_lim_length_and_determinism():
    mel = mel_spectrogram(AudioWaveform(tone(500.0, 1.5)))
    a, b = griffin_lim(mel, iters=5, seed=1), griffin_lim(mel, iters=5, seed=1)
    assert abs(len(a.samples) - len(mel) * 256) <= 1024
    assert a.samples.tobytes() == b.samples.tobytes()


def test_griffin_lim_rejects_non_finite():
    frames = np.zeros((5, 80))
    frames[2, 3] = np.nan
    with pytest.raises(ValueError):
        griffin_lim(MelSpectrogram(frames))


# -- CER ------------------------------------------------------------------------

def test_cer_examples():
    assert cer("你好吗", "你好吗") == 0
    assert cer("你好吗", "你好") == pytest.approx(1 / 3)
    assert cer("a", "abc") == 2.0
    with pytest.raises(ValueError):
        cer("", "abc")


@settings(max_examples=200)
@given(st.text("abc", max_size=6), st.text("abc", max_size=6), st.text("abc", max_size=6))
def test_levenshtein_triangle(a, b, c):
    assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)
    assert levenshtein(a, b) == levenshtein(b, a)


# -- MCD --------------------------------------------------------------------------

def test_mcd_identity(speech):
    assert mcd(speech, speech) == 0.0


def test_mcd_single_coefficient():
    a = np.zeros((1, 13))
    b = a.copy()
    b[0, 5] = 1.0
    assert abs(mcd_from_cepstra(a, b) - (10 / math.log(10)) * math.sqrt(2)) < 1e-9
    assert MCD_SCALE * math.sqrt(2) == pytest.approx(6.1418, abs=1e-4)
    # c0 is excluded
    b[0, 5], b[0, 0] = 0.0, 7.0
    assert mcd_from_cepstra(a, b) == 0.0


def test_mcd_symmetric(speech):
    rng = np.random.default_rng(0)
    noisy = speech + 0.01 * rng.normal(size=len(speech))
    assert mcd(speech, noisy) == pytest.approx(mcd(noisy, speech), abs=1e-12)
    assert mcd(speech, noisy) > 0


def test_mcd_too_short():
    with pytest.raises(ValueError):
        mcd(np.zeros(500), np.zeros(500))


# -- STOI ---------------------------------------------------------------------------

def test_stoi_identities(speech):
    assert abs(stoi(speech, speech) - 1.0) < 1e-6
    assert abs(stoi(speech, 0.5 * speech) - 1.0) < 1e-6


def test_stoi_noise_low(speech):
    # independent noise with its own syllabic envelope; stationary noise scores
    # higher because the clipping step pulls its envelope towards the reference
    rng = np.random.default_rng(1)
    t = np.arange(len(speech)) / FS
    envelope = np.maximum(np.sin(2 * np.pi * 3.1 * t + rng.uniform(0, 6)), 0) ** 2
    noise = lfilter([1.0], [1.0, -0.95], rng.normal(size=len(speech))) * envelope
    assert stoi(speech, noise) < 0.3


def test_stoi_matches_reference_at_10k(speech):
    pystoi = pytest.importorskip("pystoi")
    from scipy.signal import resample_poly
    x = resample_poly(speech, 5, 8)
    y = x + 0.3 * np.random.default_rng(2).normal(size=len(x)) * np.std(x)
    assert stoi(x, y, fs=10000) == pytest.approx(pystoi.stoi(x, y, 10000), abs=1e-9)


def test_stoi_close_to_reference_at_16k(speech):
    pystoi = pytest.importorskip("pystoi")
    y = speech + 0.3 * np.random.default_rng(3).normal(size=len(speech)) * np.std(speech)
    # resampler filters differ slightly between the two implementations
    assert stoi(speech, y) == pytest.approx(pystoi.stoi(speech, y, FS), abs=1e-3)


def test_stoi_errors(speech):
    with pytest.raises(ValueError):
        stoi(speech, speech[:-10])
    with pytest.raises(ValueError):
        stoi(np.zeros(1000), np.zeros(1000))


def test_trailing_silence_invariance(speech):
    # a mild spectral tilt: distortion spread evenly over frames
    hyp = lfilter([1.0, 0.3], [1.0], speech)
    pad = np.zeros(256)
    assert abs(stoi(speech, hyp) - stoi(np.r_[speech, pad], np.r_[hyp, pad])) < 1e-3
    assert abs(mcd(speech, hyp) - mcd(np.r_[speech, pad], np.r_[hyp, pad])) < 1e-3
