"""Objective metrics: character error rate, mel-cepstral distortion and STOI."""

import warnings
from dataclasses import dataclass
from math import gcd

import numpy as np
from scipy.fft import dct
from scipy.signal import resample_poly

from .dsp import AUDIO_RATE, AudioWaveform
from .dtw import dtw_basic
from .features import MEL_WIN, mel_spectrogram

MCD_ORDER = 13
MCD_SCALE = 10.0 / np.log(10.0)

# STOI constants
STOI_FS = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MINFREQ = 150
STOI_SEGMENT = 30
STOI_BETA = -15.0
STOI_DYN_RANGE = 40.0
_EPS = np.finfo(np.float64).eps


@dataclass
class MetricReport:
    cer: float
    mcd: float
    stoi: float


def levenshtein(a, b):
    """Unit-cost edit distance between two sequences."""
    a, b = list(a), list(b)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, cb in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb))
        prev = cur
    return prev[-1]


def cer(reference, hypothesis):
    """Character error rate; may exceed 1 when the hypothesis inserts characters."""
    if len(reference) == 0:
        raise ValueError("reference transcript is empty")
    return levenshtein(reference, hypothesis) / len(reference)


def _samples(audio):
    if isinstance(audio, AudioWaveform):
        return audio.samples
    return np.asarray(audio, dtype=np.float64)


def mel_cepstrum(audio, order=MCD_ORDER):
    """(T, order) DCT-II cepstra of the log-mel analysis; column 0 is c0."""
    x = _samples(audio)
    if len(x) < MEL_WIN:
        raise ValueError(f"audio shorter than one {MEL_WIN}-sample analysis window")
    logmel = mel_spectrogram(AudioWaveform(x)).frames
    return dct(logmel, type=2, norm="ortho", axis=1)[:, :order]


def mcd_from_cepstra(c_ref, c_hyp):
    """DTW-aligned mean mel-cepstral distortion in dB, c0 excluded."""
    a, b = np.asarray(c_ref)[:, 1:], np.asarray(c_hyp)[:, 1:]
    path = dtw_basic(a, b)
    i, j = path.pairs[:, 0], path.pairs[:, 1]
    diff = a[i] - b[j]
    return float(np.mean(MCD_SCALE * np.sqrt(2.0 * (diff ** 2).sum(axis=1))))


def mcd(ref, hyp):
    return mcd_from_cepstra(mel_cepstrum(ref), mel_cepstrum(hyp))


# -- STOI ------------------------------------------------------------------

def third_octave_bands(fs=STOI_FS, nfft=STOI_NFFT, num_bands=STOI_BANDS, min_freq=STOI_MINFREQ):
    """One-third-octave band matrix (num_bands, nfft//2+1) and centre frequencies."""
    f = np.linspace(0, fs, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(num_bands)
    centres = np.power(2.0, k / 3.0) * min_freq
    low = min_freq * np.power(2.0, (2 * k - 1) / 6.0)
    high = min_freq * np.power(2.0, (2 * k + 1) / 6.0)
    obm = np.zeros((num_bands, len(f)))
    for band in range(num_bands):
        lo = int(np.argmin(np.square(f - low[band])))
        hi = int(np.argmin(np.square(f - high[band])))
        obm[band, lo:hi] = 1.0
    return obm, centres


def _frames(x, framelen, hop):
    w = np.hanning(framelen + 2)[1:-1]
    starts = range(0, len(x) - framelen, hop)
    return np.array([w * x[s:s + framelen] for s in starts]).reshape(-1, framelen)


def _overlap_add(frames, hop):
    n, framelen = frames.shape
    out = np.zeros((n - 1) * hop + framelen) if n else np.zeros(0)
    for k in range(n):
        out[k * hop:k * hop + framelen] += frames[k]
    return out


def remove_silent_frames(x, y, dyn_range=STOI_DYN_RANGE, framelen=STOI_FRAME, hop=STOI_FRAME // 2):
    """Drop frames more than ``dyn_range`` dB below the loudest reference frame."""
    xf, yf = _frames(x, framelen, hop), _frames(y, framelen, hop)
    energy = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    keep = (np.max(energy) - dyn_range - energy) < 0
    return _overlap_add(xf[keep], hop), _overlap_add(yf[keep], hop)


def _stft(x, win=STOI_FRAME, nfft=STOI_NFFT, hop=STOI_FRAME // 2):
    w = np.hanning(win + 2)[1:-1]
    return np.array([np.fft.rfft(w * x[s:s + win], n=nfft) for s in range(0, len(x) - win, hop)]).T


def _resample(x, fs_in, fs_out):
    if fs_in == fs_out:
        return np.asarray(x, dtype=np.float64)
    g = gcd(int(fs_in), int(fs_out))
    return resample_poly(x, fs_out // g, fs_in // g)


def stoi(ref, hyp, fs=AUDIO_RATE):
    """Short-time objective intelligibility of ``hyp`` against clean ``ref``."""
    x, y = _samples(ref), _samples(hyp)
    if x.shape != y.shape:
        raise ValueError(f"signals differ in length: {len(x)} vs {len(y)}")
    if len(x) < 0.384 * fs:
        raise ValueError("STOI needs at least 384 ms of audio")
    x, y = _resample(x, fs, STOI_FS), _resample(y, fs, STOI_FS)
    x, y = remove_silent_frames(x, y)
    if len(x) <= STOI_FRAME:
        warnings.warn("no non-silent frames left; returning 1e-5", RuntimeWarning)
        return 1e-5
    obm, _ = third_octave_bands()
    x_tob = np.sqrt(obm @ np.square(np.abs(_stft(x))))
    y_tob = np.sqrt(obm @ np.square(np.abs(_stft(y))))
    n = x_tob.shape[1]
    if n < STOI_SEGMENT:
        warnings.warn("fewer than 30 active frames; returning 1e-5", RuntimeWarning)
        return 1e-5
    xs = np.array([x_tob[:, m - STOI_SEGMENT:m] for m in range(STOI_SEGMENT, n + 1)])
    ys = np.array([y_tob[:, m - STOI_SEGMENT:m] for m in range(STOI_SEGMENT, n + 1)])
    scale = np.linalg.norm(xs, axis=2, keepdims=True) / (np.linalg.norm(ys, axis=2, keepdims=True) + _EPS)
    clip = 10.0 ** (-STOI_BETA / 20.0)
    yp = np.minimum(ys * scale, xs * (1.0 + clip))
    yp = yp - yp.mean(axis=2, keepdims=True)
    xs = xs - xs.mean(axis=2, keepdims=True)
    yp = yp / (np.linalg.norm(yp, axis=2, keepdims=True) + _EPS)
    xs = xs / (np.linalg.norm(xs, axis=2, keepdims=True) + _EPS)
    J, M = xs.shape[0], xs.shape[1]
    return float(np.sum(yp * xs) / (J * M))
