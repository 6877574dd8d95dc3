"""Griffin-Lim resynthesis of 16 kHz audio from 80-band log-mel frames."""

import numpy as np

from .dsp import AUDIO_RATE, AudioWaveform
from .features import MEL_HOP, MEL_WIN, N_MELS, MelSpectrogram, frame_signal, mel_filterbank

_WINDOW = np.hanning(MEL_WIN + 1)[:-1]
_FB_PINV = np.linalg.pinv(mel_filterbank())


def mel_to_linear(log_mel):
    """Clipped pseudo-inverse of the mel filterbank: (T, 80) log-mel -> (T, 513) magnitude."""
    return np.maximum(np.exp(log_mel) @ _FB_PINV.T, 0.0)


def stft(x):
    return np.fft.rfft(frame_signal(x, MEL_WIN, MEL_HOP) * _WINDOW, axis=-1)


def istft(spec):
    """Least-squares overlap-add inverse of :func:`stft` (no padding)."""
    frames = np.fft.irfft(spec, n=MEL_WIN, axis=-1) * _WINDOW
    n = len(frames)
    length = (n - 1) * MEL_HOP + MEL_WIN
    out = np.zeros(length)
    norm = np.zeros(length)
    for t in range(n):
        s = t * MEL_HOP
        out[s:s + MEL_WIN] += frames[t]
        norm[s:s + MEL_WIN] += _WINDOW ** 2
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    return out


def spectral_error(magnitude, x):
    """Relative Frobenius error between a target magnitude and |STFT(x)|."""
    return float(np.linalg.norm(np.abs(stft(x)) - magnitude) / max(np.linalg.norm(magnitude), 1e-30))


def griffin_lim_magnitude(magnitude, iters=60, seed=0, return_errors=False):
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(magnitude.shape))
    errors = []
    x = istft(magnitude * phase)
    for _ in range(iters):
        spec = stft(x)
        phase = np.exp(1j * np.angle(spec))
        x = istft(magnitude * phase)
        if return_errors:
            errors.append(spectral_error(magnitude, x))
    return (x, errors) if return_errors else x


def griffin_lim(mel: MelSpectrogram, iters=60, seed=0) -> AudioWaveform:
    frames = mel.frames if isinstance(mel, MelSpectrogram) else np.asarray(mel, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != N_MELS:
        raise ValueError(f"expected (T, {N_MELS}) log-mel frames, got {frames.shape}")
    if not np.all(np.isfinite(frames)):
        raise ValueError("mel contains non-finite values")
    x = griffin_lim_magnitude(mel_to_linear(frames), iters, seed)
    peak = np.max(np.abs(x)) if x.size else 0.0
    if peak > 1.0:
        x = x / peak
    return AudioWaveform(x, AUDIO_RATE)
