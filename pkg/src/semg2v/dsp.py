"""EMG conditioning: zero-phase Butterworth bandpass and power-line notches."""

from dataclasses import dataclass

import numpy as np
from scipy import signal

EMG_RATE = 2000
AUDIO_RATE = 16000
EMG_CHANNELS = 5
MIN_EMG_SAMPLES = 128


class SignalError(ValueError):
    pass


@dataclass
class EmgRecording:
    """Multichannel EMG, stored as (channels, samples)."""

    data: np.ndarray
    sample_rate: int = EMG_RATE

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise SignalError(f"EMG must be 2-D (channels, samples), got shape {self.data.shape}")
        if self.sample_rate != EMG_RATE:
            raise SignalError(f"EMG sample rate must be {EMG_RATE} Hz, got {self.sample_rate}")
        if self.data.shape[0] != EMG_CHANNELS:
            raise SignalError(f"expected {EMG_CHANNELS} EMG channels, got {self.data.shape[0]}")
        if self.data.shape[1] < MIN_EMG_SAMPLES:
            raise SignalError(f"EMG shorter than one frame ({self.data.shape[1]} < {MIN_EMG_SAMPLES} samples)")

    @property
    def length(self):
        return self.data.shape[1]

    @property
    def duration(self):
        return self.length / self.sample_rate


@dataclass
class AudioWaveform:
    samples: np.ndarray
    sample_rate: int = AUDIO_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise SignalError("audio must be mono")
        if self.sample_rate != AUDIO_RATE:
            raise SignalError(f"audio sample rate must be {AUDIO_RATE} Hz, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise SignalError("audio contains non-finite samples")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


def _check_finite(data):
    if not np.all(np.isfinite(data)):
        raise SignalError("EMG contains non-finite samples")


def _zero_phase(sos, data, n_poles):
    # odd reflection, 3x the filter order on each side
    return signal.sosfiltfilt(sos, data, axis=-1, padtype="odd",
                              padlen=min(3 * n_poles, data.shape[-1] - 1))


def bandpass_sos(low=4.0, high=400.0, fs=EMG_RATE, order=4):
    return signal.butter(order, [low, high], btype="bandpass", fs=fs, output="sos")


def bandpass(rec: EmgRecording, low=4.0, high=400.0, order=4) -> EmgRecording:
    """Zero-phase Butterworth bandpass applied to every channel."""
    nyq = rec.sample_rate / 2
    if not 0 < low < high < nyq:
        raise SignalError(f"invalid band edges ({low}, {high}) for Nyquist {nyq}")
    _check_finite(rec.data)
    sos = bandpass_sos(low, high, rec.sample_rate, order)
    return EmgRecording(_zero_phase(sos, rec.data, 2 * order), rec.sample_rate)


def notch_frequencies(base=50.0, max_freq=400.0, fs=EMG_RATE):
    nyq = fs / 2
    if base <= 0:
        raise SignalError("notch base frequency must be positive")
    if base >= nyq:
        raise SignalError(f"notch base {base} Hz is at or above Nyquist {nyq} Hz")
    if max_freq > nyq:
        raise SignalError(f"notch max {max_freq} Hz exceeds Nyquist {nyq} Hz")
    freqs = base * np.arange(1, int(np.floor(max_freq / base + 1e-9)) + 1)
    # a notch exactly at Nyquist is degenerate
    return [f for f in freqs if f < nyq]


def notch_sos(base=50.0, max_freq=400.0, fs=EMG_RATE, q=30.0):
    sections = []
    for f0 in notch_frequencies(base, max_freq, fs):
        b, a = signal.iirnotch(f0, q, fs=fs)
        sections.append(np.concatenate([b, a]))
    return np.array(sections)


def notch_harmonics(rec: EmgRecording, base=50.0, max_freq=400.0, q=30.0) -> EmgRecording:
    """Remove power-line interference at ``base`` and its harmonics up to ``max_freq``."""
    _check_finite(rec.data)
    sos = notch_sos(base, max_freq, rec.sample_rate, q)
    return EmgRecording(_zero_phase(sos, rec.data, 2 * len(sos)), rec.sample_rate)


def condition(rec: EmgRecording, low=4.0, high=400.0, order=4, notch_base=50.0, notch_q=30.0) -> EmgRecording:
    """Bandpass then notch every ``notch_base`` harmonic up to ``high``."""
    return notch_harmonics(bandpass(rec, low, high, order), notch_base, high, notch_q)
