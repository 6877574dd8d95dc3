"""Frame-level features: 355-dim EMG features and 80-dim log-mel spectrograms.

Both streams share a 62.5 Hz frame rate (2000/32 == 16000/256) and use
un-padded framing, so equal-duration recordings give equal frame counts.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d

from .dsp import AUDIO_RATE, EMG_RATE, AudioWaveform, EmgRecording

FRAME_RATE = 62.5
EMG_WIN, EMG_HOP = 128, 32
MEL_WIN, MEL_HOP = 1024, 256
N_MELS, MEL_FMIN, MEL_FMAX = 80, 80.0, 7600.0
LOG_FLOOR = 1e-10
N_TD = 6
N_STFT = EMG_WIN // 2 + 1
FEATURE_DIM = 5 * N_TD + 5 * N_STFT
SYNC_TOLERANCE = 2


class FramingError(ValueError):
    pass


@dataclass
class FeatureSequence:
    frames: np.ndarray
    mode: str = "vocal"
    frame_rate: float = FRAME_RATE

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != FEATURE_DIM:
            raise ValueError(f"feature width must be {FEATURE_DIM}, got shape {self.frames.shape}")
        if self.mode not in ("silent", "vocal"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("non-finite features")

    def __len__(self):
        return self.frames.shape[0]


@dataclass
class MelSpectrogram:
    frames: np.ndarray
    frame_rate: float = FRAME_RATE

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != N_MELS:
            raise ValueError(f"mel width must be {N_MELS}, got shape {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("non-finite mel values")

    def __len__(self):
        return self.frames.shape[0]


def n_frames(length, window_len, hop):
    if window_len <= 0 or hop <= 0:
        raise FramingError("window and hop must be positive")
    if length < window_len:
        raise FramingError(f"signal of {length} samples is shorter than one {window_len}-sample window")
    return 1 + (length - window_len) // hop


def frame_signal(samples, window_len, hop):
    """Contiguous, un-padded windows along the last axis: (..., T, window_len)."""
    samples = np.asarray(samples)
    T = n_frames(samples.shape[-1], window_len, hop)
    idx = np.arange(window_len)[None, :] + hop * np.arange(T)[:, None]
    return samples[..., idx]


def _double_average(x):
    # 9-point moving average applied twice; edge replication keeps constants exact
    once = uniform_filter1d(x, 9, axis=-1, mode="nearest")
    return uniform_filter1d(once, 9, axis=-1, mode="nearest")


def zero_crossing_rate(frames):
    signs = np.signbit(frames)
    return np.count_nonzero(signs[..., 1:] != signs[..., :-1], axis=-1) / frames.shape[-1]


def td_features(channel):
    """Six time-domain features per frame for a single channel -> (T, 6).

    Order: mean(w), power(w), power(p), zcr(p), mean(r), power(r) where w is
    the double-averaged low-frequency part, p = x - w and r = |p|.
    """
    channel = np.asarray(channel, dtype=np.float64)
    w = _double_average(channel)
    p = channel - w
    r = np.abs(p)
    fw, fp, fr = (frame_signal(s, EMG_WIN, EMG_HOP) for s in (w, p, r))
    return np.stack([
        fw.mean(-1),
        (fw ** 2).mean(-1),
        (fp ** 2).mean(-1),
        zero_crossing_rate(fp),
        fr.mean(-1),
        (fr ** 2).mean(-1),
    ], axis=-1)


def stft_magnitude(samples, window_len, hop, n_fft=None):
    frames = frame_signal(samples, window_len, hop)
    return np.abs(np.fft.rfft(frames * np.hanning(window_len + 1)[:-1], n=n_fft or window_len, axis=-1))


def raw_emg_features(rec: EmgRecording):
    """Un-normalised (T, 355) features: 5x6 TD block then 5x65 STFT block."""
    td = [td_features(ch) for ch in rec.data]
    spec = [stft_magnitude(ch, EMG_WIN, EMG_HOP) for ch in rec.data]
    return np.concatenate(td + spec, axis=1)


def znormalize(frames):
    mean = frames.mean(axis=0)
    std = frames.std(axis=0)
    centred = frames - mean
    out = np.zeros_like(frames)
    ok = std > 1e-12 * np.maximum(1.0, np.abs(mean))
    out[:, ok] = centred[:, ok] / std[ok]
    return out


def emg_features(rec: EmgRecording, mode="vocal", normalize=True) -> FeatureSequence:
    feats = raw_emg_features(rec)
    if normalize:
        feats = znormalize(feats)
    return FeatureSequence(feats, mode)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(n_mels=N_MELS, fmin=MEL_FMIN, fmax=MEL_FMAX):
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))


def mel_centers(n_mels=N_MELS, fmin=MEL_FMIN, fmax=MEL_FMAX):
    return mel_band_edges(n_mels, fmin, fmax)[1:-1]


def mel_filterbank(sr=AUDIO_RATE, n_fft=MEL_WIN, n_mels=N_MELS, fmin=MEL_FMIN, fmax=MEL_FMAX):
    """Triangular (peak 1, not area-normalised) filters -> (n_mels, n_fft//2+1)."""
    freqs = np.arange(n_fft // 2 + 1) * sr / n_fft
    edges = mel_band_edges(n_mels, fmin, fmax)
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (centre - lower)
    falling = (upper - freqs) / (upper - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


_FILTERBANK = mel_filterbank()


def linear_to_logmel(magnitude):
    return np.log(np.maximum(magnitude @ _FILTERBANK.T, LOG_FLOOR))


def mel_spectrogram(audio: AudioWaveform) -> MelSpectrogram:
    mag = stft_magnitude(audio.samples, MEL_WIN, MEL_HOP)
    return MelSpectrogram(linear_to_logmel(mag))


@dataclass
class SyncReport:
    emg_frames: int
    mel_frames: int

    @property
    def delta(self):
        return abs(self.emg_frames - self.mel_frames)

    @property
    def flagged(self):
        return self.delta > SYNC_TOLERANCE

    @property
    def length(self):
        return min(self.emg_frames, self.mel_frames)


def check_sync(feats: FeatureSequence, mel: MelSpectrogram) -> SyncReport:
    return SyncReport(len(feats), len(mel))


def truncate_pair(feats: FeatureSequence, mel: MelSpectrogram):
    """Trim both streams to the shorter length; raises if the pair is flagged."""
    report = check_sync(feats, mel)
    if report.flagged:
        raise FramingError(f"EMG/mel frame counts differ by {report.delta} (> {SYNC_TOLERANCE})")
    T = report.length
    return FeatureSequence(feats.frames[:T], feats.mode), MelSpectrogram(mel.frames[:T])


def expected_frames(duration_s):
    """Frame counts for EMG and audio of the same duration."""
    return (n_frames(int(round(duration_s * EMG_RATE)), EMG_WIN, EMG_HOP),
            n_frames(int(round(duration_s * AUDIO_RATE)), MEL_WIN, MEL_HOP))
