"""Turn utterance directories into aligned training arrays."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import containers
from .dsp import AUDIO_RATE, AudioWaveform, EmgRecording, condition
from .dtw import dtw_basic, path_to_durations
from .features import emg_features, mel_spectrogram, truncate_pair
from .textgrid import parse_textgrid
from .tonemes import rasterize


class ModeError(RuntimeError):
    """Raised when a stage touches data of the wrong recording mode."""


@dataclass
class UtteranceData:
    uid: str
    silent: np.ndarray      # (N, 355) silent-EMG features
    vocal: np.ndarray       # (M, 355) vocal-EMG features
    mel: np.ndarray         # (M, 80) target log-mel
    tonemes: np.ndarray     # (M,) toneme ids
    durations: np.ndarray   # (N,) current ground-truth durations
    transcript: str = ""

    @property
    def N(self):
        return len(self.silent)

    @property
    def M(self):
        return len(self.mel)


def read_transcript(path):
    """``id<TAB>pinyin syllables<TAB>characters`` -> (syllables, characters)."""
    line = Path(path).read_text(encoding="utf-8").splitlines()[0]
    parts = line.split("\t")
    if len(parts) != 3:
        raise ValueError(f"{path}: expected 3 tab-separated fields")
    return parts[1].split(), parts[2]


def load_emg(path, expect_mode):
    data, header = containers.read_raw(path)
    mode = header.get("mode")
    if mode is not None and mode != expect_mode:
        raise ModeError(f"{path}: expected {expect_mode} EMG, header says {mode}")
    return EmgRecording(data, int(header["sample_rate"]))


def silent_features(utt_dir):
    return emg_features(condition(load_emg(Path(utt_dir) / "emg_silent", "silent")), "silent").frames


def load_utterance(utt_dir, toneme_set, tones=True):
    """Condition, featurise and label one paired utterance (initial DTW durations)."""
    utt_dir = Path(utt_dir)
    X = silent_features(utt_dir)
    vocal = emg_features(condition(load_emg(utt_dir / "emg_vocal", "vocal")), "vocal")
    samples, rate = containers.read_wav(utt_dir / "audio.wav")
    if rate != AUDIO_RATE:
        raise ValueError(f"{utt_dir}: audio must be {AUDIO_RATE} Hz")
    vocal, mel = truncate_pair(vocal, mel_spectrogram(AudioWaveform(samples)))
    M = len(mel)
    intervals = parse_textgrid((utt_dir / "alignment.textgrid").read_text(encoding="utf-8"))
    tm = rasterize(intervals, M, toneme_set, tones=tones)
    d = path_to_durations(dtw_basic(X, vocal.frames), len(X), M)
    _, chars = read_transcript(utt_dir / "transcript.txt")
    return UtteranceData(utt_dir.name, X, vocal.frames, mel.frames, tm, d, chars)


def pad_batch(items):
    """Stack utterances into zero-padded arrays with masks."""
    B = len(items)
    N = max(u.N for u in items)
    M = max(u.M for u in items)
    X = np.zeros((B, N, items[0].silent.shape[1]))
    src_mask = np.zeros((B, N))
    mel = np.zeros((B, M, items[0].mel.shape[1]))
    vocal = np.zeros((B, M, items[0].vocal.shape[1]))
    tonemes = np.zeros((B, M), dtype=np.int64)
    durations = np.zeros((B, N))
    for b, u in enumerate(items):
        X[b, :u.N] = u.silent
        src_mask[b, :u.N] = 1.0
        mel[b, :u.M] = u.mel
        vocal[b, :u.M] = u.vocal
        tonemes[b, :u.M] = u.tonemes
        durations[b, :u.N] = u.durations
    return {"X": X, "src_mask": src_mask, "durations_list": [u.durations for u in items],
            "targets": {"mel": mel, "vocal": vocal, "tonemes": tonemes, "durations": durations}}
