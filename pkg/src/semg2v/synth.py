"""Synthetic paired corpus: silent EMG, vocal EMG, audio, transcripts and alignments.

Each toneme owns a fixed random EMG readout (per channel and sub-band
envelope gains) and a fixed formant shape, so toneme identity is
recoverable from both EMG and audio, while syllable tone additionally sets
the audio F0 contour. Silent EMG replays the vocal envelope process through
a smooth monotonic time warp with fresh noise.
"""

import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.ndimage import uniform_filter1d

from . import containers
from .dsp import AUDIO_RATE, EMG_CHANNELS, EMG_RATE
from .textgrid import format_textgrid
from .tonemes import SILENCE, split_syllable, tone_of

# toned syllable -> character
DEFAULT_VOCABULARY = {
    "ma1": "妈", "ma2": "麻", "ma3": "马", "ma4": "骂", "ma5": "吗",
    "ba1": "八", "ba2": "拔", "ba3": "把", "ba4": "爸", "ba5": "吧",
    "da1": "搭", "da2": "答", "da3": "打", "da4": "大", "de5": "的",
    "ni2": "泥", "ni3": "你", "ni4": "逆", "hao3": "好", "hao4": "号",
    "teng2": "疼", "shi1": "师", "shi2": "十", "shi3": "使", "shi4": "是",
    "wo1": "窝", "wo3": "我", "wo4": "握", "an1": "安", "an4": "按",
    "tang1": "汤", "tang2": "糖", "tang3": "躺", "tang4": "烫", "le5": "了",
}

# sub-bands sit between the 50 Hz harmonics so conditioning keeps most of the energy
EMG_SUBBANDS = ((10.0, 45.0), (55.0, 95.0), (105.0, 145.0))
UTTERANCE_FILES = ("emg_vocal.f32", "emg_vocal.json", "emg_silent.f32", "emg_silent.json",
                   "audio.wav", "transcript.txt", "alignment.textgrid")


@dataclass
class SyntheticSpec:
    n_utterances: int = 20
    syllables_per_utterance: tuple = (2, 4)
    vocabulary: dict = field(default_factory=lambda: dict(DEFAULT_VOCABULARY))
    seed: int = 0
    tempo_range: tuple = (0.7, 1.3)
    noise_level: float = 0.05
    hum_level: float = 0.0

    def __post_init__(self):
        lo, hi = self.tempo_range
        if not 0 < lo <= hi:
            raise ValueError(f"tempo range must satisfy 0 < lo <= hi, got {self.tempo_range}")
        smin, smax = self.syllables_per_utterance
        if not 1 <= smin <= smax:
            raise ValueError("syllables_per_utterance must satisfy 1 <= min <= max")
        if not self.vocabulary:
            raise ValueError("vocabulary must be non-empty")
        if self.n_utterances < 1:
            raise ValueError("n_utterances must be positive")
        if self.noise_level < 0 or self.hum_level < 0:
            raise ValueError("noise levels must be non-negative")
        for syl in self.vocabulary:
            split_syllable(syl)


@dataclass
class Utterance:
    uid: str
    syllables: list
    characters: str
    audio: np.ndarray
    emg_vocal: np.ndarray
    emg_silent: np.ndarray
    phones: list  # (start, end, label) including silence as ""
    words: list
    duration: float
    tempo: float


def _label_rng(label, seed):
    return np.random.default_rng([seed, zlib.crc32(label.encode("utf-8"))])


def emg_readout(label, seed):
    """(channels, sub-bands) envelope gains for one toneme."""
    if label == SILENCE:
        return np.full((EMG_CHANNELS, len(EMG_SUBBANDS)), 0.05)
    return _label_rng(label, seed).uniform(0.1, 1.0, size=(EMG_CHANNELS, len(EMG_SUBBANDS)))


def formant_shape(label, seed):
    """Formant centres (Hz), bandwidths (Hz), voiced gain and noise gain for one toneme."""
    if label == SILENCE:
        return np.array([500.0, 1500.0, 2500.0]), np.array([100.0, 100.0, 100.0]), 0.0, 0.0
    rng = _label_rng("formant:" + label, seed)
    centres = np.array([rng.uniform(300, 900), rng.uniform(1000, 2300), rng.uniform(2500, 3500)])
    widths = rng.uniform(80, 200, size=3)
    if tone_of(label) is not None or label == "er":
        return centres, widths, 1.0, 0.02
    return centres, widths, 0.35, 0.25


def f0_contour(tone, u):
    """F0 (Hz) over normalised syllable time u in [0, 1]."""
    u = np.asarray(u, dtype=np.float64)
    if tone == 1:
        return np.full_like(u, 230.0)
    if tone == 2:
        return 150.0 + 80.0 * u
    if tone == 3:
        return 120.0 + 160.0 * (u - 0.5) ** 2 + 10.0 * u
    if tone == 4:
        return 240.0 - 110.0 * u
    return np.full_like(u, 170.0)


def _syllable_timeline(syllables, rng):
    """Phone and word intervals (seconds) for one utterance."""
    t = rng.uniform(0.15, 0.3)
    phones, words = [(0.0, t, "")], []
    for k, syl in enumerate(syllables):
        parts = split_syllable(syl)
        tone = int(syl[-1])
        dur = rng.uniform(0.12, 0.18) if tone == 5 else rng.uniform(0.22, 0.32)
        has_onset = len(parts) > 1 and tone_of(parts[0]) is None
        has_coda = len(parts) > 1 and tone_of(parts[-1]) is None
        # consonants take fixed fractions of the syllable, the nucleus takes the rest
        shares = []
        for p in range(len(parts)):
            if p == 0 and has_onset:
                shares.append(0.25 * dur)
            elif p == len(parts) - 1 and has_coda:
                shares.append(0.2 * dur)
            else:
                shares.append(None)
        rest = dur - sum(s for s in shares if s is not None)
        shares = [rest if s is None else s for s in shares]
        start = t
        for part, share in zip(parts, shares):
            phones.append((t, t + share, part))
            t += share
        words.append((start, t, syl))
        if k < len(syllables) - 1 and rng.random() < 0.3:
            gap = rng.uniform(0.03, 0.08)
            phones.append((t, t + gap, ""))
            t += gap
    tail = rng.uniform(0.15, 0.3)
    phones.append((t, t + tail, ""))
    t += tail
    return phones, words, t


def _label_index(times, phones):
    starts = np.array([p[0] for p in phones])
    return np.clip(np.searchsorted(starts, times, side="right") - 1, 0, len(phones) - 1)


def _labels_at(times, phones):
    return [phones[i][2] or SILENCE for i in _label_index(times, phones)]


def synth_audio(phones, words, n_samples, rng, seed):
    t = np.arange(n_samples) / AUDIO_RATE
    phone_idx = _label_index(t, phones)
    labels = [p[2] or SILENCE for p in phones]
    shapes = [formant_shape(lab, seed) for lab in labels]
    centres = np.array([s[0] for s in shapes])[phone_idx]
    widths = np.array([s[1] for s in shapes])[phone_idx]
    voiced = np.array([s[2] for s in shapes])[phone_idx]
    noisy = np.array([s[3] for s in shapes])[phone_idx]
    smooth = int(0.01 * AUDIO_RATE)
    centres = uniform_filter1d(centres, smooth, axis=0, mode="nearest")
    widths = uniform_filter1d(widths, smooth, axis=0, mode="nearest")
    voiced = uniform_filter1d(voiced, smooth, mode="nearest")
    noisy = uniform_filter1d(noisy, smooth, mode="nearest")

    f0 = np.full(n_samples, 170.0)
    for start, end, syl in words:
        sel = (t >= start) & (t < end)
        f0[sel] = f0_contour(int(syl[-1]), (t[sel] - start) / (end - start))
    phase = 2 * np.pi * np.cumsum(f0) / AUDIO_RATE
    out = np.zeros(n_samples)
    for k in range(1, 40):
        freq = k * f0
        amp = np.zeros(n_samples)
        for f in range(3):
            amp += np.exp(-0.5 * ((freq - centres[:, f]) / widths[:, f]) ** 2) / (f + 1)
        amp *= freq < 7000
        out += amp * np.sin(k * phase)
    out *= voiced
    hiss = signal.sosfilt(signal.butter(4, [2000, 6000], btype="bandpass", fs=AUDIO_RATE, output="sos"),
                          rng.normal(size=n_samples))
    out += noisy * hiss
    out += 1e-3 * rng.normal(size=n_samples)
    return 0.3 * out / max(np.max(np.abs(out)), 1e-9)


def _band_noise(rng, n, band):
    sos = signal.butter(4, band, btype="bandpass", fs=EMG_RATE, output="sos")
    x = signal.sosfilt(sos, rng.normal(size=n))
    return x / (np.std(x) + 1e-12)


def synth_emg(label_of_time, n_samples, rng, seed, noise_level, hum_level):
    """EMG whose sub-band envelopes follow the active toneme's readout."""
    t = np.arange(n_samples) / EMG_RATE
    labels = label_of_time(t)
    uniq = sorted(set(labels))
    table = {lab: emg_readout(lab, seed) for lab in uniq}
    gains = np.stack([table[lab] for lab in labels], axis=-1)  # (C, B, n)
    gains = uniform_filter1d(gains, int(0.02 * EMG_RATE), axis=-1, mode="nearest")
    out = np.zeros((EMG_CHANNELS, n_samples))
    for c in range(EMG_CHANNELS):
        for b, band in enumerate(EMG_SUBBANDS):
            out[c] += gains[c, b] * _band_noise(rng, n_samples, band)
        if noise_level:
            out[c] += noise_level * _band_noise(rng, n_samples, (4.0, 400.0))
        if hum_level:
            out[c] += hum_level * np.sin(2 * np.pi * 50.0 * t + rng.uniform(0, 2 * np.pi))
    return out


def tempo_warp(rng, tempo_range, n_terms=2):
    """Random tempo factor and a smooth monotonic map g: [0, 1] -> [0, 1]."""
    lo, hi = tempo_range
    tempo = rng.uniform(lo, hi) if hi > lo else lo
    spread = (hi - lo) / (hi + lo)
    amps = rng.uniform(-1, 1, size=n_terms) * min(0.3, spread)

    def g(u):
        u = np.asarray(u, dtype=np.float64)
        return u + sum(a * np.sin(np.pi * (k + 1) * u) / (np.pi * (k + 1)) for k, a in enumerate(amps))

    return tempo, g


def generate_utterance(spec: SyntheticSpec, index):
    rng = np.random.default_rng([spec.seed, index])
    vocab = sorted(spec.vocabulary)
    n_syl = rng.integers(spec.syllables_per_utterance[0], spec.syllables_per_utterance[1] + 1)
    syllables = [vocab[i] for i in rng.integers(0, len(vocab), size=n_syl)]
    phones, words, dur = _syllable_timeline(syllables, rng)
    # durations on a 1/2000 s grid so audio is exactly 8x the EMG length
    n_emg = max(int(np.ceil(dur * EMG_RATE)), 128)
    dur = n_emg / EMG_RATE
    phones[-1] = (phones[-1][0], dur, phones[-1][2])
    n_audio = n_emg * (AUDIO_RATE // EMG_RATE)

    audio = synth_audio(phones, words, n_audio, rng, spec.seed)

    def vocal_labels(t):
        return _labels_at(t, phones)

    emg_vocal = synth_emg(vocal_labels, n_emg, rng, spec.seed, spec.noise_level, spec.hum_level)

    tempo, g = tempo_warp(rng, spec.tempo_range)
    n_silent = max(int(round(n_emg * tempo)), 128)

    def silent_labels(t):
        return _labels_at(dur * g(t / (n_silent / EMG_RATE)), phones)

    emg_silent = synth_emg(silent_labels, n_silent, rng, spec.seed, spec.noise_level, spec.hum_level)
    chars = "".join(spec.vocabulary[s] for s in syllables)
    return Utterance(f"utt{index:04d}", syllables, chars, audio, emg_vocal, emg_silent, phones, words,
                     dur, tempo)


def write_utterance(root, utt: Utterance):
    d = Path(root) / utt.uid
    d.mkdir(parents=True, exist_ok=True)
    containers.write_raw(d / "emg_vocal", utt.emg_vocal, EMG_RATE, {"mode": "vocal"})
    containers.write_raw(d / "emg_silent", utt.emg_silent, EMG_RATE, {"mode": "silent"})
    containers.write_wav(d / "audio.wav", utt.audio, AUDIO_RATE)
    (d / "transcript.txt").write_text(f"{utt.uid}\t{' '.join(utt.syllables)}\t{utt.characters}\n",
                                      encoding="utf-8")
    tiers = {"words": utt.words, "phones": utt.phones}
    (d / "alignment.textgrid").write_text(format_textgrid(tiers, utt.duration), encoding="utf-8")
    return d


def generate(spec: SyntheticSpec, root):
    """Write ``spec.n_utterances`` utterance directories under ``root``; returns their ids."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    ids = []
    for k in range(spec.n_utterances):
        utt = generate_utterance(spec, k)
        write_utterance(root, utt)
        ids.append(utt.uid)
    return ids


def split(ids, seed=0, ratios=(8, 1, 1)):
    """Deterministic shuffled train/val/test split."""
    ids = sorted(ids)
    n = len(ids)
    if n < 10:
        raise ValueError(f"need at least 10 utterances to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    total = sum(ratios)
    n_val = max(1, int(round(n * ratios[1] / total)))
    n_test = max(1, int(round(n * ratios[2] / total)))
    n_train = n - n_val - n_test
    shuffled = [ids[i] for i in order]
    return {"train": sorted(shuffled[:n_train]),
            "val": sorted(shuffled[n_train:n_train + n_val]),
            "test": sorted(shuffled[n_train + n_val:])}


def write_manifests(root, splits, modes=None):
    """One ``<split>.txt`` per split; each line is ``id<TAB>mode``."""
    modes = modes or {"train": "paired", "val": "paired", "test": "paired"}
    root = Path(root)
    for name, ids in splits.items():
        (root / f"{name}.txt").write_text("".join(f"{uid}\t{modes.get(name, 'paired')}\n" for uid in ids))


def read_manifest(path):
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            uid, _, mode = line.partition("\t")
            out.append((uid.strip(), mode.strip() or "paired"))
    return out
