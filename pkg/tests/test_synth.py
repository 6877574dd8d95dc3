import hashlib

import numpy as np
import pytest

from oracles import autocorr_pitch
from semg2v.dataset import load_utterance
from semg2v.dsp import EmgRecording, condition
from semg2v.dtw import dtw_basic, path_to_durations
from semg2v.features import check_sync, emg_features, mel_spectrogram
from semg2v.dsp import AudioWaveform
from semg2v.synth import (SyntheticSpec, generate, generate_utterance, read_manifest, split, tempo_warp,
                          write_manifests)
from semg2v.tonemes import full_inventory, split_syllable


def digest(root):
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(path.relative_to(root).as_posix().encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def test_regeneration_is_byte_identical(tmp_path):
    spec = SyntheticSpec(n_utterances=2, seed=5)
    generate(spec, tmp_path / "a")
    generate(spec, tmp_path / "b")
    assert digest(tmp_path / "a") == digest(tmp_path / "b")
    generate(SyntheticSpec(n_utterances=2, seed=6), tmp_path / "c")
    assert digest(tmp_path / "a") != digest(tmp_path / "c")


def test_corpus_layout(tmp_path):
    ids = generate(SyntheticSpec(n_utterances=1, seed=0), tmp_path)
    d = tmp_path / ids[0]
    for name in ("emg_vocal.f32", "emg_vocal.json", "emg_silent.f32", "emg_silent.json", "audio.wav",
                 "transcript.txt", "alignment.textgrid"):
        assert (d / name).is_file(), name
    uid, syllables, chars = (d / "transcript.txt").read_text(encoding="utf-8").rstrip("\n").split("\t")
    assert uid == ids[0] and len(syllables.split()) == len(chars)


def test_unit_tempo_gives_diagonal_durations():
    spec = SyntheticSpec(n_utterances=3, seed=2, tempo_range=(1.0, 1.0))
    for k in range(3):
        utt = generate_utterance(spec, k)
        X = emg_features(condition(EmgRecording(utt.emg_silent))).frames
        x = emg_features(condition(EmgRecording(utt.emg_vocal))).frames
        assert len(X) == len(x)
        d = path_to_durations(dtw_basic(X, x), len(X), len(x))
        assert np.mean(d == 1) >= 0.9


def test_tone4_pitch_falls():
    spec = SyntheticSpec(n_utterances=1, syllables_per_utterance=(1, 1), vocabulary={"ma4": "骂"}, seed=1)
    utt = generate_utterance(spec, 0)
    start, end, label = next(p for p in utt.phones if p[2] == "a4")
    fs, win, hop = 16000, 480, 160
    lo, hi = int(start * fs) + win, int(end * fs) - win
    track = [autocorr_pitch(utt.audio[s:s + win], fs) for s in range(lo, hi - win, hop)]
    assert len(track) >= 5
    assert np.all(np.diff(track) < 0)


@pytest.mark.parametrize("tone,shape", [(1, "flat"), (2, "rise"), (3, "dip")])
def test_other_tone_contours(tone, shape):
    spec = SyntheticSpec(n_utterances=1, syllables_per_utterance=(1, 1), vocabulary={f"ma{tone}": "x"}, seed=1)
    utt = generate_utterance(spec, 0)
    start, end, _ = next(p for p in utt.phones if p[2] == f"a{tone}")
    fs, win = 16000, 480
    track = np.array([autocorr_pitch(utt.audio[s:s + win], fs)
                      for s in range(int(start * fs) + win, int(end * fs) - 2 * win, 160)])
    if shape == "flat":
        assert np.ptp(track) < 5
    elif shape == "rise":
        assert np.all(np.diff(track) > 0)
    else:
        k = int(np.argmin(track))
        assert 0 < k < len(track) - 1


def test_every_utterance_syncs_and_splits():
    inv = full_inventory()
    spec = SyntheticSpec(n_utterances=6, seed=4)
    for k in range(6):
        utt = generate_utterance(spec, k)
        for syl in utt.syllables:
            assert all(p in inv for p in split_syllable(syl))
        feats = emg_features(condition(EmgRecording(utt.emg_vocal)))
        mel = mel_spectrogram(AudioWaveform(utt.audio))
        assert check_sync(feats, mel).delta <= 1


def test_vocal_emg_energy_retained():
    spec = SyntheticSpec(n_utterances=4, seed=8)
    for k in range(4):
        raw = generate_utterance(spec, k).emg_vocal
        kept = condition(EmgRecording(raw)).data
        n = raw.shape[1]
        core = slice(n // 10, n - n // 10)  # ignore filter edge transients
        assert np.sum(kept[:, core] ** 2) >= 0.8 * np.sum(raw[:, core] ** 2)


def test_tempo_warp_monotone():
    rng = np.random.default_rng(0)
    for _ in range(20):
        tempo, g = tempo_warp(rng, (0.7, 1.3))
        u = np.linspace(0, 1, 500)
        assert 0.7 <= tempo <= 1.3
        assert np.all(np.diff(g(u)) > 0) and g(0.0) == 0.0 and abs(g(1.0) - 1.0) < 1e-12


def test_split_ratios():
    ids = [f"u{k:03d}" for k in range(100)]
    s = split(ids, seed=1)
    assert [len(s[k]) for k in ("train", "val", "test")] == [80, 10, 10]
    assert sorted(s["train"] + s["val"] + s["test"]) == ids
    s10 = split(ids[:10], seed=1)
    assert [len(s10[k]) for k in ("train", "val", "test")] == [8, 1, 1]
    assert split(ids, seed=1) == s
    with pytest.raises(ValueError):
        split(ids[:9])


def test_manifest_roundtrip(tmp_path):
    splits = split([f"u{k}" for k in range(10)], seed=0)
    write_manifests(tmp_path, splits, {"test": "silent"})
    assert read_manifest(tmp_path / "test.txt") == [(u, "silent") for u in splits["test"]]
    assert read_manifest(tmp_path / "train.txt")[0][1] == "paired"


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(tempo_range=(0.0, 1.0))
    with pytest.raises(ValueError):
        SyntheticSpec(vocabulary={})
    with pytest.raises(ValueError):
        SyntheticSpec(syllables_per_utterance=(3, 2))


def test_load_utterance_frames(tmp_path):
    inv = full_inventory()
    ids = generate(SyntheticSpec(n_utterances=2, seed=9), tmp_path)
    for uid in ids:
        u = load_utterance(tmp_path / uid, inv)
        assert u.silent.shape[1] == 355 and u.vocal.shape[1] == 355 and u.mel.shape[1] == 80
        assert len(u.vocal) == len(u.mel) == len(u.tonemes) == u.durations.sum()
        assert len(u.durations) == len(u.silent)
        assert np.any(u.tonemes != 0)
