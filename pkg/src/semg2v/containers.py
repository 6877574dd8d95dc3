"""On-disk formats shared by the pipeline stages.

* raw signal: ``<stem>.f32`` little-endian float32 samples, channel-interleaved
  frame by frame, plus ``<stem>.json`` holding ``{sample_rate, channels}``;
* matrix: ``<stem>.f32`` row-major float32 plus ``<stem>.json`` holding
  ``{rows, cols, frame_rate, mode}`` (and optional provenance);
* durations: text lines ``id: d1 d2 ... dN``;
* audio: WAV (PCM16 or float32), read through :mod:`scipy.io.wavfile`.
"""

import json
from pathlib import Path

import numpy as np
from scipy.io import wavfile


class FormatError(ValueError):
    pass


def _stem(path):
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".f32", ".json") else path


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def write_raw(path, data, sample_rate, extra=None):
    """Write a (channels, samples) array as interleaved float32."""
    stem = _stem(path)
    data = np.atleast_2d(np.asarray(data))
    header = {"sample_rate": int(sample_rate), "channels": int(data.shape[0])}
    if extra:
        header.update(extra)
    data.T.astype("<f4").tofile(stem.with_suffix(".f32"))
    _write_json(stem.with_suffix(".json"), header)


def read_raw(path):
    """Return ``(data[channels, samples] as float64, header)``."""
    stem = _stem(path)
    try:
        header = json.loads(stem.with_suffix(".json").read_text())
        channels = int(header["channels"])
        int(header["sample_rate"])
    except (OSError, KeyError, ValueError) as exc:
        raise FormatError(f"bad raw-signal header for {stem}: {exc}") from exc
    flat = np.fromfile(stem.with_suffix(".f32"), dtype="<f4")
    if flat.size % channels:
        raise FormatError(f"{stem}: {flat.size} samples not divisible by {channels} channels")
    return flat.reshape(-1, channels).T.astype(np.float64), header


def write_matrix(path, frames, frame_rate, mode, provenance=None):
    stem = _stem(path)
    frames = np.asarray(frames)
    if frames.ndim != 2:
        raise FormatError("matrix must be 2-D")
    header = {"rows": int(frames.shape[0]), "cols": int(frames.shape[1]),
              "frame_rate": float(frame_rate), "mode": mode}
    if provenance:
        header["provenance"] = provenance
    frames.astype("<f4").tofile(stem.with_suffix(".f32"))
    _write_json(stem.with_suffix(".json"), header)


def read_matrix(path):
    stem = _stem(path)
    try:
        header = json.loads(stem.with_suffix(".json").read_text())
        rows, cols = int(header["rows"]), int(header["cols"])
    except (OSError, KeyError, ValueError) as exc:
        raise FormatError(f"bad matrix header for {stem}: {exc}") from exc
    flat = np.fromfile(stem.with_suffix(".f32"), dtype="<f4")
    if flat.size != rows * cols:
        raise FormatError(f"{stem}: expected {rows}x{cols} values, found {flat.size}")
    return flat.reshape(rows, cols).astype(np.float64), header


def write_wav(path, samples, sample_rate):
    samples = np.asarray(samples, dtype=np.float64)
    wavfile.write(str(path), int(sample_rate), samples.astype(np.float32))


def read_wav(path):
    """Read a mono WAV file as float64 in [-1, 1]."""
    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise FormatError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        data = data / 32768.0
    elif data.dtype == np.int32:
        data = data / 2147483648.0
    elif data.dtype.kind != "f":
        raise FormatError(f"{path}: unsupported sample type {data.dtype}")
    return np.asarray(data, dtype=np.float64), rate


def write_durations(path, table):
    """``table`` maps utterance id -> integer durations."""
    lines = [f"{uid}: " + " ".join(str(int(d)) for d in durs) for uid, durs in sorted(table.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_durations(path):
    table = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        uid, sep, rest = line.partition(":")
        if not sep:
            raise FormatError(f"{path}:{lineno}: missing ':'")
        try:
            durs = [int(tok) for tok in rest.split()]
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
        if any(d < 0 for d in durs):
            raise FormatError(f"{path}:{lineno}: negative duration")
        table[uid.strip()] = np.array(durs, dtype=np.int64)
    return table
