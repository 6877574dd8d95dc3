"""Stage runner: synth-data, condition, featurize, align, train, infer, evaluate.

Every stage writes under ``workdir/<stage>/`` and finishes by writing
``stage.json`` with a key (config subset, upstream digests, version) and the
hash of each output. A stage whose key matches and whose outputs are intact
is skipped.
"""

import csv
import hashlib
import json
import logging
import shutil
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, containers
from .config import ConfigError, PipelineConfig, load_config
from .dataset import ModeError, UtteranceData, load_emg, read_transcript
from .dsp import AUDIO_RATE, AudioWaveform, condition
from .dtw import dtw_basic, path_to_durations
from .features import FRAME_RATE, MelSpectrogram, emg_features, mel_spectrogram, truncate_pair
from .metrics import cer, mcd, stoi
from .model import Ssrnet, SsrnetConfig
from .nn.checkpoint import load_checkpoint
from .nn.tensor import NonFiniteError
from .synth import SyntheticSpec, generate, read_manifest, split, write_manifests
from .textgrid import parse_textgrid
from .tonemes import TonemeSet, full_inventory, rasterize
from .training import confusion_matrix, tone_accuracy, toneme_accuracy, train
from .vocoder import griffin_lim

log = logging.getLogger(__name__)

STAGES = ("synth-data", "condition", "featurize", "align", "train", "infer", "evaluate")
SPLITS = ("train", "val", "test")
METRIC_COLUMNS = ("utterance_id", "cer", "mcd", "stoi")

_SYNTH_KEYS = ("seed", "synth_utterances", "syllables_min", "syllables_max", "tempo_min", "tempo_max",
               "noise_level", "hum_level", "split_seed")
_CONDITION_KEYS = ("bandpass_low", "bandpass_high", "bandpass_order", "notch_base", "notch_q")
_TRAIN_KEYS = ("seed", "d_model", "enc_layers", "dec_layers", "hidden_units", "heads", "fft_kernel",
               "postnet_layers", "postnet_channels", "postnet_kernel", "durpred_layers", "durpred_channels",
               "durpred_kernel", "dropout_main", "dropout_postnet", "lambda_tm", "lambda_recons",
               "classifier_position", "tones_enabled", "batch_size", "step_w", "lambda_align", "epochs",
               "refresh_period", "warm_epochs", "grad_clip", "lr_scale")
STAGE_KEYS = {"synth-data": _SYNTH_KEYS, "condition": _CONDITION_KEYS, "featurize": ("tones_enabled",),
              "align": (), "train": _TRAIN_KEYS, "infer": ("vocoder_iters",),
              "evaluate": ("compute_mcd", "compute_stoi")}
UPSTREAM = {"synth-data": (), "condition": ("synth-data",), "featurize": ("synth-data", "condition"),
            "align": ("featurize",), "train": ("featurize", "align"), "infer": ("featurize", "train"),
            "evaluate": ("synth-data", "featurize", "align", "train", "infer")}


class MissingArtifact(RuntimeError):
    pass


# -- hashing and stage records ---------------------------------------------------

def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def tree_hashes(root, skip=("stage.json",)):
    root = Path(root)
    return {p.relative_to(root).as_posix(): file_sha256(p)
            for p in sorted(root.rglob("*")) if p.is_file() and p.name not in skip}


def digest_of(hashes):
    return hashlib.sha256(json.dumps(hashes, sort_keys=True).encode()).hexdigest()


def read_record(stage_dir):
    path = Path(stage_dir) / "stage.json"
    if not path.is_file():
        return None
    try:
        return json.loads(path.read_text())
    except ValueError:
        return None


def record_is_current(stage_dir, key):
    rec = read_record(stage_dir)
    if rec is None or rec.get("key") != key:
        return False
    return tree_hashes(stage_dir) == rec.get("outputs")


# -- small helpers -------------------------------------------------------------------

def _map(fn, items, workers):
    """Ordered map; a process pool when ``workers > 1``."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def _need(path, what):
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"missing {what}: {path}")
    return path


def inventory(tones=True) -> TonemeSet:
    return full_inventory(tones=tones)


def read_silent_features(path):
    """The only feature reader inference uses; refuses anything not tagged silent."""
    frames, header = containers.read_matrix(_need(Path(path).with_suffix(".json"), "silent features"))
    if header.get("mode") != "silent":
        raise ModeError(f"{path}: inference reads silent features only, header says {header.get('mode')!r}")
    return frames


def model_from_checkpoint(path):
    state, meta = load_checkpoint(_need(path, "checkpoint"))
    model = Ssrnet(SsrnetConfig(**meta["model"]))
    model.store.load_state_dict(state)
    return model, meta


def infer_utterance(model: Ssrnet, X, vocoder_iters=60, seed=0):
    """Encode, predict durations, regulate, decode, vocode."""
    mel, durations = model.infer(X)
    audio = griffin_lim(MelSpectrogram(mel), iters=vocoder_iters, seed=seed)
    return mel, durations, audio


def read_hyp_transcripts(path):
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        uid, sep, text = line.partition("\t")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected 'id<TAB>characters'")
        out[uid.strip()] = text.strip()
    return out


def evaluate_waveforms(ids, hyp_dir, ref_dir, hyp_transcripts=None, compute_mcd=True, compute_stoi=True):
    """Per-utterance (cer, mcd, stoi); disabled or unavailable metrics are None.

    ``hyp_dir/<id>/audio.wav`` is compared with ``ref_dir/<id>/audio.wav``;
    CER needs ``ref_dir/<id>/transcript.txt`` and a hypothesis per id.
    """
    rows = []
    for uid in ids:
        hyp_wav = Path(hyp_dir) / uid / "audio.wav"
        if not hyp_wav.is_file():
            raise MissingArtifact(f"no hypothesis audio for utterance {uid} in {hyp_dir}")
        ref_wav = _need(Path(ref_dir) / uid / "audio.wav", f"reference audio for {uid}")
        hyp, _ = containers.read_wav(hyp_wav)
        ref, _ = containers.read_wav(ref_wav)
        row = {"utterance_id": uid, "cer": None, "mcd": None, "stoi": None}
        if hyp_transcripts is not None:
            if uid not in hyp_transcripts:
                raise MissingArtifact(f"no hypothesis transcript for utterance {uid}")
            _, chars = read_transcript(_need(Path(ref_dir) / uid / "transcript.txt", f"transcript for {uid}"))
            row["cer"] = cer(chars, hyp_transcripts[uid])
        if compute_mcd:
            row["mcd"] = mcd(ref, hyp)
        if compute_stoi:
            n = min(len(ref), len(hyp))
            row["stoi"] = stoi(ref[:n], hyp[:n])
        rows.append(row)
    return rows


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow([row["utterance_id"]] + ["" if row[k] is None else repr(float(row[k]))
                                                     for k in METRIC_COLUMNS[1:]])


def summarize(rows):
    out = {}
    for key in METRIC_COLUMNS[1:]:
        vals = np.array([r[key] for r in rows if r[key] is not None], dtype=np.float64)
        out[key] = ({"mean": float(vals.mean()), "std": float(vals.std()), "n": int(len(vals))}
                    if len(vals) else None)
    return out


# -- per-utterance workers (top level so a process pool can pickle them) ---------------

def _condition_one(args):
    uid, corpus, out_root, params = args
    out = Path(out_root) / uid
    out.mkdir(parents=True, exist_ok=True)
    for kind in ("silent", "vocal"):
        src = Path(corpus) / uid / f"emg_{kind}"
        if kind == "vocal" and not src.with_suffix(".json").is_file():
            continue
        _need(src.with_suffix(".json"), f"{kind} EMG for {uid}")
        rec = condition(load_emg(src, kind), **params)
        prov = {"stage": "condition", "version": __version__, "params": params,
                "inputs": {src.name + ".f32": file_sha256(src.with_suffix(".f32"))}}
        containers.write_raw(out / f"emg_{kind}", rec.data, rec.sample_rate, {"mode": kind, "provenance": prov})
    return uid


def _featurize_one(args):
    uid, corpus, cond_root, out_root, tones = args
    out = Path(out_root) / uid
    out.mkdir(parents=True, exist_ok=True)
    src = Path(cond_root) / uid
    inv = inventory(tones)

    def prov(*paths):
        return {"stage": "featurize", "version": __version__,
                "inputs": {Path(p).name: file_sha256(p) for p in paths}}

    silent_src = _need(src / "emg_silent.f32", f"conditioned silent EMG for {uid}")
    feats = emg_features(load_emg(src / "emg_silent", "silent"), "silent")
    containers.write_matrix(out / "silent", feats.frames, FRAME_RATE, "silent", prov(silent_src))
    wav = _need(Path(corpus) / uid / "audio.wav", f"audio for {uid}")
    samples, rate = containers.read_wav(wav)
    if rate != AUDIO_RATE:
        raise ValueError(f"{wav}: audio must be {AUDIO_RATE} Hz")
    mel = mel_spectrogram(AudioWaveform(samples))
    vocal_src = src / "emg_vocal.f32"
    if vocal_src.is_file():
        vocal, mel = truncate_pair(emg_features(load_emg(src / "emg_vocal", "vocal"), "vocal"), mel)
        containers.write_matrix(out / "vocal", vocal.frames, FRAME_RATE, "vocal", prov(vocal_src))
    containers.write_matrix(out / "mel", mel.frames, FRAME_RATE, "mel", prov(wav))
    grid = _need(Path(corpus) / uid / "alignment.textgrid", f"alignment for {uid}")
    labels = rasterize(parse_textgrid(grid.read_text(encoding="utf-8")), len(mel), inv, tones=tones)
    containers.write_matrix(out / "tonemes", labels[:, None], FRAME_RATE, "labels", prov(grid))
    return uid


def _align_one(args):
    uid, feat_root = args
    d = Path(feat_root) / uid
    X, _ = containers.read_matrix(_need(d / "silent.json", f"silent features for {uid}"))
    x, _ = containers.read_matrix(_need(d / "vocal.json", f"vocal features for {uid}"))
    return uid, path_to_durations(dtw_basic(X, x), len(X), len(x))


def _infer_one(args):
    uid, feat_root, ckpt, out_root, iters, seed = args
    model, _ = model_from_checkpoint(ckpt)
    X = read_silent_features(Path(feat_root) / uid / "silent")
    mel, durations, audio = infer_utterance(model, X, iters, seed)
    out = Path(out_root) / uid
    out.mkdir(parents=True, exist_ok=True)
    prov = {"stage": "infer", "version": __version__,
            "inputs": {"silent.f32": file_sha256(Path(feat_root) / uid / "silent.f32"),
                       "checkpoint": file_sha256(ckpt)}}
    containers.write_matrix(out / "mel", mel, FRAME_RATE, "mel", prov)
    containers.write_wav(out / "audio.wav", audio.samples, audio.sample_rate)
    containers.write_durations(out / "durations.txt", {uid: durations})
    return uid


# -- the runner ------------------------------------------------------------------------

class Pipeline:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.workdir = Path(cfg.workdir)
        if cfg.corpus_root and not Path(cfg.corpus_root).is_dir():
            raise ConfigError(f"corpus_root does not exist: {cfg.corpus_root}")
        if cfg.hyp_transcripts and not Path(cfg.hyp_transcripts).is_file():
            raise ConfigError(f"hyp_transcripts does not exist: {cfg.hyp_transcripts}")
        if cfg.checkpoint and not Path(cfg.checkpoint).is_file():
            raise ConfigError(f"checkpoint does not exist: {cfg.checkpoint}")

    # paths
    def stage_dir(self, stage):
        return self.workdir / stage

    @property
    def corpus(self):
        return Path(self.cfg.corpus_root) if self.cfg.corpus_root else self.stage_dir("synth-data") / "corpus"

    @property
    def checkpoint(self):
        return Path(self.cfg.checkpoint) if self.cfg.checkpoint else self.stage_dir("train") / "best.ckpt"

    def manifest(self, name):
        return read_manifest(_need(self.corpus / f"{name}.txt", f"{name} manifest"))

    def ids(self, *names):
        return [uid for name in names for uid, _ in self.manifest(name)]

    # stage keys
    def _extra_inputs(self, stage):
        extra = {}
        if stage == "synth-data" and self.cfg.corpus_root:
            extra["corpus"] = digest_of(tree_hashes(self.corpus))
        if stage == "infer" and self.cfg.checkpoint:
            extra["checkpoint"] = file_sha256(self.checkpoint)
        if stage == "evaluate" and self.cfg.hyp_transcripts:
            extra["hyp_transcripts"] = file_sha256(self.cfg.hyp_transcripts)
        return extra

    def stage_key(self, stage):
        upstream = {}
        for up in UPSTREAM[stage]:
            if up == "train" and self.cfg.checkpoint:
                continue
            rec = read_record(self.stage_dir(up))
            if rec is None:
                raise MissingArtifact(f"stage {stage!r} needs {up!r} to run first ({self.stage_dir(up)})")
            upstream[up] = rec["digest"]
        blob = {"stage": stage, "version": __version__, "config": self.cfg.subset_hash(STAGE_KEYS[stage]),
                "upstream": upstream, "extra": self._extra_inputs(stage),
                "external_corpus": bool(self.cfg.corpus_root)}
        return digest_of(blob)

    def run(self, stage, force=False):
        """Run one stage unless it is current; returns True when work was done."""
        if stage == "all":
            return [self.run(s, force) for s in STAGES]
        if stage not in STAGES:
            raise ConfigError(f"unknown stage {stage!r}; choose from {', '.join(STAGES + ('all',))}")
        key = self.stage_key(stage)
        out = self.stage_dir(stage)
        if not force and record_is_current(out, key):
            log.info("%s: up to date, skipped", stage)
            return False
        if out.exists():
            shutil.rmtree(out)
        out.mkdir(parents=True)
        log.info("%s: running", stage)
        getattr(self, "_run_" + stage.replace("-", "_"))(out)
        hashes = tree_hashes(out)
        record = {"stage": stage, "key": key, "version": __version__,
                  "config_hash": self.cfg.subset_hash(STAGE_KEYS[stage]),
                  "outputs": hashes, "digest": digest_of(hashes)}
        (out / "stage.json").write_text(json.dumps(record, sort_keys=True, indent=1) + "\n")
        return True

    # stages
    def _run_synth_data(self, out):
        if self.cfg.corpus_root:
            for name in SPLITS:
                self.manifest(name)
            return
        c = self.cfg
        spec = SyntheticSpec(n_utterances=c.synth_utterances, syllables_per_utterance=(c.syllables_min,
                             c.syllables_max), seed=c.seed, tempo_range=(c.tempo_min, c.tempo_max),
                             noise_level=c.noise_level, hum_level=c.hum_level)
        ids = generate(spec, out / "corpus")
        # inference on the test split sees silent EMG only
        write_manifests(out / "corpus", split(ids, c.split_seed), {"test": "silent"})

    def _run_condition(self, out):
        c = self.cfg
        params = {"low": c.bandpass_low, "high": c.bandpass_high, "order": c.bandpass_order,
                  "notch_base": c.notch_base, "notch_q": c.notch_q}
        jobs = [(uid, str(self.corpus), str(out), params) for uid in self.ids(*SPLITS)]
        _map(_condition_one, jobs, c.workers)

    def _run_featurize(self, out):
        cond = self.stage_dir("condition")
        jobs = [(uid, str(self.corpus), str(cond), str(out), self.cfg.tones_enabled) for uid in self.ids(*SPLITS)]
        _map(_featurize_one, jobs, self.cfg.workers)
        inventory(self.cfg.tones_enabled).save(out / "inventory.txt")

    def _run_align(self, out):
        feat = self.stage_dir("featurize")
        jobs = [(uid, str(feat)) for uid in self.ids(*SPLITS)]
        containers.write_durations(out / "durations.txt", dict(_map(_align_one, jobs, self.cfg.workers)))

    def load_items(self, ids):
        feat = self.stage_dir("featurize")
        durs = containers.read_durations(_need(self.stage_dir("align") / "durations.txt", "GT durations"))
        items = []
        for uid in ids:
            d = feat / uid
            X, _ = containers.read_matrix(_need(d / "silent.json", f"silent features for {uid}"))
            vocal, _ = containers.read_matrix(_need(d / "vocal.json", f"vocal features for {uid}"))
            mel, _ = containers.read_matrix(_need(d / "mel.json", f"mel for {uid}"))
            labels, _ = containers.read_matrix(_need(d / "tonemes.json", f"toneme labels for {uid}"))
            if uid not in durs:
                raise MissingArtifact(f"no GT durations for utterance {uid}")
            items.append(UtteranceData(uid, X, vocal, mel, labels[:, 0].astype(np.int64),
                                       np.asarray(durs[uid], dtype=np.int64)))
        return items

    def _run_train(self, out):
        inv = TonemeSet.load(_need(self.stage_dir("featurize") / "inventory.txt", "toneme inventory"))
        train_set, val_set = self.load_items(self.ids("train")), self.load_items(self.ids("val"))
        model = Ssrnet(self.cfg.model_config(n_classes=len(inv)))
        train(model, train_set, val_set, self.cfg.training_config(), out)

    def _run_infer(self, out):
        entries = self.manifest("test")
        for uid, mode in entries:
            if mode != "silent":
                raise ModeError(f"test manifest lists {uid} as {mode!r}; inference takes silent inputs only")
        feat, ckpt = self.stage_dir("featurize"), self.checkpoint
        _need(ckpt, "checkpoint")
        jobs = [(uid, str(feat), str(ckpt), str(out), self.cfg.vocoder_iters, self.cfg.seed) for uid, _ in entries]
        _map(_infer_one, jobs, self.cfg.workers)

    def _run_evaluate(self, out):
        c = self.cfg
        ids = self.ids("test")
        hyps = read_hyp_transcripts(c.hyp_transcripts) if c.hyp_transcripts else None
        rows = evaluate_waveforms(ids, self.stage_dir("infer"), self.corpus, hyps, c.compute_mcd, c.compute_stoi)
        write_metrics_csv(out / "metrics.csv", rows)
        model, _ = model_from_checkpoint(self.checkpoint)
        inv = TonemeSet.load(_need(self.stage_dir("featurize") / "inventory.txt", "toneme inventory"))
        items = self.load_items(ids)
        conf = confusion_matrix(model, items, len(inv))
        with open(out / "confusion.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["true\\pred"] + inv.labels)
            for label, row in zip(inv.labels, conf):
                writer.writerow([label] + [repr(float(v)) for v in row])
        summary = {"metrics": summarize(rows), "toneme_accuracy": toneme_accuracy(model, items),
                   "tone_accuracy": tone_accuracy(model, items, inv), "utterances": len(ids),
                   "provenance": {"version": __version__, "config_hash": c.config_hash(),
                                  "inputs": {"checkpoint": file_sha256(self.checkpoint)}}}
        (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")


def is_numeric_failure(exc):
    seen = exc
    while seen is not None:
        if isinstance(seen, (NonFiniteError, FloatingPointError)):
            return True
        seen = seen.__cause__
    return False


def run(command, config_path=None, overrides=(), force=False):
    """Load config, run ``command``; returns the per-stage 'did work' flags."""
    cfg = load_config(config_path, overrides)
    return Pipeline(cfg).run(command, force)


__all__ = ["Pipeline", "MissingArtifact", "STAGES", "run", "evaluate_waveforms", "infer_utterance",
           "read_silent_features", "model_from_checkpoint", "is_numeric_failure"]
