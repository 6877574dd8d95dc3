"""Flat ``key = value`` pipeline configuration with typed validation."""

import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .model import SsrnetConfig
from .training import TrainingConfig


class ConfigError(ValueError):
    pass


# keys that name locations or resources; they never change results, so they stay out of the hash
LOCATION_KEYS = ("corpus_root", "workdir", "hyp_transcripts", "checkpoint", "workers")


@dataclass
class PipelineConfig:
    # locations
    workdir: str = "work"
    corpus_root: str = ""          # empty: use the synth-data stage output
    hyp_transcripts: str = ""      # "id<TAB>characters" lines; CER is skipped when empty
    checkpoint: str = ""           # empty: the train stage's best.ckpt
    workers: int = 1
    seed: int = 0
    # synthetic corpus
    synth_utterances: int = 20
    syllables_min: int = 2
    syllables_max: int = 4
    tempo_min: float = 0.7
    tempo_max: float = 1.3
    noise_level: float = 0.05
    hum_level: float = 0.0
    split_seed: int = 0
    # conditioning
    bandpass_low: float = 4.0
    bandpass_high: float = 400.0
    bandpass_order: int = 4
    notch_base: float = 50.0
    notch_q: float = 30.0
    # model
    d_model: int = 384
    enc_layers: int = 6
    dec_layers: int = 6
    hidden_units: int = 1536
    heads: int = 4
    fft_kernel: int = 3
    postnet_layers: int = 5
    postnet_channels: int = 256
    postnet_kernel: int = 5
    durpred_layers: int = 2
    durpred_channels: int = 384
    durpred_kernel: int = 3
    dropout_main: float = 0.1
    dropout_postnet: float = 0.5
    lambda_tm: float = 0.5
    lambda_recons: float = 0.5
    classifier_position: str = "before_decoder"
    tones_enabled: bool = True
    # training
    batch_size: int = 8
    step_w: int = 4000
    lambda_align: float = 10.0
    epochs: int = 100
    refresh_period: int = 5
    warm_epochs: int = 4
    grad_clip: float = 1.0
    lr_scale: float = 1.0
    # synthesis and metrics
    vocoder_iters: int = 60
    compute_mcd: bool = True
    compute_stoi: bool = True

    def validate(self):
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 1 <= self.syllables_min <= self.syllables_max:
            raise ConfigError("need 1 <= syllables_min <= syllables_max")
        if not 0 < self.tempo_min <= self.tempo_max:
            raise ConfigError("need 0 < tempo_min <= tempo_max")
        if self.synth_utterances < 10:
            raise ConfigError("synth_utterances must be >= 10 for an 8:1:1 split")
        if not 0 < self.bandpass_low < self.bandpass_high:
            raise ConfigError("need 0 < bandpass_low < bandpass_high")
        if self.vocoder_iters < 1:
            raise ConfigError("vocoder_iters must be >= 1")
        try:
            self.model_config(n_classes=140)
            self.training_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def model_config(self, n_classes, in_dim=355, mel_dim=80):
        names = {f.name for f in fields(SsrnetConfig)} - {"in_dim", "mel_dim", "n_classes", "seed"}
        return SsrnetConfig(in_dim=in_dim, mel_dim=mel_dim, n_classes=n_classes, seed=self.seed,
                            **{k: getattr(self, k) for k in names})

    def training_config(self):
        names = {f.name for f in fields(TrainingConfig)} - {"seed", "d_model"}
        return TrainingConfig(seed=self.seed, d_model=self.d_model, **{k: getattr(self, k) for k in names})

    def values(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def subset_hash(self, keys):
        blob = json.dumps({k: getattr(self, k) for k in sorted(keys)}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def config_hash(self):
        return self.subset_hash([k for k in self.values() if k not in LOCATION_KEYS])


_FIELDS = {f.name: f for f in fields(PipelineConfig)}


def _coerce(key, raw):
    kind = type(getattr(PipelineConfig(), key))
    text = raw.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {text!r}") from None
    return text


def parse_assignments(lines, source="<config>"):
    """``key = value`` pairs; ``#`` starts a comment. Unknown keys are rejected."""
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(path=None, overrides=()):
    """File values (if any) then ``key=value`` overrides, validated."""
    values = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        values.update(parse_assignments(p.read_text(encoding="utf-8").splitlines(), str(p)))
    values.update(parse_assignments(overrides, "--set"))
    return PipelineConfig(**values).validate()


def format_config(cfg: PipelineConfig):
    return "".join(f"{k} = {str(v).lower() if isinstance(v, bool) else v}\n" for k, v in cfg.values().items())
