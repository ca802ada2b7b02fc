"""Run configuration: defaults, INI files, environment overrides, presets.

Keys are flat ``section.name`` strings; the file format is INI with one
section per module area.  Environment variables override file values with
the prefix ``DAQTRACK_`` (e.g. ``DAQTRACK_EDS_ES_THRESHOLD=0.2``), and
explicit ``--set section.key=value`` pairs override everything.
"""

from __future__ import annotations

import configparser
import os

from .eds import EdsConfig
from .engine import ModelConfig
from .errors import ConfigError
from .losses import LossConfig
from .scenario import ScenarioSpec
from .segmenter import NoiseSpec
from .training import TrainConfig

ENV_PREFIX = "DAQTRACK_"

DEFAULTS: dict[str, str] = {
    "model.dim": "64",
    "model.heads": "4",
    "model.layers": "3",
    "model.num_classes": "3",
    "segmenter.n_queries": "20",
    "segmenter.feature_sigma": "0.1",
    "segmenter.mask_jitter": "0.1",
    "segmenter.label_flip": "0.02",
    "segmenter.miss_rate": "0.02",
    "segmenter.clutter_rate": "0.05",
    "daq.top_k": "10",
    "daq.num_learnable": "2",
    "daq.emg_source": "appf",
    "daq.emg_usage": "pos",
    "daq.dis_feat": "bank",
    "daq.dis_pos": "ctqp",
    "tracker.accept_threshold": "0.5",
    "tracker.dup_iou": "0.7",
    "tracker.grace_frames": "0",
    "tracker.num_static": "",
    "eds.enabled": "true",
    "eds.es_threshold": "0.1",
    "eds.ds_mode": "random",
    "eds.ds_rate": "0.3",
    "eds.es_mode": "threshold",
    "eds.es_drop_p": "0.2",
    "train.steps": "800",
    "train.lr": "1e-4",
    "train.weight_decay": "5e-2",
    "train.clip_len": "5",
    "train.grad_clip": "1.0",
    "loss.cls": "2.0",
    "loss.dice": "5.0",
    "loss.bce": "5.0",
    "loss.bg_weight": "0.1",
    "eval.iou_thresh": "0.5",
    "eval.frame_tol": "1",
}

SCENARIO_PRESETS: dict[str, dict] = {
    "easy": dict(frames=10, height=16, width=16, num_objects=3, num_classes=3,
                 emergence_rate=0.0, disappearance_rate=0.0),
    "sparse-ed": dict(frames=10, height=16, width=16, num_objects=5, num_classes=3,
                      emergence_rate=0.2, disappearance_rate=0.2),
    "dense-ed": dict(frames=10, height=16, width=16, num_objects=6, num_classes=3,
                     emergence_rate=0.8, disappearance_rate=0.8),
}


class RunConfig:
    def __init__(self, values: dict[str, str] | None = None):
        self.values = dict(DEFAULTS)
        if values:
            for k, v in values.items():
                self._set_known(k, v)

    def _set_known(self, key: str, value: str) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown configuration key {key!r}")
        self.values[key] = value

    # -- loading layers

    @classmethod
    def load(cls, path=None, overrides: dict[str, str] | None = None,
             env: dict[str, str] | None = None) -> "RunConfig":
        cfg = cls()
        if path is not None:
            cfg.read_file(path)
        cfg.apply_env(os.environ if env is None else env)
        for k, v in (overrides or {}).items():
            cfg._set_known(k, v)
        return cfg

    def read_file(self, path) -> None:
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        except configparser.Error as e:
            raise ConfigError(f"malformed config file {path}: {e}") from e
        for section in parser.sections():
            for key, value in parser.items(section):
                self._set_known(f"{section}.{key}", value)

    def apply_env(self, env) -> None:
        for key in DEFAULTS:
            name = ENV_PREFIX + key.replace(".", "_").upper()
            if name in env:
                self.values[key] = env[name]

    # -- typed access

    def _parse(self, key: str, conv, what: str):
        raw = self.values[key]
        try:
            return conv(raw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{key}: expected {what}, got {raw!r}") from e

    def get_int(self, key: str) -> int:
        return self._parse(key, int, "an integer")

    def get_float(self, key: str) -> float:
        return self._parse(key, float, "a number")

    def get_str(self, key: str) -> str:
        return self.values[key]

    def get_bool(self, key: str) -> bool:
        raw = self.values[key].strip().lower()
        if raw in ("1", "true", "yes", "on"):
            return True
        if raw in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")

    # -- object builders

    def model_config(self) -> ModelConfig:
        num_static_raw = self.values["tracker.num_static"].strip()
        try:
            return ModelConfig(
                dim=self.get_int("model.dim"),
                heads=self.get_int("model.heads"),
                layers=self.get_int("model.layers"),
                num_classes=self.get_int("model.num_classes"),
                n_queries=self.get_int("segmenter.n_queries"),
                top_k=self.get_int("daq.top_k"),
                num_learnable=self.get_int("daq.num_learnable"),
                accept_threshold=self.get_float("tracker.accept_threshold"),
                dup_iou=self.get_float("tracker.dup_iou"),
                grace_frames=self.get_int("tracker.grace_frames"),
                num_static=int(num_static_raw) if num_static_raw else None,
                emg_source=self.get_str("daq.emg_source"),
                emg_usage=self.get_str("daq.emg_usage"),
                dis_feat=self.get_str("daq.dis_feat"),
                dis_pos=self.get_str("daq.dis_pos"),
            )
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def noise_spec(self) -> NoiseSpec:
        try:
            spec = NoiseSpec(
                n_queries=self.get_int("segmenter.n_queries"),
                num_classes=self.get_int("model.num_classes"),
                feature_sigma=self.get_float("segmenter.feature_sigma"),
                mask_jitter=self.get_float("segmenter.mask_jitter"),
                label_flip=self.get_float("segmenter.label_flip"),
                miss_rate=self.get_float("segmenter.miss_rate"),
                clutter_rate=self.get_float("segmenter.clutter_rate"),
            )
            spec.validate()
            return spec
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def eds_config(self) -> EdsConfig | None:
        if not self.get_bool("eds.enabled"):
            return None
        try:
            return EdsConfig(
                es_threshold=self.get_float("eds.es_threshold"),
                ds_mode=self.get_str("eds.ds_mode"),
                ds_rate=self.get_float("eds.ds_rate"),
                es_mode=self.get_str("eds.es_mode"),
                es_drop_p=self.get_float("eds.es_drop_p"),
            )
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(
                steps=self.get_int("train.steps"),
                lr=self.get_float("train.lr"),
                weight_decay=self.get_float("train.weight_decay"),
                clip_len=self.get_int("train.clip_len"),
                grad_clip=self.get_float("train.grad_clip"),
                eds_enabled=self.get_bool("eds.enabled"),
            )
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def loss_config(self) -> LossConfig:
        try:
            return LossConfig(w_cls=self.get_float("loss.cls"),
                              w_dice=self.get_float("loss.dice"),
                              w_bce=self.get_float("loss.bce"),
                              bg_weight=self.get_float("loss.bg_weight"))
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def scenario_spec(self, preset: str) -> ScenarioSpec:
        if preset not in SCENARIO_PRESETS:
            raise ConfigError(
                f"unknown preset {preset!r}; choose from {sorted(SCENARIO_PRESETS)}")
        return ScenarioSpec(feature_dim=self.get_int("model.dim"),
                            **SCENARIO_PRESETS[preset])


def parse_set_overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects section.key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out
