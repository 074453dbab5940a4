"""Run configuration: dataclass <-> dict mapping plus strict YAML loading.

Unknown keys are rejected at every level so a typo fails loudly instead of
silently running defaults. Environment variables may override paths and the
service port, nothing else.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .bridge import BridgeConfig, FinetuneMode, PromptSet
from .encoder import EncoderConfig
from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Malformed or contradictory run configuration."""


def _take(d: dict, allowed: set[str], ctx: str) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{ctx}: expected a mapping, got {type(d).__name__}")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{ctx}: unknown keys {sorted(unknown)}; allowed keys are {sorted(allowed)}")
    return dict(d)


# dataclass -> dict ---------------------------------------------------------


def prompts_to_dict(p: PromptSet) -> dict:
    return {
        "system_text": p.system_text,
        "realism_text": p.realism_text,
        "include_object_name": p.include_object_name,
        "object_name": p.object_name,
    }


def model_config_to_dict(cfg: ModelConfig) -> dict:
    e, b = cfg.encoder, cfg.bridge
    return {
        "encoder": {
            "num_groups": e.num_groups,
            "group_size": e.group_size,
            "d_model": e.d_model,
            "hidden": e.hidden,
            "max_points": e.max_points,
        },
        "bridge": {
            "vocab_size": b.vocab_size,
            "d_model": b.d_model,
            "n_layers": b.n_layers,
            "n_heads": b.n_heads,
            "max_seq": b.max_seq,
            "finetune_mode": str(b.finetune_mode),
        },
        "prompts": prompts_to_dict(cfg.prompts),
        "num_points": cfg.num_points,
        "encoder_kind": cfg.encoder_kind,
        "decoder_hidden": cfg.decoder_hidden,
    }


def train_config_to_dict(cfg: TrainConfig) -> dict:
    return {
        "lr": cfg.lr,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "weight_decay": cfg.weight_decay,
        "beta1": cfg.beta1,
        "beta2": cfg.beta2,
        "eps": cfg.eps,
        "loss_mode": cfg.loss_mode,
        "loss_form": cfg.loss_form,
        "encoder_frozen": cfg.encoder_frozen,
        "prompt_object_names": cfg.prompt_object_names,
        "max_steps": cfg.max_steps,
        "seed": cfg.seed,
    }


# dict -> dataclass ---------------------------------------------------------


def prompts_from_dict(d: dict, ctx: str = "prompts") -> PromptSet:
    d = _take(d, {"system_text", "realism_text", "include_object_name", "object_name"}, ctx)
    try:
        return PromptSet(**d).validate()
    except ValueError as exc:
        raise ConfigError(f"{ctx}: {exc}") from exc


def model_config_from_dict(d: dict, ctx: str = "model") -> ModelConfig:
    d = _take(d, {"encoder", "bridge", "prompts", "num_points", "encoder_kind", "decoder_hidden"}, ctx)
    kwargs = {}
    if "encoder" in d:
        e = _take(d["encoder"], {"num_groups", "group_size", "d_model", "hidden", "max_points"},
                  f"{ctx}.encoder")
        kwargs["encoder"] = EncoderConfig(**e)
    if "bridge" in d:
        b = _take(d["bridge"], {"vocab_size", "d_model", "n_layers", "n_heads", "max_seq", "finetune_mode"},
                  f"{ctx}.bridge")
        if "finetune_mode" in b:
            b["finetune_mode"] = FinetuneMode.parse(b["finetune_mode"])
        kwargs["bridge"] = BridgeConfig(**b)
    if "prompts" in d:
        kwargs["prompts"] = prompts_from_dict(d["prompts"], f"{ctx}.prompts")
    for key in ("num_points", "encoder_kind", "decoder_hidden"):
        if key in d:
            kwargs[key] = d[key]
    try:
        return ModelConfig(**kwargs).validate()
    except ValueError as exc:
        raise ConfigError(f"{ctx}: {exc}") from exc


def train_config_from_dict(d: dict, ctx: str = "train") -> TrainConfig:
    d = _take(d, {"lr", "epochs", "batch_size", "weight_decay", "beta1", "beta2", "eps",
                  "loss_mode", "loss_form", "encoder_frozen", "prompt_object_names",
                  "max_steps", "seed"}, ctx)
    try:
        return TrainConfig(**d).validate()
    except ValueError as exc:
        raise ConfigError(f"{ctx}: {exc}") from exc


# run config ----------------------------------------------------------------


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8470
    session_dir: str = "sessions"
    mesh_dir: str = "meshes"
    dataset_dir: str = "datasets"
    ui_dir: str | None = None          # static frontend bundle, optional
    cors_origins: tuple[str, ...] = ()
    checkpoints: dict[str, str] = field(default_factory=dict)  # name -> file
    max_upload_bytes: int = 8 * 1024 * 1024

    def validate(self) -> "ServiceConfig":
        if not (1 <= self.port <= 65535):
            raise ConfigError(f"port must be in [1, 65535], got {self.port}")
        if self.max_upload_bytes < 1:
            raise ConfigError(f"max_upload_bytes must be positive, got {self.max_upload_bytes}")
        return self


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)
    seed: int = 0
    data_dir: str | None = None

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.train.validate()
        self.service.validate()
        return self


def service_config_from_dict(d: dict, ctx: str = "service") -> ServiceConfig:
    d = _take(d, {"host", "port", "session_dir", "mesh_dir", "dataset_dir", "ui_dir",
                  "cors_origins", "checkpoints", "max_upload_bytes"}, ctx)
    if "cors_origins" in d:
        origins = d["cors_origins"]
        if not isinstance(origins, list) or not all(isinstance(o, str) for o in origins):
            raise ConfigError(f"{ctx}.cors_origins: expected a list of strings")
        d["cors_origins"] = tuple(origins)
    if "checkpoints" in d:
        ckpts = d["checkpoints"]
        if not isinstance(ckpts, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in ckpts.items()
        ):
            raise ConfigError(f"{ctx}.checkpoints: expected a mapping of name to file path")
    return ServiceConfig(**d).validate()


def run_config_from_dict(d: dict) -> RunConfig:
    d = _take(d, {"model", "train", "service", "seed", "data_dir"}, "run config")
    kwargs = {}
    if "model" in d:
        kwargs["model"] = model_config_from_dict(d["model"])
    if "train" in d:
        kwargs["train"] = train_config_from_dict(d["train"])
    if "service" in d:
        kwargs["service"] = service_config_from_dict(d["service"])
    for key in ("seed", "data_dir"):
        if key in d:
            kwargs[key] = d[key]
    return RunConfig(**kwargs).validate()


def load_run_config(path: str | Path, apply_env: bool = True) -> RunConfig:
    """Parse a YAML run config; an empty file means all defaults.

    With apply_env=False the caller layers flag overrides first and applies
    the environment itself (environment wins over flags for paths/ports).
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if raw is None:
        raw = {}
    cfg = run_config_from_dict(raw)
    return apply_env_overrides(cfg) if apply_env else cfg


ENV_PREFIX = "SHAPEREALISM_"


def apply_env_overrides(cfg: RunConfig, environ=None) -> RunConfig:
    """Overlay path and port overrides from the environment.

    Only deployment-location knobs are overridable; behavior (model shape,
    training, prompts) always comes from the file.
    """
    env = os.environ if environ is None else environ
    svc = cfg.service
    if ENV_PREFIX + "PORT" in env:
        try:
            svc = replace(svc, port=int(env[ENV_PREFIX + "PORT"]))
        except ValueError as exc:
            raise ConfigError(f"{ENV_PREFIX}PORT must be an integer") from exc
    for var, attr in (("SESSION_DIR", "session_dir"), ("MESH_DIR", "mesh_dir"),
                      ("DATASET_DIR", "dataset_dir"), ("UI_DIR", "ui_dir")):
        if ENV_PREFIX + var in env:
            svc = replace(svc, **{attr: env[ENV_PREFIX + var]})
    if ENV_PREFIX + "CHECKPOINT" in env:
        svc = replace(svc, checkpoints={**svc.checkpoints, "default": env[ENV_PREFIX + "CHECKPOINT"]})
    data_dir = env.get(ENV_PREFIX + "DATA_DIR", cfg.data_dir)
    return replace(cfg, service=svc.validate(), data_dir=data_dir)
