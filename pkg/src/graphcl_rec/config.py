"""Run configuration: an INI-style ``key = value`` file with sections.

    [data]      path, min_user_interactions, min_item_interactions, train_fraction, split_seed
    [model]     kind, layers, combination, dim, message_dropout, activation
    [loss]      main, gcl, t1, t2, tau_plus, beta, lambda, edge_drop,
                use_clamp, clamp_floor, renormalize_views
    [train]     epochs, batch_size, lr, seed, eval_every, early_stop_patience, k
    [output]    dir, run_name

Unset keys take the defaults below.  Relative paths are resolved against the
config file's directory.  ``message_dropout`` left blank means 0.2 without the
graph contrastive term and 0 with it.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .encoders import EncoderConfig
from .losses import LossConfig
from .train import TrainConfig


class ConfigError(ValueError):
    def __init__(self, field_name: str, reason: str):
        super().__init__(f"config field {field_name}: {reason}")
        self.field = field_name


DEFAULTS = {
    "data": {"path": "", "min_user_interactions": "10", "min_item_interactions": "",
             "train_fraction": "0.8", "split_seed": "0"},
    "model": {"kind": "lightgcn", "layers": "2", "combination": "", "dim": "128",
              "message_dropout": "", "activation": "relu"},
    "loss": {"main": "dcl", "gcl": "true", "t1": "0.8", "t2": "0.1", "tau_plus": "0.001",
             "beta": "0.1", "lambda": "0.0001", "edge_drop": "0.3", "use_clamp": "true",
             "clamp_floor": "exp_neg_inv_t2", "renormalize_views": "true"},
    "train": {"epochs": "100", "batch_size": "2048", "lr": "0.001", "seed": "0",
              "eval_every": "1", "early_stop_patience": "0", "k": "20"},
    "output": {"dir": "runs", "run_name": "run"},
}


@dataclass
class DataConfig:
    path: Path
    min_user_interactions: int = 10
    min_item_interactions: int | None = None
    train_fraction: float = 0.8
    split_seed: int = 0


@dataclass
class RunConfig:
    data: DataConfig
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: Path = Path("runs")
    run_name: str = "run"

    @property
    def run_dir(self) -> Path:
        return self.output_dir / self.run_name

    def replace_train(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, train=dataclasses.replace(self.train, **changes))


def _get(cp, section, key, conv, name=None):
    raw = cp.get(section, key, fallback=DEFAULTS[section][key]).strip()
    name = name or f"{section}.{key}"
    try:
        return conv(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(name, f"cannot parse {raw!r} ({exc})") from None


def _bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _opt(conv):
    return lambda raw: None if raw == "" else conv(raw)


def parse_config(text: str, base_dir: Path = Path(".")) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text)
    for section in cp.sections():
        if section not in DEFAULTS:
            raise ConfigError(section, "unknown section")
        for key in cp[section]:
            if key not in DEFAULTS[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")
    for section in DEFAULTS:
        if not cp.has_section(section):
            cp.add_section(section)

    path = _get(cp, "data", "path", str)
    if not path:
        raise ConfigError("data.path", "missing")
    data = DataConfig(
        path=(base_dir / path).resolve(),
        min_user_interactions=_get(cp, "data", "min_user_interactions", int),
        min_item_interactions=_get(cp, "data", "min_item_interactions", _opt(int)),
        train_fraction=_get(cp, "data", "train_fraction", float),
        split_seed=_get(cp, "data", "split_seed", int),
    )
    use_gcl = _get(cp, "loss", "gcl", _bool)
    dropout = _get(cp, "model", "message_dropout", _opt(float))
    if dropout is None:
        dropout = 0.0 if use_gcl else 0.2
    try:
        encoder = EncoderConfig(
            kind=_get(cp, "model", "kind", str),
            layers=_get(cp, "model", "layers", int),
            combination=_get(cp, "model", "combination", _opt(str)),
            message_dropout=dropout,
            activation=_get(cp, "model", "activation", str),
        )
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from None
    try:
        loss = LossConfig(
            t1=_get(cp, "loss", "t1", float), t2=_get(cp, "loss", "t2", float),
            tau_plus=_get(cp, "loss", "tau_plus", float), beta=_get(cp, "loss", "beta", float),
            lam=_get(cp, "loss", "lambda", float), use_clamp=_get(cp, "loss", "use_clamp", _bool),
            clamp_floor=_get(cp, "loss", "clamp_floor", str),
        )
    except ValueError as exc:
        raise ConfigError("loss", str(exc)) from None
    try:
        train = TrainConfig(
            epochs=_get(cp, "train", "epochs", int), batch_size=_get(cp, "train", "batch_size", int),
            lr=_get(cp, "train", "lr", float), seed=_get(cp, "train", "seed", int),
            dim=_get(cp, "model", "dim", int), main_loss=_get(cp, "loss", "main", str),
            use_gcl=use_gcl, edge_drop=_get(cp, "loss", "edge_drop", float),
            renormalize_views=_get(cp, "loss", "renormalize_views", _bool),
            eval_every=_get(cp, "train", "eval_every", int),
            early_stop_patience=_get(cp, "train", "early_stop_patience", int),
            k=_get(cp, "train", "k", int), encoder=encoder, loss=loss,
        )
    except ValueError as exc:
        raise ConfigError("train", str(exc)) from None
    out = Path(_get(cp, "output", "dir", str))
    return RunConfig(data, train, out if out.is_absolute() else (base_dir / out).resolve(),
                     _get(cp, "output", "run_name", str))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, path.parent)


def render_config(cfg: RunConfig) -> str:
    """Full config with every key spelled out; parses back to an equal RunConfig."""
    t, e, lo, d = cfg.train, cfg.train.encoder, cfg.train.loss, cfg.data
    sections = {
        "data": {"path": str(d.path), "min_user_interactions": d.min_user_interactions,
                 "min_item_interactions": "" if d.min_item_interactions is None else d.min_item_interactions,
                 "train_fraction": repr(d.train_fraction), "split_seed": d.split_seed},
        "model": {"kind": e.kind, "layers": e.layers, "combination": e.combination, "dim": t.dim,
                  "message_dropout": repr(e.message_dropout), "activation": e.activation},
        "loss": {"main": t.main_loss, "gcl": str(t.use_gcl).lower(), "t1": repr(lo.t1), "t2": repr(lo.t2),
                 "tau_plus": repr(lo.tau_plus), "beta": repr(lo.beta), "lambda": repr(lo.lam),
                 "edge_drop": repr(t.edge_drop), "use_clamp": str(lo.use_clamp).lower(),
                 "clamp_floor": lo.clamp_floor, "renormalize_views": str(t.renormalize_views).lower()},
        "train": {"epochs": t.epochs, "batch_size": t.batch_size, "lr": repr(t.lr), "seed": t.seed,
                  "eval_every": t.eval_every, "early_stop_patience": t.early_stop_patience, "k": t.k},
        "output": {"dir": str(cfg.output_dir), "run_name": cfg.run_name},
    }
    lines = []
    for name, kv in sections.items():
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {v}" for k, v in kv.items())
        lines.append("")
    return "\n".join(lines)
