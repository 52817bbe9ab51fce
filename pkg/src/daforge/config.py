"""Flat ``key = value`` configuration files.

One setting per line; ``#`` starts a comment.  Keys name fields of
:class:`~daforge.experiment.ExperimentConfig`, of
:class:`~daforge.adversarial.HyperParams` (``lam``, ``beta``, ``lr``, ...)
or of :class:`~daforge.data.SynthSpec` with a ``synth.`` prefix
(``synth.target_counts = 500,50,50,50``).  Lists are comma separated.
``preset = desk|paper`` picks the starting hyperparameters.
"""
from __future__ import annotations

from dataclasses import fields, replace
from pathlib import Path

from .data import SynthSpec
from .experiment import desk_config, paper_config


class ConfigError(ValueError):
    pass


def parse_kv(text, source="<config>"):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def read_kv(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_kv(text, str(path))


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _none_or(conv):
    def parse(text):
        return None if str(text).strip().lower() in ("", "none") else conv(text)
    return parse


def _list(conv):
    def parse(text):
        if isinstance(text, (list, tuple)):
            return tuple(conv(t) for t in text)
        return tuple(conv(t.strip()) for t in str(text).split(",") if t.strip())
    return parse


def _total(text):
    return "max" if str(text).strip() == "max" else int(text)


# parser per key; the value's home is decided by which dataclass owns the name
_EXPERIMENT = {
    "source": _none_or(str), "target": _none_or(str), "methods": _list(str),
    "augmented": _list(_bool), "sizes": _list(int), "repeats": int, "train_fraction": float,
    "seed": int, "arch": str, "epochs": int, "vanilla_lr": float, "vanilla_batch": int,
    "vanilla_filters": _list(int), "vanilla_hidden": _list(int), "ae_epochs": int,
    "ae_lr": float, "ae_channels": _none_or(int), "noise_std": float, "augment_total": _total,
    "add_per_class": _none_or(int), "skip_classes": _list(str), "out_dir": str,
}
_HYPER = {
    "lam": float, "beta": float, "gamma": float, "lr": float, "batch_size": int,
    "iterations": int, "optimizer": str, "adam_beta1": float,
}
_SYNTH = {
    "source_shape": _list(int), "target_shape": _list(int), "n_classes": int,
    "source_counts": _list(int), "target_counts": _list(int), "source_noise": float,
    "target_noise": float, "target_shift": float, "seed": int,
    "class_names": _none_or(_list(str)),
}

KNOWN_KEYS = sorted(set(_EXPERIMENT) | set(_HYPER) | {f"synth.{k}" for k in _SYNTH} | {"preset"})


def build_config(settings, base=None):
    """Fold string ``settings`` into an :class:`ExperimentConfig`.

    Later sources should be merged into ``settings`` by the caller so that
    command-line flags override file values.
    """
    settings = dict(settings)
    preset = settings.pop("preset", None)
    if base is None:
        if preset in (None, "desk"):
            base = desk_config()
        elif preset == "paper":
            base = paper_config()
        else:
            raise ConfigError(f"unknown preset {preset!r} (desk or paper)")
    exp, hyper, synth = {}, {}, {}
    for key, value in settings.items():
        try:
            if key.startswith("synth."):
                name = key[len("synth."):]
                if name not in _SYNTH:
                    raise KeyError(key)
                synth[name] = _SYNTH[name](value)
            elif key in _HYPER:
                hyper[key] = _HYPER[key](value)
            elif key in _EXPERIMENT:
                exp[key] = _EXPERIMENT[key](value)
            else:
                raise KeyError(key)
        except KeyError:
            raise ConfigError(f"unknown config key {key!r}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    try:
        if synth:
            exp["synth"] = replace(base.synth, **synth)
            exp["synth"].validate()
        if hyper:
            exp["hyper"] = replace(base.hyper, **hyper)
        return replace(base, **exp)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def dump_config(cfg):
    """Inverse of :func:`build_config` (for logging the effective settings)."""
    lines = []

    def fmt(v):
        if isinstance(v, (list, tuple)):
            return ",".join(str(int(e)) if isinstance(e, bool) else str(e) for e in v)
        return "none" if v is None else str(v)

    for f in fields(cfg):
        if f.name in ("synth", "hyper"):
            continue
        lines.append(f"{f.name} = {fmt(getattr(cfg, f.name))}")
    for f in fields(cfg.hyper):
        lines.append(f"{f.name} = {fmt(getattr(cfg.hyper, f.name))}")
    for f in fields(SynthSpec):
        lines.append(f"synth.{f.name} = {fmt(getattr(cfg.synth, f.name))}")
    return "\n".join(lines) + "\n"
