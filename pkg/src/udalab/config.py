"""Experiment config files: a plain sectioned key=value format.

Five sections -- [dataset], [method], [optim], [batch], [run] -- with a
strict schema: unknown keys are rejected with the offending field path, as
are unknown generator/method/optimizer names. Parsing normalises every value
and fills defaults, so parse -> serialize -> parse is the identity.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass

from .data import AUGMENT_STEPS, DomainPair, circle_means, gen_blobs_shift, gen_digits_pair, make_moons_pair, plan_batches
from .errors import ConfigError
from .methods import ArchConfig, METHOD_CONFIGS, METHOD_NAMES, OptimSpec

SECTIONS = ("dataset", "method", "optim", "batch", "run")

GENERATORS = ("two_moons_rotated", "blobs", "digits")

_REQUIRED = object()


# ------------------------------------------------------------- value parsing

def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_ints(raw: str) -> tuple[int, ...]:
    parts = [p.strip() for p in str(raw).split(",") if p.strip()]
    return tuple(int(p) for p in parts)


def _parse_floats(raw: str) -> tuple[float, ...]:
    parts = [p.strip() for p in str(raw).split(",") if p.strip()]
    return tuple(float(p) for p in parts)


def parse_pipeline(raw: str) -> tuple[tuple[str, tuple[float, ...]], ...]:
    """Augmentation pipeline syntax: ``step(arg,...)|step(arg,...)``."""
    raw = raw.strip()
    if not raw:
        return ()
    steps = []
    for chunk in raw.split("|"):
        chunk = chunk.strip()
        if "(" in chunk:
            if not chunk.endswith(")"):
                raise ValueError(f"malformed step {chunk!r}")
            name, arg_text = chunk[:-1].split("(", 1)
            args = tuple(float(a) for a in arg_text.split(",") if a.strip())
        else:
            name, args = chunk, ()
        name = name.strip()
        if name not in AUGMENT_STEPS:
            raise ValueError(f"unknown augmentation step {name!r}")
        steps.append((name, args))
    return tuple(steps)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):   # pipeline
            return "|".join(f"{n}({','.join(repr(a) for a in args)})" for n, args in value)
        return ",".join(_fmt(v) for v in value)
    return str(value)


_PARSERS = {
    "int": int,
    "float": float,
    "bool": _parse_bool,
    "str": lambda raw: str(raw).strip(),
    "ints": _parse_ints,
    "floats": _parse_floats,
    "pipeline": parse_pipeline,
}


# ------------------------------------------------------------------- schemas

def _dataset_schema(generator: str) -> dict:
    common = {"generator": ("str", _REQUIRED)}
    per_generator = {
        "two_moons_rotated": {
            "n": ("int", 500),
            "noise": ("float", 0.1),
            "angle": ("float", 30.0),
            "seed": ("int", 0),
        },
        "blobs": {
            "classes": ("int", 3),
            "n_per_class": ("int", 100),
            "offset": ("floats", (1.5, 0.0)),
            "std": ("float", 0.6),
            "spread": ("float", 3.0),
            "seed": ("int", 0),
        },
        "digits": {
            "classes": ("int", 4),
            "n_per_class": ("int", 50),
            "noise_source": ("float", 0.05),
            "noise_target": ("float", 0.15),
            "target_intensity": ("float", 0.6),
            "size": ("int", 12),
            "seed": ("int", 0),
            "augment": ("pipeline", ()),
        },
    }
    if generator not in per_generator:
        raise ConfigError(f"dataset.generator: unknown generator {generator!r}; "
                          f"choose one of {GENERATORS}")
    return {**common, **per_generator[generator]}


_ARCH_KEYS = {
    "feature_hidden": ("ints", (16, 16)),
    "label_hidden": ("ints", (16,)),
    "domain_hidden": ("ints", (16, 16)),
    "domain_dropout": ("float", 0.5),
}


def _method_schema(name: str) -> dict:
    common = {"name": ("str", _REQUIRED), **_ARCH_KEYS}
    per_method = {
        "source_only": {},
        "dann": {"lambda_grl": ("float", 1.0), "lambda_ramp": ("str", "constant")},
        "mstn": {"lambda_dc": ("float", 1.0), "gamma_sm": ("float", 1.0), "ema": ("float", 0.7)},
        "fixbi": {
            "lambda_sd": ("float", 0.7), "lambda_td": ("float", 0.3),
            "tau0": ("float", 0.95), "warmup_k": ("int", 100),
        },
        "dann_fixbi": {
            "variant": ("str", "separate"), "beta": ("float", 1.0), "gamma_dom": ("float", 1.0),
            "lambda_sd": ("float", 0.9), "lambda_td": ("float", 0.7),
            "tau0": ("float", 0.95), "warmup_k": ("int", 100),
            "lambda_grl": ("float", 1.0), "lambda_ramp": ("str", "constant"),
        },
    }
    if name not in per_method:
        raise ConfigError(f"method.name: unknown method {name!r}; choose one of {METHOD_NAMES}")
    return {**common, **per_method[name]}


_OPTIM_SCHEMA = {
    "optimizer": ("str", "sgd"),
    "lr": ("float", 0.05),
    "momentum": ("float", 0.9),
    "weight_decay": ("float", 0.0005),
    "nesterov": ("bool", False),
    "scheduler": ("str", "cosine"),
    "eta0": ("float", 0.01),
    "alpha": ("float", 10.0),
    "beta": ("float", 0.75),
    "eta_min": ("float", 0.0),
}

_BATCH_SCHEMA = {
    "strategy": ("str", "proportional"),
    "budget": ("int", 64),
}

_RUN_SCHEMA = {
    "epochs": ("int", 60),
    "seeds": ("ints", (0, 1, 2)),
    "out": ("str", "results"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Normalised experiment description; all values typed, defaults filled."""

    dataset: dict
    method: dict
    optim: dict
    batch: dict
    run: dict

    def sections(self) -> dict:
        return {"dataset": self.dataset, "method": self.method, "optim": self.optim,
                "batch": self.batch, "run": self.run}


def _apply_schema(section: str, raw: dict, schema: dict) -> dict:
    out = {}
    for key, value in raw.items():
        if key not in schema:
            raise ConfigError(f"{section}.{key}: unknown key")
    for key, (kind, default) in schema.items():
        if key in raw:
            try:
                out[key] = _PARSERS[kind](raw[key])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{section}.{key}: {exc}") from None
        elif default is _REQUIRED:
            raise ConfigError(f"{section}.{key}: required key is missing")
        else:
            out[key] = default
    return out


def _normalize(raw_sections: dict) -> ExperimentConfig:
    for section in raw_sections:
        if section not in SECTIONS:
            raise ConfigError(f"{section}: unknown section")
    dataset_raw = dict(raw_sections.get("dataset", {}))
    method_raw = dict(raw_sections.get("method", {}))
    if "generator" not in dataset_raw:
        raise ConfigError("dataset.generator: required key is missing")
    if "name" not in method_raw:
        raise ConfigError("method.name: required key is missing")
    dataset = _apply_schema("dataset", dataset_raw, _dataset_schema(dataset_raw["generator"].strip()))
    method = _apply_schema("method", method_raw, _method_schema(method_raw["name"].strip()))
    optim = _apply_schema("optim", dict(raw_sections.get("optim", {})), _OPTIM_SCHEMA)
    batch = _apply_schema("batch", dict(raw_sections.get("batch", {})), _BATCH_SCHEMA)
    run = _apply_schema("run", dict(raw_sections.get("run", {})), _RUN_SCHEMA)
    if optim["optimizer"] not in ("sgd", "adam"):
        raise ConfigError(f"optim.optimizer: unknown optimizer {optim['optimizer']!r}")
    if optim["scheduler"] not in ("none", "custom", "cosine"):
        raise ConfigError(f"optim.scheduler: unknown scheduler {optim['scheduler']!r}")
    if batch["strategy"] not in ("proportional", "concat"):
        raise ConfigError(f"batch.strategy: unknown strategy {batch['strategy']!r}")
    if any(s < 0 for s in run["seeds"]):
        raise ConfigError("run.seeds: seeds must be nonnegative")
    if run["epochs"] < 0:
        raise ConfigError("run.epochs: must be nonnegative")
    return ExperimentConfig(dataset, method, optim, batch, run)


def apply_overrides(raw_sections: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings onto the raw string mapping."""
    out = {sec: dict(body) for sec, body in raw_sections.items()}
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        path, value = item.split("=", 1)
        if "." not in path:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        section, key = path.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"{section}: unknown section in override {item!r}")
        out.setdefault(section, {})[key.strip()] = value.strip()
    return out


def parse_config(text: str, overrides=None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config does not parse: {exc}") from None
    raw = {section: dict(parser.items(section)) for section in parser.sections()}
    if overrides:
        raw = apply_overrides(raw, overrides)
    return _normalize(raw)


def load_config(path, overrides=None) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), overrides)


def serialize_config(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    for section, body in cfg.sections().items():
        parser[section] = {key: _fmt(value) for key, value in body.items()}
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()


# ------------------------------------------------------------------ builders

def build_pair(dataset: dict) -> DomainPair:
    gen = dataset["generator"]
    if gen == "two_moons_rotated":
        return make_moons_pair(dataset["n"], dataset["noise"], dataset["angle"], dataset["seed"])
    if gen == "blobs":
        means = circle_means(dataset["classes"], dataset["spread"])
        return gen_blobs_shift(dataset["classes"], dataset["n_per_class"], means,
                               dataset["offset"], dataset["std"], dataset["seed"])
    if gen == "digits":
        return gen_digits_pair(dataset["classes"], dataset["n_per_class"],
                               dataset["noise_source"], dataset["noise_target"],
                               dataset["target_intensity"], dataset["seed"], dataset["size"])
    raise ConfigError(f"dataset.generator: unknown generator {gen!r}")


def build_method(cfg: ExperimentConfig):
    """(method name, method config with run.epochs injected, arch config)."""
    body = dict(cfg.method)
    name = body.pop("name")
    arch = ArchConfig(
        feature_hidden=body.pop("feature_hidden"),
        label_hidden=body.pop("label_hidden"),
        domain_hidden=body.pop("domain_hidden"),
        domain_dropout=body.pop("domain_dropout"),
    )
    method_cfg = METHOD_CONFIGS[name](epochs=cfg.run["epochs"], **body)
    return name, method_cfg, arch


def build_optim(cfg: ExperimentConfig) -> OptimSpec:
    o = cfg.optim
    return OptimSpec(
        algorithm=o["optimizer"], lr=o["lr"], momentum=o["momentum"],
        weight_decay=o["weight_decay"], nesterov=o["nesterov"],
        scheduler=o["scheduler"], eta0=o["eta0"], alpha=o["alpha"],
        beta=o["beta"], eta_min=o["eta_min"],
    )


def build_plan(cfg: ExperimentConfig, pair: DomainPair):
    return plan_batches(cfg.batch["strategy"], pair.source.n, pair.target.n, cfg.batch["budget"])
