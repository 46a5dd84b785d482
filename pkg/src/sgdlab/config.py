"""Experiment configuration: a YAML document, validated fail-closed.

One file describes one experiment and fully determines every output byte.
Unknown keys are rejected with the offending path; schedules that violate
the divergent-sum / convergent-square-sum step-size condition are rejected
unless ``allow_non_rm: true`` is set (they are legitimate negative
controls, but never by accident).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any

import numpy as np
import yaml

from .engine import StepSchedule, robbins_monro_check
from .losses import loss_from_name
from .model import make_linear_gaussian, make_logistic_gaussian
from .sets import set_from_config

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "load_config", "DEFAULT_CONFIG"]


class ConfigError(ValueError):
    """Configuration rejected; the message names the offending field."""


DEFAULT_CONFIG: dict[str, Any] = {
    "problem": {
        "dimension": 10,
        "distribution": "linear-gaussian",
        "w_star": "unit-ones",
        "noise_sigma": 0.5,
    },
    "loss": "square",
    "constraint": {"kind": "ball", "radius": 2.0},
    "schedule": {"a": 0.5, "b": 1.0, "alpha": 1.0},
    "run": {
        "n_steps": 100_000,
        "replicates": 20,
        "base_seed": 20240501,
        "record_stride": None,
    },
    "stability": {"fresh_draws": 10_000, "checkpoints": 20},
    "convergence": {"epsilon": 0.05, "near_threshold": 0.1, "risk_mc_draws": 100_000},
    "output": {"emit_plots": False},
    "allow_non_rm": False,
}

_ALLOWED = {
    "": {"problem", "loss", "constraint", "schedule", "run", "stability", "convergence", "output", "allow_non_rm"},
    "problem": {"dimension", "distribution", "w_star", "noise_sigma"},
    "constraint": {"kind", "radius", "center", "lo", "hi", "scale", "normal", "offset"},
    "schedule": {"a", "b", "alpha"},
    "run": {"n_steps", "replicates", "base_seed", "record_stride"},
    "stability": {"fresh_draws", "checkpoints"},
    "convergence": {"epsilon", "near_threshold", "risk_mc_draws"},
    "output": {"emit_plots"},
}

_CONSTRAINT_KEYS = {
    "whole-space": set(),
    "ball": {"radius", "center"},
    "box": {"lo", "hi"},
    "simplex": {"scale"},
    "halfspace": {"normal", "offset"},
}


def _fail(path: str, message: str):
    raise ConfigError(f"config field '{path}': {message}" if path else f"config: {message}")


def _check_keys(mapping: dict, section: str):
    allowed = _ALLOWED[section]
    for key in mapping:
        if key not in allowed:
            where = section or "top level"
            _fail(f"{section + '.' if section else ''}{key}", f"unknown key in {where}")


def _as_number(value, path, *, minimum=None, strict_min=None, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, f"expected a number, got {value!r}")
    if integer and int(value) != value:
        _fail(path, f"expected an integer, got {value!r}")
    v = int(value) if integer else float(value)
    if minimum is not None and v < minimum:
        _fail(path, f"must be >= {minimum}, got {v}")
    if strict_min is not None and v <= strict_min:
        _fail(path, f"must be > {strict_min}, got {v}")
    return v


def _as_bool(value, path):
    if not isinstance(value, bool):
        _fail(path, f"expected true/false, got {value!r}")
    return value


def _merge(base: dict, override: dict, section: str) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value, f"{section}.{key}" if section else key)
        else:
            out[key] = value
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, fully resolved experiment description."""

    dimension: int
    distribution: str
    w_star: tuple[float, ...]
    noise_sigma: float
    loss: str
    constraint: dict
    schedule_a: float
    schedule_b: float
    schedule_alpha: float
    n_steps: int
    replicates: int
    base_seed: int
    record_stride: int | None
    stability_draws: int
    stability_checkpoints: int
    epsilon: float
    near_threshold: float
    risk_mc_draws: int
    emit_plots: bool
    allow_non_rm: bool

    def resolved(self) -> dict:
        """Canonical nested form; hashing this pins the whole experiment."""
        return {
            "problem": {
                "dimension": self.dimension,
                "distribution": self.distribution,
                "w_star": list(self.w_star),
                "noise_sigma": self.noise_sigma,
            },
            "loss": self.loss,
            "constraint": self.constraint,
            "schedule": {"a": self.schedule_a, "b": self.schedule_b, "alpha": self.schedule_alpha},
            "run": {
                "n_steps": self.n_steps,
                "replicates": self.replicates,
                "base_seed": self.base_seed,
                "record_stride": self.record_stride,
            },
            "stability": {"fresh_draws": self.stability_draws, "checkpoints": self.stability_checkpoints},
            "convergence": {"epsilon": self.epsilon, "near_threshold": self.near_threshold,
                            "risk_mc_draws": self.risk_mc_draws},
            "output": {"emit_plots": self.emit_plots},
            "allow_non_rm": self.allow_non_rm,
        }

    def content_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.resolved(), sort_keys=True).encode()).hexdigest()

    # -- object builders --------------------------------------------------
    def build_distribution(self):
        w = np.asarray(self.w_star, dtype=float)
        if self.distribution == "linear-gaussian":
            return make_linear_gaussian(w, self.noise_sigma)
        return make_logistic_gaussian(w)

    def build_loss(self):
        return loss_from_name(self.loss)

    def build_constraint(self):
        return set_from_config(self.constraint, self.dimension)

    def build_schedule(self) -> StepSchedule:
        return StepSchedule(a=self.schedule_a, b=self.schedule_b, alpha=self.schedule_alpha)


def _resolve_w_star(value, dimension: int, path: str) -> tuple[float, ...]:
    if value == "unit-ones":
        return tuple(float(v) for v in np.ones(dimension) / np.sqrt(dimension))
    if isinstance(value, (list, tuple)):
        if len(value) != dimension:
            _fail(path, f"needs {dimension} entries, got {len(value)}")
        out = []
        for i, v in enumerate(value):
            out.append(_as_number(v, f"{path}[{i}]"))
        if not np.all(np.isfinite(out)):
            _fail(path, "entries must be finite")
        return tuple(float(v) for v in out)
    _fail(path, f"expected 'unit-ones' or a list of {dimension} numbers, got {value!r}")


def _resolve_constraint(raw: dict, dimension: int) -> dict:
    _check_keys(raw, "constraint")
    kind = raw.get("kind", "whole-space")
    if kind not in _CONSTRAINT_KEYS:
        _fail("constraint.kind", f"unknown set kind {kind!r}; expected one of {sorted(_CONSTRAINT_KEYS)}")
    extra = set(raw) - {"kind"} - _CONSTRAINT_KEYS[kind]
    if extra:
        _fail(f"constraint.{sorted(extra)[0]}", f"not a parameter of set kind {kind!r}")
    out: dict[str, Any] = {"kind": kind}
    if kind == "ball":
        out["radius"] = _as_number(raw.get("radius", 1.0), "constraint.radius", strict_min=0.0)
        if "center" in raw:
            center = raw["center"]
            if not isinstance(center, (list, tuple)) or len(center) != dimension:
                _fail("constraint.center", f"expected a list of {dimension} numbers")
            out["center"] = [_as_number(v, "constraint.center") for v in center]
    elif kind == "box":
        for name in ("lo", "hi"):
            if name not in raw:
                _fail(f"constraint.{name}", "required for box sets")
            v = raw[name]
            if isinstance(v, (list, tuple)):
                if len(v) != dimension:
                    _fail(f"constraint.{name}", f"expected {dimension} entries")
                out[name] = [_as_number(u, f"constraint.{name}") for u in v]
            else:
                out[name] = _as_number(v, f"constraint.{name}")
    elif kind == "simplex":
        out["scale"] = _as_number(raw.get("scale", 1.0), "constraint.scale", strict_min=0.0)
    elif kind == "halfspace":
        if "normal" not in raw or "offset" not in raw:
            _fail("constraint.normal", "halfspace needs 'normal' and 'offset'")
        normal = raw["normal"]
        if not isinstance(normal, (list, tuple)) or len(normal) != dimension:
            _fail("constraint.normal", f"expected a list of {dimension} numbers")
        out["normal"] = [_as_number(v, "constraint.normal") for v in normal]
        out["offset"] = _as_number(raw["offset"], "constraint.offset")
    return out


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a YAML experiment document (missing keys default)."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"config: not valid YAML ({e})") from e
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a mapping")
    _check_keys(raw, "")
    for section in ("problem", "schedule", "run", "stability", "convergence", "output"):
        node = raw.get(section, {})
        if not isinstance(node, dict):
            _fail(section, "must be a mapping")
        _check_keys(node, section)
    merged = _merge(DEFAULT_CONFIG, raw, "")
    if "constraint" in raw:
        # set kinds carry disjoint parameters, so a user constraint replaces
        # the default outright instead of inheriting the ball's radius
        merged["constraint"] = raw["constraint"]

    prob = merged["problem"]
    dimension = _as_number(prob["dimension"], "problem.dimension", minimum=1, integer=True)
    distribution = prob["distribution"]
    if distribution not in ("linear-gaussian", "logistic-gaussian"):
        _fail("problem.distribution", f"unknown distribution {distribution!r}")
    noise_sigma = _as_number(prob["noise_sigma"], "problem.noise_sigma", minimum=0.0)
    w_star = _resolve_w_star(prob["w_star"], dimension, "problem.w_star")

    loss = merged["loss"]
    if loss not in ("square", "logistic", "hinge"):
        _fail("loss", f"unknown loss {loss!r}")
    constraint_node = merged["constraint"]
    if not isinstance(constraint_node, dict):
        _fail("constraint", "must be a mapping")
    constraint = _resolve_constraint(constraint_node, dimension)

    sched = merged["schedule"]
    a = _as_number(sched["a"], "schedule.a", strict_min=0.0)
    b = _as_number(sched["b"], "schedule.b", minimum=0.0)
    alpha = _as_number(sched["alpha"], "schedule.alpha", minimum=0.0)

    run = merged["run"]
    n_steps = _as_number(run["n_steps"], "run.n_steps", minimum=1, integer=True)
    replicates = _as_number(run["replicates"], "run.replicates", minimum=1, integer=True)
    base_seed = _as_number(run["base_seed"], "run.base_seed", minimum=0, integer=True)
    record_stride = run["record_stride"]
    if record_stride is not None:
        record_stride = _as_number(record_stride, "run.record_stride", minimum=1, integer=True)

    stab = merged["stability"]
    stability_draws = _as_number(stab["fresh_draws"], "stability.fresh_draws", minimum=2, integer=True)
    stability_checkpoints = _as_number(stab["checkpoints"], "stability.checkpoints", minimum=2, integer=True)

    conv = merged["convergence"]
    epsilon = _as_number(conv["epsilon"], "convergence.epsilon", strict_min=0.0)
    near_threshold = _as_number(conv["near_threshold"], "convergence.near_threshold", strict_min=0.0)
    risk_mc_draws = _as_number(conv["risk_mc_draws"], "convergence.risk_mc_draws", minimum=2, integer=True)

    emit_plots = _as_bool(merged["output"]["emit_plots"], "output.emit_plots")
    allow_non_rm = _as_bool(merged["allow_non_rm"], "allow_non_rm")

    cfg = ExperimentConfig(
        dimension=dimension,
        distribution=distribution,
        w_star=w_star,
        noise_sigma=noise_sigma,
        loss=loss,
        constraint=constraint,
        schedule_a=a,
        schedule_b=b,
        schedule_alpha=alpha,
        n_steps=n_steps,
        replicates=replicates,
        base_seed=base_seed,
        record_stride=record_stride,
        stability_draws=stability_draws,
        stability_checkpoints=stability_checkpoints,
        epsilon=epsilon,
        near_threshold=near_threshold,
        risk_mc_draws=risk_mc_draws,
        emit_plots=emit_plots,
        allow_non_rm=allow_non_rm,
    )
    if not robbins_monro_check(cfg.build_schedule()).passes and not allow_non_rm:
        _fail(
            "schedule.alpha",
            f"alpha={alpha} violates the Robbins-Monro step-size condition "
            "(need 1/2 < alpha <= 1 for a divergent sum with convergent squares); "
            "set allow_non_rm: true to run it as a negative control",
        )
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
