"""Run configuration: flat key = value sections, strict validation, defaults.

Unknown sections or keys are rejected so typos fail loudly. Paper-derived
defaults: beta 0.35, eta 0.9, epsilon 0.1, K 3, window ratio 0.04,
temperatures per the objectives module; the desk-scale defaults shrink the
memory bank to 256 and the schedule to 60 epochs.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, field, fields


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_opt_int(raw: str):
    return None if raw.strip() == "" else int(raw)


def _parse_opt_str(raw: str):
    return None if raw.strip() == "" else raw.strip()


# section -> key -> (attribute, parser)
SCHEMA = {
    "dataset": {
        "path": ("dataset_path", _parse_opt_str),
        "n_classes": ("n_classes", int),
        "n_known": ("n_known", int),
        "per_class": ("per_class", int),
        "size": ("image_size", int),
        "channels": ("channels", int),
        "corruption": ("corruption", str),
        "severity": ("severity", int),
    },
    "spectral": {
        "window_ratio": ("window_ratio", float),
    },
    "separation": {
        "knn_k": ("knn_k", int),
        "anchor_subsample": ("anchor_subsample", _parse_opt_int),
        "gmm_max_iter": ("gmm_max_iter", int),
        "gmm_tol": ("gmm_tol", float),
        "refresh_epochs": ("fds_refresh_epochs", int),
        "log_amplitude": ("log_amplitude", _parse_bool),
    },
    "perturbation": {
        "bank_capacity": ("bank_capacity", int),
        "eta": ("eta", float),
        "gate_both": ("gate_both", _parse_bool),
        "class_aware": ("class_aware", _parse_bool),
    },
    "model": {
        "enc_hidden": ("enc_hidden", int),
        "embed_dim": ("embed_dim", int),
        "proj_hidden": ("proj_hidden", int),
        "proj_dim": ("proj_dim", int),
    },
    "objectives": {
        "beta": ("beta", float),
        "epsilon": ("epsilon", float),
        "tau_u": ("tau_u", float),
        "tau_c": ("tau_c", float),
        "tau_s": ("tau_s", float),
        "tau_t_start": ("tau_t_start", float),
        "tau_t_end": ("tau_t_end", float),
        "tau_t_warmup_epochs": ("tau_t_warmup_epochs", int),
    },
    "sampler": {
        "feature_capacity": ("cdas_feature_capacity", int),
        "draws_per_step": ("cdas_draws_per_step", int),
        "retrieve_n": ("cdas_retrieve_n", int),
        "weight": ("cdas_weight", float),
        "apply_contrastive": ("cdas_contrastive", _parse_bool),
        "apply_classification": ("cdas_classification", _parse_bool),
    },
    "train": {
        "epochs": ("epochs", int),
        "batch_size": ("batch_size", int),
        "lr0": ("lr0", float),
        "seed": ("seed", int),
        "eval_every": ("eval_every", int),
        "use_fds": ("use_fds", _parse_bool),
        "use_cdfp": ("use_cdfp", _parse_bool),
        "use_idfp": ("use_idfp", _parse_bool),
        "use_cdas": ("use_cdas", _parse_bool),
        "preview_count": ("preview_count", int),
    },
    "output": {
        "dir": ("out_dir", str),
    },
}


@dataclass
class RunConfig:
    # dataset
    dataset_path: str | None = None
    n_classes: int = 8
    n_known: int = 4
    per_class: int = 40
    image_size: int = 32
    channels: int = 3
    corruption: str = "fog_haze"
    severity: int = 4
    # spectral
    window_ratio: float = 0.04
    # separation
    knn_k: int = 3
    anchor_subsample: int | None = None
    gmm_max_iter: int = 100
    gmm_tol: float = 1e-7
    fds_refresh_epochs: int = 5
    log_amplitude: bool = False
    # perturbation
    bank_capacity: int = 256
    eta: float = 0.9
    gate_both: bool = True
    class_aware: bool = True
    # model
    enc_hidden: int = 256
    embed_dim: int = 128
    proj_hidden: int = 128
    proj_dim: int = 64
    # objectives
    beta: float = 0.35
    epsilon: float = 0.1
    tau_u: float = 0.07
    tau_c: float = 0.1
    tau_s: float = 0.1
    tau_t_start: float = 0.07
    tau_t_end: float = 0.04
    tau_t_warmup_epochs: int = 30
    # sampler
    cdas_feature_capacity: int = 64
    cdas_draws_per_step: int = 2
    cdas_retrieve_n: int = 16
    cdas_weight: float = 0.5
    cdas_contrastive: bool = True
    cdas_classification: bool = True
    # train
    epochs: int = 60
    batch_size: int = 64
    lr0: float = 0.1
    seed: int = 0
    eval_every: int = 5
    use_fds: bool = True
    use_cdfp: bool = True
    use_idfp: bool = True
    use_cdas: bool = True
    preview_count: int = 8
    # output
    out_dir: str = "runs/default"
    # non-file knobs (CLI only)
    force: bool = field(default=False, repr=False)

    def validate(self) -> "RunConfig":
        if not (1 <= self.n_known <= self.n_classes):
            raise ValueError("dataset: need 1 <= n_known <= n_classes")
        if not (0.0 <= self.window_ratio <= 0.5):
            raise ValueError("spectral: window_ratio must lie in [0, 0.5]")
        if self.knn_k < 1:
            raise ValueError("separation: knn_k must be >= 1")
        if not (0.0 <= self.beta <= 1.0):
            raise ValueError("objectives: beta must lie in [0, 1]")
        if not (0.0 <= self.eta <= 1.0):
            raise ValueError("perturbation: eta must lie in [0, 1]")
        for name in ("tau_u", "tau_c", "tau_s", "tau_t_start", "tau_t_end"):
            if getattr(self, name) <= 0:
                raise ValueError(f"objectives: {name} must be positive")
        if self.bank_capacity < 1:
            raise ValueError("perturbation: bank_capacity must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("train: epochs and batch_size must be >= 1")
        if self.eval_every < 1 or self.fds_refresh_epochs < 1:
            raise ValueError("train: cadences must be >= 1")
        if self.epsilon < 0 or self.lr0 <= 0:
            raise ValueError("train: need epsilon >= 0 and lr0 > 0")
        return self

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        read = parser.read(path)
        if not read:
            raise FileNotFoundError(f"config file not found: {path}")
        kwargs = {}
        for section in parser.sections():
            if section not in SCHEMA:
                raise ValueError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ValueError(f"unknown key {key!r} in section [{section}]")
                attr, parse = SCHEMA[section][key]
                try:
                    kwargs[attr] = parse(raw)
                except ValueError as exc:
                    raise ValueError(f"[{section}] {key}: {exc}") from exc
        return cls(**kwargs).validate()

    def to_json(self) -> str:
        payload = {f.name: getattr(self, f.name) for f in fields(self) if f.repr}
        return json.dumps(payload, indent=2, sort_keys=True)
