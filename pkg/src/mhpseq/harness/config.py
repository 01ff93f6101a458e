"""Experiment configuration as flat ``key = value`` text files."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

from ..errors import ContractViolation
from ..toydata import TASKS

MODELS = ("shp", "shp-star", "mcl", "mhp")
GENERATION_ONLY = ("depth", "steps", "split_threshold")


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "toy-classification"
    model: str = "mhp"
    name: str = ""
    M: int = 3
    epsilon: float = 0.15
    gamma: float = 0.0
    tau: float = 1.0
    hidden_dim: int = 64
    batch_size: int = 32
    learning_rate: float = 0.001
    max_epochs: int = 50
    patience: int = 10
    seed: int = 0
    depth: int = 8
    steps: int = 20
    split_threshold: float = 5.0
    data: str = ""
    bandwidth: str = "auto"
    eval_limit: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ContractViolation(f"unknown task {self.task!r}; expected one of {sorted(TASKS)}")
        if self.model not in MODELS:
            raise ContractViolation(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.model == "shp-star" and self.task != "toy-classification":
            raise ContractViolation("shp-star applies to classification only")
        if self.M < 1 or self.hidden_dim < 1 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ContractViolation("M, hidden_dim, batch_size, max_epochs must be >= 1 and patience >= 0")
        if not 0.0 <= self.epsilon < 1.0 or not 0.0 <= self.gamma < 1.0 or not 0.0 < self.tau <= 1.0:
            raise ContractViolation("epsilon, gamma must lie in [0, 1) and tau in (0, 1]")
        if self.gamma != 0.0 and self.model != "shp-star":
            raise ContractViolation("gamma is only meaningful for model = shp-star")
        if self.task != "toy-generation" and any(getattr(self, k) != _DEFAULTS[k] for k in GENERATION_ONLY):
            raise ContractViolation(f"{', '.join(GENERATION_ONLY)} apply to toy-generation only")

    @property
    def num_hypotheses(self):
        return self.M if self.model in ("mcl", "mhp") else 1

    @property
    def label(self):
        if self.name:
            return self.name
        if self.model == "shp-star":
            return f"SHP* ({self.gamma:g})"
        return self.model.upper()

    def training_key(self):
        """Fields that affect training; SHP and SHP* share a trained model."""
        d = asdict(self)
        for k in ("name", "gamma", "tau", "bandwidth", "eval_limit", *GENERATION_ONLY):
            d.pop(k)
        if d["model"] == "shp-star":
            d["model"] = "shp"
        if d["model"] == "shp":
            d["M"] = 1
        return tuple(sorted(d.items()))


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_DEFAULTS = {f.name: f.default for f in fields(ExperimentConfig)}
_CASTS = {"int": int, "float": float, "str": str}


def parse_config(text, base_dir=None):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractViolation(f"line {lineno}: expected key = value")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ContractViolation(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _CASTS[_TYPES[key]](val)
        except ValueError as exc:
            raise ContractViolation(f"line {lineno}: bad value for {key}: {val!r}") from exc
    model, task = values.get("model", "mhp"), values.get("task", "toy-classification")
    if "gamma" in values and model != "shp-star":
        raise ContractViolation("gamma is only meaningful for model = shp-star")
    if task != "toy-generation" and any(k in values for k in GENERATION_ONLY):
        raise ContractViolation(f"{', '.join(GENERATION_ONLY)} apply to toy-generation only")
    if base_dir is not None and values.get("data") and not Path(values["data"]).is_absolute():
        values["data"] = str(Path(base_dir) / values["data"])
    return ExperimentConfig(**values)


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent)


def applicable_fields(config):
    """Field dict without the keys that do not apply to this task/model."""
    d = asdict(config)
    if config.model != "shp-star":
        d.pop("gamma")
    if config.task != "toy-generation":
        for k in GENERATION_ONLY:
            d.pop(k)
    return d


def format_config(config):
    return "".join(f"{k} = {v}\n" for k, v in applicable_fields(config).items())
