"""Experiment configuration: an INI-style key-value file with every field defaulted.

``load_config`` accepts a file path or the name of a bundled preset
(``mnist_unet``, ``cifar_msednet``, ``mnist_smoke``, ...).
"""
from __future__ import annotations

import configparser
import io
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Dict, Optional

from . import FormatError, ParameterError, UsageError
from .chaos_core import ChaoticMapParams, MapFamily
from .cipher import CipherKey, Scheme
from .train import TrainConfig

DATASETS = {"mnist": 1, "cifar10": 3}
NETWORKS = ("unet", "msednet")
DEFAULT_SCHEME = {"mnist": Scheme.SINGLE_LOGISTIC, "cifar10": Scheme.HYBRID_RGB}
SCHEME_CHANNELS = {Scheme.SINGLE_LOGISTIC: 1, Scheme.HYBRID_RGB: 3}


@dataclass
class MapConfig:
    control: float
    seed: float
    burn_in: int = 1000

    def params(self, family: MapFamily) -> ChaoticMapParams:
        return ChaoticMapParams(family, self.control, self.seed, self.burn_in)


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    dataset: str = "mnist"
    network: str = "unet"
    base_width: int = 32
    scheme: Optional[str] = None  # None -> dataset default
    logistic: MapConfig = field(default_factory=lambda: MapConfig(3.601, 0.1))
    sine: MapConfig = field(default_factory=lambda: MapConfig(0.95, 0.154))
    chebyshev: MapConfig = field(default_factory=lambda: MapConfig(5.0, 0.165))
    pairs: int = 0  # 0 = whole dataset
    train_fraction: float = 0.9
    split_seed: int = 0
    checkpoint_every: int = 10
    data_dir: str = "data"
    out_dir: str = "runs/experiment"
    archive: str = ""  # empty -> <out_dir>/pairs
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.scheme is None:
            self.scheme = DEFAULT_SCHEME.get(self.dataset, Scheme.SINGLE_LOGISTIC).value
        self.validate()

    def validate(self) -> None:
        if self.dataset not in DATASETS:
            raise UsageError(f"dataset must be one of {sorted(DATASETS)}, got {self.dataset!r}")
        if self.network not in NETWORKS:
            raise UsageError(f"network must be one of {NETWORKS}, got {self.network!r}")
        try:
            scheme = Scheme(self.scheme)
        except ValueError:
            raise UsageError(f"unknown cipher scheme {self.scheme!r}") from None
        if SCHEME_CHANNELS[scheme] != DATASETS[self.dataset]:
            raise UsageError(f"{self.dataset} images have {DATASETS[self.dataset]} channel(s) but the "
                             f"{scheme.value} scheme encrypts {SCHEME_CHANNELS[scheme]}")
        if self.pairs < 0:
            raise ParameterError(f"pairs must be >= 0, got {self.pairs}")
        if self.checkpoint_every < 1:
            raise ParameterError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        if not 0 < self.train_fraction < 1:
            raise ParameterError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        self.key()  # validates map parameters

    @property
    def channels(self) -> int:
        return DATASETS[self.dataset]

    @property
    def archive_path(self) -> Path:
        return Path(self.archive) if self.archive else Path(self.out_dir) / "pairs"

    def key(self) -> CipherKey:
        scheme = Scheme(self.scheme)
        lg = self.logistic.params(MapFamily.LOGISTIC)
        if scheme is Scheme.SINGLE_LOGISTIC:
            return CipherKey(scheme, lg)
        return CipherKey(scheme, lg, self.sine.params(MapFamily.SINE),
                         self.chebyshev.params(MapFamily.CHEBYSHEV))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        for m in ("logistic", "sine", "chebyshev"):
            if m in d:
                d[m] = MapConfig(**d[m])
        if "train" in d:
            d["train"] = TrainConfig.from_dict(d["train"])
        return cls(**d)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        d = self.to_dict()
        cp["experiment"] = {k: _fmt(d[k]) for k in ("name", "dataset", "network", "base_width", "pairs",
                                                      "train_fraction", "split_seed", "checkpoint_every")}
        cp["cipher"] = {"scheme": self.scheme}
        for m in ("logistic", "sine", "chebyshev"):
            for k, v in d[m].items():
                cp["cipher"][f"{m}.{k}"] = _fmt(v)
        cp["train"] = {k: _fmt(v) for k, v in d["train"].items()}
        cp["paths"] = {k: d[k] for k in ("data_dir", "out_dir", "archive")}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v).lower() if isinstance(v, bool) else str(v)


def _convert(value: str, like, where: str):
    try:
        if isinstance(like, bool):
            lv = value.strip().lower()
            if lv not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return lv in ("true", "1", "yes")
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
    except ValueError:
        raise FormatError(f"{where}: cannot parse {value!r} as {type(like).__name__}") from None
    return value


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source)
    except configparser.Error as e:
        raise FormatError(f"{source}: {e}") from None
    base = ExperimentConfig()
    top: Dict[str, object] = {}
    maps = {m: asdict(getattr(base, m)) for m in ("logistic", "sine", "chebyshev")}
    train = asdict(base.train)
    known_sections = {"experiment", "cipher", "train", "paths"}
    for section in cp.sections():
        if section not in known_sections:
            raise FormatError(f"{source}: unknown section [{section}]")
        for k, v in cp[section].items():
            where = f"{source} [{section}] {k}"
            if section in ("experiment", "paths"):
                if k not in {f.name for f in fields(ExperimentConfig)} or k in ("train", "scheme"):
                    raise FormatError(f"{where}: unknown key")
                top[k] = _convert(v, getattr(base, k), where)
            elif section == "cipher":
                if k == "scheme":
                    top["scheme"] = v
                    continue
                m, _, attr = k.partition(".")
                if m not in maps or attr not in maps[m]:
                    raise FormatError(f"{where}: unknown key")
                maps[m][attr] = _convert(v, maps[m][attr], where)
            else:
                if k not in train:
                    raise FormatError(f"{where}: unknown key")
                train[k] = _convert(v, train[k], where)
    return ExperimentConfig(**top, **{m: MapConfig(**p) for m, p in maps.items()},
                            train=TrainConfig(**train))


def preset_names():
    return sorted(p.name[:-4] for p in resources.files(__package__).joinpath("presets").iterdir()
                  if p.name.endswith(".ini"))


def load_config(ref: Optional[str]) -> ExperimentConfig:
    """Load a config file, or a bundled preset by name; None gives the all-default config."""
    if ref is None:
        return ExperimentConfig()
    path = Path(ref)
    if path.is_file():
        return parse_config(path.read_text(encoding="utf-8"), str(path))
    res = resources.files(__package__).joinpath("presets", f"{ref}.ini")
    if res.is_file():
        return parse_config(res.read_text(encoding="utf-8"), f"preset {ref}")
    raise UsageError(f"config {ref!r} is neither a file nor a preset; presets: {', '.join(preset_names())}")


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    """Apply command-line overrides; keys ``epochs``, ``seed``, ``deterministic`` go to the train section."""
    train_kw = {k: kw.pop(k) for k in ("epochs", "seed", "deterministic") if kw.get(k) is not None}
    top = {k: v for k, v in kw.items() if v is not None}
    out = replace(cfg, train=replace(cfg.train, **train_kw), **top)
    return out
