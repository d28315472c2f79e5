"""Run configuration: sectioned ``key = value`` files with dotted overrides.

Every setting lives in ``SCHEMA`` as ``section.key`` and can be set in an
INI file, overridden on the command line with ``--section.key VALUE``, and
is written back out as the effective configuration next to each output.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .hyperopt import HyperDim, HyperSpace, default_space
from .nn import NetworkConfig, TrainConfig


class ConfigError(ValueError):
    pass


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "yes", "true", "on"):
        return True
    if t in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    return tuple(int(v) for v in str(text).replace(",", " ").split())


def _strs(text):
    return tuple(v for v in str(text).replace(",", " ").split())


def _floats(text):
    return tuple(float(v) for v in str(text).replace(",", " ").split())


def _fmt(value):
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _space_entries():
    out = []
    for d in default_space().dims:
        kind = int if d.integer else float
        out.append((f"{d.name}_lower", kind, kind(d.lower), f"lower bound of {d.name}"))
        out.append((f"{d.name}_upper", kind, kind(d.upper), f"upper bound of {d.name}"))
    return out


# section -> [(key, parser, default, help)]
SCHEMA = {
    "run": [
        ("seed", int, 0, "seed for network initialization, shuffling and tuning"),
        ("threads", int, 1, "worker processes for dataset generation"),
    ],
    "paths": [
        ("materials_dir", str, "", "directory of n,k tables (empty: bundled library)"),
    ],
    "stack": [
        ("preset", str, "transparent", "stack preset name (transparent, opaque) or path to a stack file"),
    ],
    "sampler": [
        ("method", str, "sobol", "thickness sampler: random, halton, sobol or lhs"),
        ("seed_or_skip", int, 0, "RNG seed (random, lhs) or leading points skipped (halton, sobol)"),
        ("n", int, 1200, "total number of records"),
        ("fractions", _floats, (10 / 12, 1 / 12, 1 / 12), "train, val, test fractions"),
    ],
    "image": [
        ("width", int, 37, "raster width in pixels"),
        ("height", int, 28, "raster height in pixels"),
    ],
    "network": [
        ("arch", str, "block", "architecture: first or block"),
        ("first_filters", _ints, (8, 16, 32, 32), "filter counts of the four-conv architecture"),
        ("dropout", float, 0.2, "dropout rate before the dense layer (first architecture)"),
        ("block_filters", _ints, (8, 16, 32), "filter counts of the three blocks"),
        ("section_depth", int, 7, "conv-bn-relu repetitions per block"),
        ("pooling", _strs, ("max", "avg", "avg"), "pooling after each block"),
    ],
    "train": [
        ("initial_learning_rate", float, 0.01, "initial learning rate"),
        ("momentum", float, 0.9, "SGD momentum"),
        ("mini_batch_size", int, 32, "mini-batch size"),
        ("lr_drop_factor", float, 0.5, "learning-rate multiplier per drop"),
        ("lr_drop_period", int, 20, "epochs between learning-rate drops"),
        ("l2_coefficient", float, 1e-4, "L2 weight-decay coefficient"),
        ("epoch_count", int, 30, "training epochs"),
        ("dtype", str, "float32", "float32 or float64"),
    ],
    "tune": [
        ("budget", int, 8, "number of trials"),
        ("warmup", int, 3, "quasi-random trials before the surrogate is used"),
        ("epoch_cap", int, 20, "training epochs per trial"),
        ("timeout", float, 0.0, "seconds per trial before it is stopped (0: no limit)"),
        ("freeze", str, "", "comma-separated name=value pairs held fixed during tuning"),
        *_space_entries(),
    ],
}

_PARSERS = {(s, k): (p, d) for s, entries in SCHEMA.items() for k, p, d, _ in entries}


def defaults() -> dict:
    return {s: {k: d for k, _, d, _ in entries} for s, entries in SCHEMA.items()}


def parse_value(section, key, text):
    if (section, key) not in _PARSERS:
        raise ConfigError(f"unknown setting {section}.{key}")
    parser, _ = _PARSERS[(section, key)]
    if parser is bool:
        parser = _bool
    try:
        return parser(text)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from None


@dataclass
class RunConfig:
    values: dict

    @classmethod
    def load(cls, path=None, overrides=None) -> "RunConfig":
        """Defaults, then the INI file at ``path``, then ``{"sec.key": text}``."""
        vals = defaults()
        if path is not None:
            cp = configparser.ConfigParser(interpolation=None)
            try:
                with open(path, encoding="utf-8") as fh:
                    cp.read_file(fh)
            except OSError as exc:
                raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
            except configparser.Error as exc:
                raise ConfigError(f"{path}: {exc}") from None
            for sec in cp.sections():
                if sec not in vals:
                    raise ConfigError(f"{path}: unknown section [{sec}]")
                for key, text in cp[sec].items():
                    vals[sec][key] = parse_value(sec, key, text)
        for dotted, text in (overrides or {}).items():
            sec, _, key = dotted.partition(".")
            vals.setdefault(sec, {})
            vals[sec][key] = parse_value(sec, key, text)
        cfg = cls(vals)
        cfg.validate()
        return cfg

    def __getitem__(self, dotted):
        sec, _, key = dotted.partition(".")
        return self.values[sec][key]

    def set(self, dotted, value):
        sec, _, key = dotted.partition(".")
        if (sec, key) not in _PARSERS:
            raise ConfigError(f"unknown setting {dotted}")
        self.values[sec][key] = value

    def validate(self):
        fr = self["sampler.fractions"]
        if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1) > 1e-9:
            raise ConfigError(f"sampler.fractions must be three non-negative numbers summing to 1, got {fr}")
        if self["run.threads"] < 1:
            raise ConfigError("run.threads must be >= 1")
        if self["paths.materials_dir"] and not Path(self["paths.materials_dir"]).is_dir():
            raise ConfigError(f"paths.materials_dir {self['paths.materials_dir']!r} is not a directory")
        try:
            self.network_config()
            self.train_config()
            self.hyper_space()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None

    def to_text(self) -> str:
        lines = []
        for sec, entries in SCHEMA.items():
            lines.append(f"[{sec}]")
            for key, _, _, _ in entries:
                lines.append(f"{key} = {_fmt(self.values[sec][key])}")
            lines.append("")
        return "\n".join(lines)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_text())
        return path

    # -------------------------------------------------------------- builders

    def network_config(self, channels=2, output_dim=7, height=None, width=None) -> NetworkConfig:
        n = self.values["network"]
        return NetworkConfig(
            arch=n["arch"],
            height=height or self["image.height"],
            width=width or self["image.width"],
            channels=channels,
            output_dim=output_dim,
            first_filters=n["first_filters"],
            dropout=n["dropout"],
            block_filters=n["block_filters"],
            section_depth=n["section_depth"],
            pooling=n["pooling"],
        )

    def train_config(self, **changes) -> TrainConfig:
        t = dict(self.values["train"])
        t["seed"] = self["run.seed"]
        t.update(changes)
        return TrainConfig(**t)

    def hyper_space(self) -> HyperSpace:
        dims = []
        for d in default_space().dims:
            lo = self[f"tune.{d.name}_lower"]
            hi = self[f"tune.{d.name}_upper"]
            dims.append(HyperDim(d.name, lo, hi, d.scale, d.integer))
        frozen = {}
        for item in self["tune.freeze"].split(","):
            if not item.strip():
                continue
            name, sep, value = item.partition("=")
            if not sep:
                raise ValueError(f"tune.freeze entry {item.strip()!r} is not name=value")
            frozen[name.strip()] = float(value)
        return HyperSpace(tuple(dims), frozen)
