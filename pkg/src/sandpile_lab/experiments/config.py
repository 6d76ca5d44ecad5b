"""Flat key-value experiment configuration.

Config files hold one ``key = value`` pair per line (``#`` comments);
command-line flags override file values.  Every key is validated against
the schema of its command, and errors cite the offending line.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from ..core import DensitySpec
from ..errors import ConfigError

COMMANDS = ("stabilize", "activity", "carpet", "block", "bootstrap", "verify")

# key -> (type tag, default); None default means required-if-used
_COMMON = {
    "seed": ("int", 1),
    "replicas": ("int", 4),
    "threads": ("int", 0),  # 0: use SANDPILE_LAB_THREADS or the cpu count
    "format": ("str", "csv"),
    "out": ("str", ""),
}

_SCHEMAS: dict[str, dict[str, tuple[str, object]]] = {
    "stabilize": {
        "instances": ("int", 200),
        "interval_len": ("int", 64),
        "particles": ("int", 20),
    },
    "activity": {
        "mu": ("float", 1.0),
        "law": ("str", "poisson"),  # poisson | finite | constant
        "support": ("str", ""),  # value:mass pairs for the finite law
        "windows": ("intlist", [16, 32, 64, 128, 256]),
    },
    "carpet": {
        "a": ("int", 8),
        "k": ("int", 0),  # 0: the fourth-power default
        "n": ("int", 4),
        "extras": ("int", 3),
        "beta": ("float", 4e-4),
        "check": ("str", "event"),
    },
    "block": {
        "a": ("int", 16),
        "k": ("int", 0),
        "check": ("str", "even-visit"),
        "samples": ("int", 10**5),
        "emissions": ("int", 10**4),
        "horizon": ("int", 10**4),
        "chains": ("int", 8),
    },
    "bootstrap": {
        "a": ("int", 8),
        "k": ("int", 0),
        "m0": ("int", 8),
        "mu": ("float", 0.9965),
        "law": ("str", "finite"),
        "support": ("str", "0:0.01,1:0.9835,2:0.0065"),
        "stages": ("int", 1),
    },
    "verify": {
        "suite": ("strlist", []),
        "scale": ("float", 1.0),
    },
}


def _coerce(key: str, tag: str, raw, where: str):
    if not isinstance(raw, str):
        return raw
    try:
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "intlist":
            return [int(v) for v in raw.split(",") if v.strip()]
        if tag == "strlist":
            return [v.strip() for v in raw.split(",") if v.strip()]
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {key}={raw!r} as {tag}") from None


def parse_config_file(path: str) -> dict[str, tuple[str, str]]:
    """Returns {key: (raw value, 'file:line')} for override tracking."""
    out: dict[str, tuple[str, str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            bare = line.split("#", 1)[0].strip()
            if not bare:
                continue
            if "=" in bare:
                key, _, val = bare.partition("=")
            else:
                parts = bare.split(None, 1)
                if len(parts) != 2:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.strip()!r}")
                key, val = parts
            key = key.strip().lower()
            val = val.strip()
            if not val:
                raise ConfigError(f"{path}:{lineno}: empty value for {key!r}")
            out[key] = (val, f"{path}:{lineno}")
    return out


def parse_support(raw: str, where: str = "support") -> tuple[tuple[int, float], ...]:
    pairs = []
    for item in raw.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            v, p = item.split(":")
            pairs.append((int(v), float(p)))
        except ValueError:
            raise ConfigError(f"{where}: malformed entry {item!r}; expected value:mass") from None
    return tuple(pairs)


@dataclass
class ExperimentConfig:
    command: str
    params: dict = field(default_factory=dict)

    @classmethod
    def build(cls, command: str, file_path: str | None = None, overrides: dict | None = None):
        if command not in COMMANDS:
            raise ConfigError(f"unknown command {command!r}; choose from {COMMANDS}")
        schema = dict(_COMMON)
        schema.update(_SCHEMAS[command])
        raw: dict[str, tuple[object, str]] = {}
        if file_path:
            for k, (v, where) in parse_config_file(file_path).items():
                if k == "command":
                    continue
                if k not in schema:
                    raise ConfigError(f"{where}: unknown key {k!r} for command {command!r}")
                raw[k] = (v, where)
        for k, v in (overrides or {}).items():
            if v is None:
                continue
            if k not in schema:
                raise ConfigError(f"flag --{k} is not valid for command {command!r}")
            raw[k] = (v, f"--{k}")
        params = {}
        for k, (tag, default) in schema.items():
            if k in raw:
                params[k] = _coerce(k, tag, raw[k][0], raw[k][1])
            else:
                params[k] = default
        if params["threads"] <= 0:
            env = os.environ.get("SANDPILE_LAB_THREADS", "")
            params["threads"] = int(env) if env.isdigit() and int(env) > 0 else (os.cpu_count() or 1)
        if params["format"] not in ("csv", "jsonl"):
            raise ConfigError(f"format must be csv or jsonl, got {params['format']!r}")
        cfg = cls(command, params)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        p = self.params
        if p["seed"] < 0 or p["seed"] > 2**64 - 1:
            raise ConfigError("seed must fit in 64 bits")
        if p["replicas"] < 1:
            raise ConfigError("need at least one replica")
        if self.command == "bootstrap":
            if p["a"] % 2 != 0:
                raise ConfigError(
                    "the staged procedure needs an even block width: the center "
                    "block's left endpoint sits at minus half the width"
                )
        if self.command == "activity":
            ws = p["windows"]
            if not ws or ws != sorted(set(ws)):
                raise ConfigError("windows must be a strictly increasing list")
        if self.command in ("activity", "bootstrap") and p["law"] == "finite":
            parse_support(p["support"])  # raises with details

    def density_spec(self) -> DensitySpec:
        p = self.params
        if p["law"] == "poisson":
            return DensitySpec("poisson", mu=p["mu"])
        if p["law"] == "constant":
            return DensitySpec("constant", value=int(p["mu"]))
        return DensitySpec("finite", support=parse_support(p["support"]))
