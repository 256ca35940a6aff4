"""Flat key-value run configuration with dotted sections.

The format is plain text: one ``key = value`` per line, ``#`` comments,
dots group keys into sections (``hamiltonian.name``, ``noise.K``).  Values
are parsed as booleans, numbers, comma lists, or strings, in that order.
The full schema is documented in the README.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from pathlib import Path

from ..errors import ConfigInvalidError


def _parse_scalar(text: str):
    s = text.strip()
    if s.lower() in ("true", "yes", "on"):
        return True
    if s.lower() in ("false", "no", "off"):
        return False
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        pass
    return s


def _parse_value(text: str):
    s = text.strip()
    if "," in s:
        return [_parse_scalar(p) for p in s.split(",") if p.strip() != ""]
    return _parse_scalar(s)


def parse_config_text(text: str) -> dict:
    out: dict = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalidError(f"line {ln}: expected 'key = value'")
        key, val = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigInvalidError(f"line {ln}: empty key")
        out[key] = _parse_value(val)
    return out


KNOWN_KEYS = {
    "experiments", "seed", "output_dir", "workers",
    "hamiltonian.name", "hamiltonian.params.c", "hamiltonian.z_max",
    "noise.density", "noise.s", "noise.p", "noise.K", "noise.modes",
    "noise.seed",
    "sde.eps", "sde.dt", "sde.paths", "sde.scheme",
    "grid.n", "graph.n_z",
    "time.tau", "time.horizon", "time.probes",
    "export.snapshots", "export.coefficients",
}


@dataclass
class RunConfig:
    experiments: list
    seed: int = 20240812
    output_dir: str = "runs/out"
    workers: int = 1
    raw: dict = dc_field(default_factory=dict)

    def get(self, key, default=None):
        return self.raw.get(key, default)


def validate_config(raw: dict) -> RunConfig:
    from .experiments import EXPERIMENTS

    for key in raw:
        if key not in KNOWN_KEYS:
            raise ConfigInvalidError(f"unknown config key: {key}")
    exps = raw.get("experiments", [])
    if isinstance(exps, str):
        exps = [exps] if exps else []
    if isinstance(exps, (int, float)):
        raise ConfigInvalidError("experiments: expected experiment names")
    for e in exps:
        if e not in EXPERIMENTS:
            raise ConfigInvalidError(
                f"experiments: unknown id {e!r}; known: {sorted(EXPERIMENTS)}"
            )
    ham = raw.get("hamiltonian.name")
    if ham is not None:
        from ..hamiltonian import builtin_names

        if ham not in builtin_names():
            raise ConfigInvalidError(f"hamiltonian.name: unknown {ham!r}")
    seed = raw.get("seed", 20240812)
    if not isinstance(seed, int):
        raise ConfigInvalidError("seed: expected an integer")
    workers = raw.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigInvalidError("workers: expected a positive integer")
    return RunConfig(
        experiments=list(exps),
        seed=seed,
        output_dir=str(raw.get("output_dir", "runs/out")),
        workers=workers,
        raw=raw,
    )


def parse_config(path) -> RunConfig:
    text = Path(path).read_text()
    return validate_config(parse_config_text(text))
