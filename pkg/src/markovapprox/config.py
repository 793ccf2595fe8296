"""
YAML run configuration.

A config binds a kernel (or list of kernels), a regression basis, a grid,
the connectivity or weight to use, optional sweep and Monte Carlo blocks, and
input/output paths.  Unknown keys are rejected and ``version`` is required.

Example::

    version: 1
    kernel: {family: exp_quad_cos, decay: 3, freq: 20}
    basis: {family: polynomial, degree: 1}
    grid: {n: 16, lo: -1, hi: 1}
    m: 2
"""

from __future__ import annotations

import hashlib
import itertools
import json
import os
from typing import List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from .covmodels import (ExpAbsCos, ExpQuad, ExpQuadCos, GaussianCurve, Grid, MAX_JITTER,
                        Polynomial)
from .errors import ConfigError
from .simulate import STUDIES, MonteCarloConfig, SweepConfig

__all__ = ["RunConfig", "load_config", "apply_overrides", "parse_m"]

SCHEMA_VERSION = 1

Number = Union[int, float]
MToken = Union[int, Literal["n-1"]]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


class KernelSpec(_Strict):
    """One kernel family; list-valued parameters expand to their Cartesian product."""

    family: Literal["exp_abs_cos", "exp_quad", "exp_quad_cos"]
    decay: Union[Number, List[Number], None] = None
    freq: Union[Number, List[Number]] = 0.0
    pairs: Optional[List[List[Number]]] = None

    @model_validator(mode="after")
    def _check(self):
        if self.pairs is None and self.decay is None:
            raise ValueError("kernel needs 'decay' (or 'pairs' of [decay, freq])")
        if self.pairs is not None and any(len(p) != 2 for p in self.pairs):
            raise ValueError("each entry of 'pairs' must be [decay, freq]")
        if self.family == "exp_quad" and (self.pairs or any(_as_list(self.freq))):
            raise ValueError("exp_quad has no frequency parameter")
        return self

    def build(self) -> list:
        if self.pairs is not None:
            combos = [tuple(p) for p in self.pairs]
        else:
            combos = list(itertools.product(_as_list(self.decay), _as_list(self.freq)))
        if self.family == "exp_quad":
            return [ExpQuad(d) for d, _ in combos]
        cls = ExpAbsCos if self.family == "exp_abs_cos" else ExpQuadCos
        return [cls(d, f) for d, f in combos]


class BasisSpec(_Strict):
    family: Literal["polynomial", "gaussian"]
    degree: Optional[int] = None
    width: Optional[Number] = None
    center: Number = 0.0

    @model_validator(mode="after")
    def _check(self):
        if self.family == "polynomial" and self.degree is None:
            raise ValueError("polynomial basis needs 'degree'")
        if self.family == "gaussian" and self.width is None:
            raise ValueError("gaussian basis needs 'width'")
        return self

    def build(self):
        if self.family == "polynomial":
            return Polynomial(self.degree)
        return GaussianCurve(self.width, self.center)


class GridSpec(_Strict):
    n: int = 16
    lo: Number = -1.0
    hi: Number = 1.0
    points: Optional[List[Number]] = None

    def build(self) -> Grid:
        if self.points is not None:
            return Grid(self.points)
        return Grid.equidistant(self.n, self.lo, self.hi)


class SweepSpec(_Strict):
    study: Optional[str] = None
    m_values: Optional[List[MToken]] = None
    tolerance: Number = 0.01
    functionals: Literal["det", "trace", "both"] = "both"

    @field_validator("study")
    @classmethod
    def _known(cls, v):
        if v is not None and v not in STUDIES:
            raise ValueError(f"unknown study {v!r}; choose from {sorted(STUDIES)}")
        return v


class MonteCarloSpec(_Strict):
    samples: int = 10_000
    seed: Optional[int] = None
    beta: Optional[List[Number]] = None
    weights: List[str] = ["ols", "blue"]


class OutputSpec(_Strict):
    dir: str = "out"


class RunConfig(_Strict):
    version: Literal[1]
    kernel: Optional[KernelSpec] = None
    kernels: Optional[List[KernelSpec]] = None
    basis: Optional[BasisSpec] = None
    models: Optional[List[BasisSpec]] = None
    grid: GridSpec = GridSpec()
    m: Optional[MToken] = None
    weight: Optional[str] = None
    jitter: Number = 0.0
    variance: Number = 1.0
    matrix: Optional[str] = None
    measurements: Optional[str] = None
    seed: Optional[int] = None
    sweep: Optional[SweepSpec] = None
    monte_carlo: Optional[MonteCarloSpec] = None
    output: OutputSpec = OutputSpec()

    @field_validator("jitter")
    @classmethod
    def _jitter(cls, v):
        if not 0 <= v <= MAX_JITTER:
            raise ValueError(f"jitter must lie in [0, {MAX_JITTER:g}]")
        return v

    @field_validator("seed")
    @classmethod
    def _seed(cls, v):
        if v is not None and not 0 <= v < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        return v

    # -- builders ---------------------------------------------------------

    def build_grid(self) -> Grid:
        return self.grid.build()

    def build_kernels(self) -> list:
        specs = list(self.kernels or []) + ([self.kernel] if self.kernel else [])
        return [k for spec in specs for k in spec.build()]

    def build_kernel(self):
        ks = self.build_kernels()
        if len(ks) != 1:
            raise ConfigError(f"this command needs exactly one kernel, config gives {len(ks)}")
        return ks[0]

    def build_models(self) -> list:
        specs = list(self.models or []) + ([self.basis] if self.basis else [])
        return [b.build() for b in specs]

    def build_basis(self):
        bs = self.build_models()
        if len(bs) != 1:
            raise ConfigError(f"this command needs exactly one basis, config gives {len(bs)}")
        return bs[0]

    def resolve_m(self, n: int) -> int:
        if self.m is None:
            raise ConfigError("connectivity 'm' is required")
        return parse_m(self.m, n)

    def sweep_config(self) -> SweepConfig:
        sweep = self.sweep or SweepSpec()
        grid = self.build_grid()
        kernels, models = self.build_kernels(), self.build_models()
        if sweep.study is not None:
            skern, smod = STUDIES[sweep.study]
            kernels, models = kernels or list(skern), models or list(smod)
        if not kernels or not models:
            raise ConfigError("sweep needs kernels and models (or a named study)")
        ms = None
        if sweep.m_values is not None:
            ms = tuple(parse_m(t, grid.n) for t in sweep.m_values)
        mc = None
        if self.monte_carlo is not None:
            mc = self.monte_carlo_config()
        return SweepConfig(kernels, models, grid, ms, self.jitter, self.variance,
                           sweep.tolerance, sweep.functionals, mc)

    def monte_carlo_config(self) -> MonteCarloConfig:
        spec = self.monte_carlo or MonteCarloSpec()
        seed = spec.seed if spec.seed is not None else self.seed
        if seed is None:
            raise ConfigError("Monte Carlo needs a seed (monte_carlo.seed, seed or --seed)")
        beta = None if spec.beta is None else tuple(float(b) for b in spec.beta)
        return MonteCarloConfig(spec.samples, seed, beta, tuple(spec.weights))

    def digest(self) -> str:
        text = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def parse_m(token, n: int) -> int:
    """Connectivity from an int or the token ``n-1``."""
    if isinstance(token, str):
        t = token.strip().lower()
        if t == "n-1":
            return n - 1
        try:
            token = int(t)
        except ValueError:
            raise ConfigError(f"bad connectivity {token!r}") from None
    return int(token)


def _set_dotted(doc: dict, key: str, value) -> None:
    parts = key.split(".")
    node = doc
    for p in parts[:-1]:
        nxt = node.get(p)
        if nxt is None:
            nxt = node[p] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"cannot set {key!r}: {p!r} is not a mapping")
        node = nxt
    node[parts[-1]] = value


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``dotted.key=value`` strings; values are parsed as YAML scalars or lists."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        _set_dotted(doc, key.strip(), yaml.safe_load(raw))
    return doc


def _resolve_paths(doc: dict, base: str) -> dict:
    for key in ("matrix", "measurements"):
        if isinstance(doc.get(key), str) and not os.path.isabs(doc[key]):
            doc[key] = os.path.normpath(os.path.join(base, doc[key]))
    return doc


def validate(doc: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(x) for x in first["loc"]) or "<root>"
        raise ConfigError(f"{where}: {first['msg']}") from None


def load_config(path=None, overrides=None) -> RunConfig:
    """Read a YAML config (or start from ``{version: 1}``) and apply overrides."""
    if path is None:
        doc, base = {"version": SCHEMA_VERSION}, os.getcwd()
    else:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a mapping")
        base = os.path.dirname(os.path.abspath(path))
    doc = apply_overrides(_resolve_paths(doc, base), overrides)
    return validate(_resolve_paths(doc, os.getcwd()))
