"""JSON scenario files: schema, validation and loading."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, field_validator, model_validator

SCHEMA_VERSION = "1"

# a complex number is a real or an [re, im] pair
Complex = Union[float, tuple[float, float]]


class ScenarioError(ValueError):
    """Invalid scenario input (maps to CLI exit code 2)."""


def to_complex(x: Complex) -> complex:
    if isinstance(x, (int, float)):
        return complex(x)
    return complex(x[0], x[1])


def vec(xs: list[Complex]) -> np.ndarray:
    return np.array([to_complex(x) for x in xs], dtype=complex)


def mat(rows: list[list[Complex]]) -> np.ndarray:
    return np.array([[to_complex(x) for x in r] for r in rows], dtype=complex)


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Tolerances(Strict):
    swallow_eps: float = Field(1e-6, ge=0, lt=1)
    check: Optional[float] = Field(None, gt=0)


class Common(Strict):
    schema_version: Literal["1"]
    name: str = ""
    seed: int = Field(0, ge=0)
    trials: int = Field(0, ge=0)
    tolerances: Tolerances = Tolerances()


class InitialState(Strict):
    vector: Optional[list[Complex]] = None
    matrix: Optional[list[list[Complex]]] = None

    @model_validator(mode="after")
    def _one(self):
        if (self.vector is None) == (self.matrix is None):
            raise ValueError("initial state needs exactly one of 'vector' or 'matrix'")
        return self

    @property
    def dim(self) -> int:
        return len(self.vector) if self.vector is not None else len(self.matrix)


class Group(Strict):
    value: float
    vectors: list[list[Complex]]


class ObservableSpec(Strict):
    groups: Optional[list[Group]] = None
    matrix: Optional[list[list[Complex]]] = None
    n_groups: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _one(self):
        if (self.groups is None) == (self.matrix is None):
            raise ValueError("observable needs exactly one of 'groups' or 'matrix'")
        if self.matrix is not None and self.n_groups is None:
            raise ValueError("observable given as a matrix also needs 'n_groups'")
        return self

    @property
    def dim(self) -> int:
        if self.matrix is not None:
            return len(self.matrix)
        return len(self.groups[0].vectors[0])


def _check_dims(obs: Optional[ObservableSpec], initial: Optional[InitialState], default_dim: int, field: str = "initial"):
    dim = obs.dim if obs is not None else default_dim
    if obs is not None and obs.groups is not None:
        for i, g in enumerate(obs.groups):
            for v in g.vectors:
                if len(v) != dim:
                    raise ValueError(f"observable.groups[{i}]: vector length {len(v)} != system dimension {dim}")
    if initial is not None and initial.dim != dim:
        raise ValueError(f"{field}: dimension {initial.dim} does not match system dimension {dim}")


class BclScenario(Common):
    kind: Literal["bcl"]
    observable: Optional[ObservableSpec] = None
    outputs: Optional[list[list[list[Complex]]]] = None
    initial: Optional[InitialState] = None

    @model_validator(mode="after")
    def _dims(self):
        _check_dims(self.observable, self.initial, 4)
        return self


class FlexibleScenario(Common):
    kind: Literal["flexible"]
    sites: int = Field(6, ge=2)
    groups: list[list[int]] = [[0, 1], [2]]
    outputs: list[list[int]] = [[3, 4], [3]]
    detector_site: int = 5
    prep_region: list[int] = [0, 1, 2]
    detector_region: list[int] = [3, 4, 5]
    initial: Optional[InitialState] = None

    @model_validator(mode="after")
    def _regions(self):
        m = self.sites
        named = {"prep_region": self.prep_region, "detector_region": self.detector_region,
                 "detector_site": [self.detector_site]}
        for i, g in enumerate(self.groups):
            named[f"groups[{i}]"] = g
        for i, g in enumerate(self.outputs):
            named[f"outputs[{i}]"] = g
        for name, sites in named.items():
            bad = [s for s in sites if not 0 <= s < m]
            if bad:
                raise ValueError(f"{name}: site(s) {bad} outside lattice of {m} sites")
        if set(self.prep_region) & set(self.detector_region):
            raise ValueError("prep_region and detector_region must be disjoint")
        if [len(g) for g in self.groups] != [len(g) for g in self.outputs]:
            raise ValueError("outputs: each output group must match its input group's size")
        _check_dims(None, self.initial, m)
        return self


class FixedScenario(Common):
    kind: Literal["fixed"]
    subdetectors: int = Field(2, ge=1, le=6)
    degeneracy: int = Field(2, ge=1, le=4)
    environment: bool = False
    initial: Optional[InitialState] = None

    @model_validator(mode="after")
    def _dims(self):
        _check_dims(None, self.initial, self.degeneracy * (self.subdetectors + int(self.environment)))
        return self


class ReleaseScenario(Common):
    kind: Literal["release"]
    initial: Optional[InitialState] = None

    @model_validator(mode="after")
    def _dims(self):
        _check_dims(None, self.initial, 6)
        return self


class NonIdealScenario(Common):
    kind: Literal["nonideal"]
    observable: Optional[ObservableSpec] = None
    efficiencies: list[float] = [1.0, 0.5]
    initial: Optional[InitialState] = None

    @field_validator("efficiencies")
    @classmethod
    def _eta(cls, v):
        for e in v:
            if not 0 < e <= 1:
                raise ValueError(f"efficiency {e} outside (0, 1]")
        return v

    @model_validator(mode="after")
    def _dims(self):
        _check_dims(self.observable, self.initial, 4)
        return self


class EprScenario(Common):
    kind: Literal["epr"]
    initial: Optional[InitialState] = None

    @model_validator(mode="after")
    def _dims(self):
        _check_dims(None, self.initial, 4)
        return self


class Epr4Scenario(EprScenario):
    kind: Literal["epr4"]


class HbtScenario(Common):
    kind: Literal["hbt"]
    a: Complex
    b: Complex
    c: Complex

    @model_validator(mode="after")
    def _norm(self):
        n = sum(abs(to_complex(x)) ** 2 for x in (self.a, self.b, self.c))
        if abs(n - 1) > 1e-10:
            raise ValueError(f"amplitudes violate |a|^2 + |b|^2 + |c|^2 = 1 (got {n:.12g})")
        return self


class Propagator(Strict):
    shift: Optional[int] = None
    hopping: Optional[float] = None

    @model_validator(mode="after")
    def _one(self):
        if (self.shift is None) == (self.hopping is None):
            raise ValueError("propagator needs exactly one of 'shift' or 'hopping'")
        return self


class ChamberInitial(Strict):
    plane_wave: bool = False
    cube: Optional[int] = None
    vector: Optional[list[Complex]] = None

    @model_validator(mode="after")
    def _one(self):
        if sum([self.plane_wave, self.cube is not None, self.vector is not None]) != 1:
            raise ValueError("chamber initial state needs exactly one of plane_wave, cube, vector")
        return self


class ChamberScenario(Common):
    kind: Literal["chamber"]
    layers: int = Field(4, ge=1)
    cubes: int = Field(5, ge=1)
    edge: int = Field(2, ge=1)
    initial: ChamberInitial = ChamberInitial(plane_wave=True)
    propagator: Optional[Propagator] = None

    @model_validator(mode="after")
    def _dims(self):
        m = self.cubes * self.edge
        if self.initial.cube is not None and not 1 <= self.initial.cube <= self.cubes:
            raise ValueError(f"initial.cube: {self.initial.cube} outside 1..{self.cubes}")
        if self.initial.vector is not None and len(self.initial.vector) != m:
            raise ValueError(f"initial.vector: length {len(self.initial.vector)} != transverse size {m}")
        return self


class ScatteringScenario(Common):
    kind: Literal["scattering"]
    preset: Literal["no_entanglement", "entanglement", "cavity"]
    cut: Optional[int] = Field(None, ge=0)


Scenario = Annotated[
    Union[
        BclScenario, FlexibleScenario, FixedScenario, ReleaseScenario, NonIdealScenario,
        EprScenario, Epr4Scenario, HbtScenario, ChamberScenario, ScatteringScenario,
    ],
    Field(discriminator="kind"),
]
_adapter = TypeAdapter(Scenario)

KINDS = ("bcl", "flexible", "fixed", "release", "nonideal", "epr", "hbt", "epr4", "chamber", "scattering")


def _format_errors(e: ValidationError) -> str:
    lines = []
    for err in e.errors():
        loc = [str(x) for x in err["loc"]]
        if loc and loc[0] in KINDS:
            loc = loc[1:]  # discriminator tag
        msg = err["msg"].removeprefix("Value error, ")
        lines.append(f"{'.'.join(loc)}: {msg}" if loc else msg)
    return "; ".join(lines)


def parse_scenario(data: dict) -> BaseModel:
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object")
    ver = data.get("schema_version")
    if ver != SCHEMA_VERSION:
        raise ScenarioError(f"schema_version: expected {SCHEMA_VERSION!r}, got {ver!r}")
    if data.get("kind") not in KINDS:
        raise ScenarioError(f"kind: expected one of {', '.join(KINDS)}, got {data.get('kind')!r}")
    try:
        return _adapter.validate_python(data)
    except ValidationError as e:
        raise ScenarioError(_format_errors(e)) from None


def load_scenario(path: str | Path) -> BaseModel:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioError(f"{path}: {e.strerror or e}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from None
    try:
        return parse_scenario(data)
    except ScenarioError as e:
        raise ScenarioError(f"{path}: {e}") from None


def preset_names() -> list[str]:
    root = resources.files("sepstat") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def preset_path(name: str) -> Path:
    p = resources.files("sepstat") / "presets" / f"{name}.json"
    if not p.is_file():
        raise ScenarioError(f"unknown preset {name!r}")
    return Path(str(p))


def load_preset(name: str) -> BaseModel:
    return load_scenario(preset_path(name))
