"""Experiment configuration schema.

Configs are JSON documents validated by pydantic; unknown fields are
rejected everywhere and errors carry the dotted path of the offending field.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Annotated, Any, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import SchemaError

EXPERIMENTS = ("verify-cnd", "mc-clt", "mc-tail", "mc-stable", "mc-empirical", "bounds-eval", "high-degree")


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GraphSpec(Strict):
    kind: Literal["ring", "erdos_renyi", "ba_hub", "star", "lattice", "edgeless"] = "ring"
    k: int = Field(1, ge=0)
    p: float = Field(0.0, ge=0.0, le=1.0)
    m: int = Field(1, ge=0)
    d: int = Field(2, ge=1)
    seed: int = 0

    def params(self) -> dict:
        return {"ring": {"k": self.k}, "erdos_renyi": {"p": self.p}, "ba_hub": {"m": self.m},
                "star": {}, "lattice": {"d": self.d}, "edgeless": {}}[self.kind]


class TransformSpec(Strict):
    kind: Literal["identity", "cube", "indicator", "sigmoid", "cosine", "constant"] = "identity"
    param: float = 0.0
    scale: float = 1.0
    order: int = Field(32, ge=2, le=128)

    def build(self):
        from .transforms import Transform

        return Transform(self.kind, self.param, self.scale, self.order)


class FLDSpec(Strict):
    family: Literal["fld"]
    w_self: float = 1.0
    w_nbr: float = 1.0
    tau: float = Field(1.0, gt=0.0)
    transform: TransformSpec = TransformSpec()
    hub_weight: float | None = None
    centering: Literal["M", "G"] = "M"


class CommonShockSpec(Strict):
    family: Literal["common_shock"]
    shock_probs: list[float] = [1.0]
    loc: list[float] = [0.0]
    scale: list[float] = [1.0]
    edge_weight: float = 1.0
    idio_sd: float = 1.0
    centering: Literal["M", "G"] = "G"

    @model_validator(mode="after")
    def _lengths(self):
        if not (len(self.shock_probs) == len(self.loc) == len(self.scale)):
            raise ValueError("shock_probs, loc and scale need equal lengths")
        if abs(sum(self.shock_probs) - 1.0) > 1e-12 or min(self.shock_probs) < 0:
            raise ValueError("shock_probs must be a pmf")
        return self


class Example1Spec(Strict):
    family: Literal["example1"]
    expected_failures: list[tuple[list[int], list[int]]] = [([0], [3])]


class FuzzSpec(Strict):
    family: Literal["fuzz_common_shock"]
    count: int = Field(50, ge=1)
    n_min: int = Field(2, ge=2)
    n_max: int = Field(6, ge=2, le=8)
    edge_p: float = Field(0.35, ge=0.0, le=1.0)
    factorization_count: int = Field(20, ge=0)


class MarkovSpec(Strict):
    family: Literal["markov_chain"]
    n: int = Field(5, ge=2, le=10)
    p0: str = "1/2"
    transition: list[list[str]] = [["3/4", "1/4"], ["1/3", "2/3"]]


class DiscreteFileSpec(Strict):
    family: Literal["discrete_file"]
    path: str
    neighbors: dict[str, list[int]]
    expected_failures: list[tuple[list[int], list[int]]] | None = None


ModelSpec = Annotated[
    Union[FLDSpec, CommonShockSpec, Example1Spec, FuzzSpec, MarkovSpec, DiscreteFileSpec],
    Field(discriminator="family"),
]


class OutputSpec(Strict):
    dir: str = "results"
    prefix: str = ""


class ExperimentConfig(Strict):
    experiment: Literal[EXPERIMENTS]
    model: ModelSpec
    graph: GraphSpec = GraphSpec()
    n_list: list[int] = Field(default_factory=lambda: [1], min_length=1)
    reps: int = Field(1000, ge=1)
    seed: int = Field(0, ge=0)
    tolerances: dict[str, float] = {}
    output: OutputSpec = OutputSpec()
    params: dict[str, Any] = {}
    allow_large: bool = False

    @field_validator("n_list")
    @classmethod
    def _positive(cls, v):
        if any(n < 1 for n in v):
            raise ValueError("every n must be positive")
        return v

    def tol(self, key: str, default: float) -> float:
        return float(self.tolerances.get(key, default))

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _path(loc) -> str:
    parts = [str(p) for p in loc if p not in ("fld", "common_shock", "example1", "fuzz_common_shock",
                                               "markov_chain", "discrete_file")]
    return ".".join(parts) or "<root>"


def raise_schema(exc: ValidationError) -> None:
    err = exc.errors()[0]
    raise SchemaError(err["msg"], _path(err["loc"])) from None


def parse_config(data: dict, overrides: dict | None = None) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise SchemaError("config must be a JSON object", "<root>")
    data = dict(data)
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise_schema(exc)


def validate_params(model_cls: type[BaseModel], params: dict) -> BaseModel:
    """Validate experiment-specific ``params``; errors are reported under ``params.``."""
    try:
        return model_cls.model_validate(params)
    except ValidationError as exc:
        err = exc.errors()[0]
        path = "params." + ".".join(str(p) for p in err["loc"])
        raise SchemaError(err["msg"], path) from None


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SchemaError(f"cannot read config {path}: {exc.strerror}", "<file>") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON at line {exc.lineno}: {exc.msg}", "<file>") from None
    return parse_config(data, overrides)
