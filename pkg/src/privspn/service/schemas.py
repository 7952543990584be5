"""Request and response models of the HTTP service."""

from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, Field

from ..runner import RunConfig


class PartitionRequest(BaseModel):
    dataset: str = "synthetic:nltcs"
    regime: Literal["iid", "dirichlet", "clustered"] = "iid"
    beta: float | None = None
    parties: int = Field(3, ge=1)
    seed: int = 0
    valid_fraction: float = Field(0.1, ge=0, lt=1)
    output: str | None = None  # write the plan file here as well


class PartitionResponse(BaseModel):
    dataset: dict[str, Any]
    sizes: dict[int, int]
    plan: str
    path: str | None = None


class TrainRequest(BaseModel):
    config: RunConfig = Field(default_factory=RunConfig)
    keep: bool = True  # keep the network up so /runs/{id}/infer can query the model


class BaselineRequest(BaseModel):
    config: RunConfig = Field(default_factory=RunConfig)
    kind: Literal["pooled", "distributed_nonprivate"] = "distributed_nonprivate"


class RunResponse(BaseModel):
    run_id: str | None = None
    live: bool = False
    report: dict[str, Any]
    rows: list[dict[str, Any]]
    table: str


class InferRequest(BaseModel):
    """Either plain evidence (the service-hosted querier shares it) or shares the caller prepared.

    ``shares[r][v]`` maps member id to that member's share of bit v of row r,
    as a decimal string.
    """

    evidence: list[list[int]] | None = None
    shares: list[list[dict[int, str]]] | None = None


class InferResponse(BaseModel):
    probabilities: list[float]
    raw: list[str]  # fixed-point values at scale d, decimal strings
    underflow: list[bool]
    resolution: int
    d: int
    seconds: float


class BenchRequest(BaseModel):
    config: RunConfig = Field(default_factory=RunConfig)
    parties: list[int] = Field(default_factory=lambda: [3])
    rows: int = Field(10, ge=1)


class BenchResponse(BaseModel):
    rows: list[dict[str, Any]]
    table: str


class ErrorResponse(BaseModel):
    error: str
    detail: str
