"""Pydantic request/response bodies for the service endpoints.

Model objects travel as their self-describing JSON documents (see
``emtransfer.serialize``); datasets travel inline as points plus labels.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field

from ..dataset import Dataset

GeneratorName = Literal[
    "toy-source", "toy-target", "toy-ambiguous", "cigars-source", "cigars-target"
]
ModelFamily = Literal["gmlvq", "lgmlvq", "lgmm", "lgmm-loc"]
PolicyName = Literal["eigen_floor", "pseudo_determinant"]


class DatasetPayload(BaseModel):
    points: list[list[float]]
    labels: list[int]

    @classmethod
    def from_dataset(cls, data: Dataset) -> "DatasetPayload":
        return cls(points=data.points.tolist(), labels=data.labels.tolist())

    def to_dataset(self) -> Dataset:
        return Dataset(self.points, self.labels)


class GenerateRequest(BaseModel):
    generator: GeneratorName
    n_per_class: Optional[int] = Field(default=None, ge=1)
    seed: int = 0


class GenerateResponse(BaseModel):
    dataset: DatasetPayload


class TrainRequest(BaseModel):
    dataset: DatasetPayload
    family: ModelFamily = "gmlvq"
    seed: int = 0
    # prototype-classifier knobs
    prototypes_per_class: int = Field(default=1, ge=1)
    epochs: int = Field(default=100, ge=1)
    # mixture-model knobs
    k_per_label: int = Field(default=1, ge=1)
    restarts: int = Field(default=1, ge=1)
    min_std: float = Field(default=1e-3, gt=0)


class TrainResponse(BaseModel):
    document: dict
    training_error: float


class TransferRequest(BaseModel):
    document: dict
    target: DatasetPayload
    sigma: Optional[float] = Field(default=None, gt=0)
    epsilon: float = Field(default=1e-5, gt=0)
    max_iterations: int = Field(default=200, ge=1)
    ridge: Optional[float] = Field(default=None, ge=0)
    policy: PolicyName = "eigen_floor"
    min_std: float = Field(default=1e-3, gt=0)


class TransferResponse(BaseModel):
    document: dict
    iterations: int
    converged: bool
    final_eq_error: float


class PredictRequest(BaseModel):
    document: dict
    points: list[list[float]]
    labels: Optional[list[int]] = None
    transfer: Optional[dict] = None
    policy: PolicyName = "eigen_floor"
    min_std: float = Field(default=1e-3, gt=0)


class PredictResponse(BaseModel):
    labels: list[int]
    error: Optional[float] = None


class BenchmarkRequest(BaseModel):
    dataset: Literal["toy", "cigars", "csv"] = "toy"
    methods: list[str] = ["naive", "em", "retrain", "gmlvq_transfer"]
    n_grid: Optional[list[int]] = None
    folds: Optional[int] = Field(default=None, ge=2)
    exclude_classes: list[int] = []
    seed: int = 0
    n_per_class: Optional[int] = Field(default=None, ge=1)
    sigma: Optional[float] = Field(default=None, gt=0)
    epsilon: float = Field(default=1e-5, gt=0)
    ridge: Optional[float] = Field(default=None, ge=0)
    source_data: Optional[DatasetPayload] = None
    target_data: Optional[DatasetPayload] = None


class BenchmarkCell(BaseModel):
    method: str
    n: int
    err_mean: float
    err_std: float
    time_mean: float
    time_std: float
    folds: int
    failures: int


class BenchmarkResponse(BaseModel):
    methods: list[str]
    n_grid: list[int]
    cells: list[BenchmarkCell]


class ErrorBody(BaseModel):
    error: str
    message: str
