"""FastAPI application wrapping the core package.

Error mapping: invalid inputs and configurations give 400, numerical
degeneracies 409; request-schema violations use FastAPI's own 422.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import datagen
from ..bench import ExperimentConfig, run_experiment
from ..dataset import write_dataset_csv
from ..errors import EmTransferError, InvalidInputError, NumericalError
from ..lgmm import LabeledGMM, PrecisionPolicy, classify_batch, fit_lgmm
from ..lvq import (
    LvqModel,
    LvqTrainingConfig,
    lvq_classify_batch,
    to_lgmm,
    train_gmlvq,
    train_lgmlvq,
)
from ..serialize import document_to_model, model_to_document
from ..transfer import TransferConfig, TransferMap, apply_transfer, em_transfer
from . import schemas

_GENERATORS = {
    "toy-source": (datagen.toy_source, 100),
    "toy-target": (datagen.toy_target, 100),
    "toy-ambiguous": (datagen.toy_ambiguous, 100),
    "cigars-source": (datagen.cigars_source, 1000),
    "cigars-target": (datagen.cigars_target, 1000),
}


def _policy(name: str, min_std: float) -> PrecisionPolicy:
    if name == "pseudo_determinant":
        return PrecisionPolicy.pseudo_determinant()
    return PrecisionPolicy.eigen_floor(min_std)


def _classifier(document: dict, sigma=None):
    """A labeled GMM or LVQ model from its document, plus a batch classifier."""
    model = document_to_model(document)
    if isinstance(model, LvqModel):
        return model, lambda pts, policy: lvq_classify_batch(model, pts)
    if isinstance(model, LabeledGMM):
        return model, lambda pts, policy: classify_batch(model, pts, policy)
    raise InvalidInputError(f"{document.get('kind')!r} is not a classifier document")


def create_app() -> FastAPI:
    app = FastAPI(title="emtransfer", description=__doc__)

    @app.exception_handler(EmTransferError)
    async def _handle_package_errors(request: Request, exc: EmTransferError):
        status = 409 if isinstance(exc, NumericalError) else 400
        body = schemas.ErrorBody(error=type(exc).__name__, message=str(exc))
        return JSONResponse(status_code=status, content=body.model_dump())

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/generate", response_model=schemas.GenerateResponse)
    def generate(request: schemas.GenerateRequest):
        fn, default_n = _GENERATORS[request.generator]
        data = fn(request.n_per_class or default_n, request.seed)
        return schemas.GenerateResponse(dataset=schemas.DatasetPayload.from_dataset(data))

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(request: schemas.TrainRequest):
        data = request.dataset.to_dataset()
        if request.family in ("gmlvq", "lgmlvq"):
            config = LvqTrainingConfig(
                prototypes_per_class=request.prototypes_per_class,
                epochs=request.epochs, seed=request.seed,
            )
            trainer = train_gmlvq if request.family == "gmlvq" else train_lgmlvq
            model = trainer(data, config)
            predicted = lvq_classify_batch(model, data.points)
        else:
            policy = PrecisionPolicy.eigen_floor(request.min_std)
            model = fit_lgmm(data, request.k_per_label,
                             shared_precision=request.family == "lgmm",
                             policy=policy, seed=request.seed, restarts=request.restarts)
            predicted = classify_batch(model, data.points, policy)
        error = float(np.mean(predicted != data.labels))
        return schemas.TrainResponse(document=model_to_document(model), training_error=error)

    @app.post("/transfer", response_model=schemas.TransferResponse)
    def transfer(request: schemas.TransferRequest):
        model = document_to_model(request.document)
        if isinstance(model, TransferMap):
            raise InvalidInputError("expected a classifier document, got a transfer map")
        if isinstance(model, LvqModel):
            model = to_lgmm(model, request.sigma)
        config = TransferConfig(
            epsilon=request.epsilon, max_iterations=request.max_iterations,
            ridge=request.ridge, policy=_policy(request.policy, request.min_std),
        )
        result = em_transfer(model, request.target.to_dataset(), config)
        return schemas.TransferResponse(
            document=model_to_document(result), iterations=result.iterations,
            converged=result.converged, final_eq_error=result.final_eq_error,
        )

    @app.post("/predict", response_model=schemas.PredictResponse)
    def predict(request: schemas.PredictRequest):
        model, classify = _classifier(request.document)
        points = np.asarray(request.points, dtype=float)
        if request.transfer is not None:
            transfer_map = document_to_model(request.transfer)
            if not isinstance(transfer_map, TransferMap):
                raise InvalidInputError("'transfer' must be a transfer-map document")
            points = apply_transfer(transfer_map, points)
        policy = _policy(request.policy, request.min_std)
        labels = classify(points, policy)
        error = None
        if request.labels is not None:
            if len(request.labels) != len(labels):
                raise InvalidInputError("labels length does not match points")
            error = float(np.mean(labels != np.asarray(request.labels)))
        return schemas.PredictResponse(labels=[int(l) for l in labels], error=error)

    @app.post("/benchmark", response_model=schemas.BenchmarkResponse)
    def benchmark(request: schemas.BenchmarkRequest):
        kwargs = dict(
            dataset=request.dataset, methods=tuple(request.methods),
            n_grid=tuple(request.n_grid) if request.n_grid else None,
            folds=request.folds, exclude_classes=tuple(request.exclude_classes),
            seed=request.seed, n_per_class=request.n_per_class,
            sigma=request.sigma, epsilon=request.epsilon, ridge=request.ridge,
        )
        if request.dataset == "csv":
            if request.source_data is None or request.target_data is None:
                raise InvalidInputError("csv benchmarks need source_data and target_data")
            with tempfile.TemporaryDirectory() as tmp:
                src = Path(tmp) / "source.csv"
                tgt = Path(tmp) / "target.csv"
                write_dataset_csv(request.source_data.to_dataset(), src)
                write_dataset_csv(request.target_data.to_dataset(), tgt)
                report = run_experiment(ExperimentConfig(
                    source_csv=str(src), target_csv=str(tgt), **kwargs))
        else:
            report = run_experiment(ExperimentConfig(**kwargs))
        cells = [
            schemas.BenchmarkCell(
                method=method, n=n, err_mean=cell.err_mean, err_std=cell.err_std,
                time_mean=cell.time_mean, time_std=cell.time_std,
                folds=cell.folds, failures=cell.failures,
            )
            for method in report.methods for n in report.n_grid
            for cell in [report.cell(method, n)]
        ]
        return schemas.BenchmarkResponse(
            methods=list(report.methods), n_grid=list(report.n_grid), cells=cells)

    return app


app = create_app()
