"""Self-describing JSON documents for models and transfer maps.

Every document carries a ``kind`` tag and plain nested lists. Floats are
written with ``repr`` semantics (shortest round-trip form), so loading a
saved document reproduces every value bit for bit.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import InvalidInputError
from .lgmm import LabeledGMM
from .lvq import LvqModel
from .transfer import TransferMap

KIND_LGMM = "labeled_gmm"
KIND_LVQ = "lvq"
KIND_TRANSFER = "transfer_map"


def model_to_document(obj) -> dict:
    """Convert a model object into a JSON-ready dictionary."""
    if isinstance(obj, LabeledGMM):
        return {
            "kind": KIND_LGMM,
            "means": obj.means.tolist(),
            "precisions": obj.precisions.tolist(),
            "label_cond": obj.label_cond.tolist(),
            "priors": obj.priors.tolist(),
            "shared_precision": bool(obj.shared_precision),
        }
    if isinstance(obj, LvqModel):
        return {
            "kind": KIND_LVQ,
            "prototypes": obj.prototypes.tolist(),
            "prototype_labels": obj.prototype_labels.tolist(),
            "omegas": obj.omegas.tolist(),
            "shared_omega": bool(obj.shared_omega),
        }
    if isinstance(obj, TransferMap):
        return {
            "kind": KIND_TRANSFER,
            "matrix": obj.matrix.tolist(),
            "iterations": int(obj.iterations),
            "converged": bool(obj.converged),
            "final_eq_error": float(obj.final_eq_error),
            "eq_error_trace": list(obj.eq_error_trace),
            "loglik_trace": list(obj.loglik_trace),
        }
    raise InvalidInputError(f"cannot serialize object of type {type(obj).__name__}")


def document_to_model(doc: dict):
    """Rebuild a model object from its document form."""
    if not isinstance(doc, dict) or "kind" not in doc:
        raise InvalidInputError("document must be a mapping with a 'kind' tag")
    kind = doc["kind"]
    try:
        if kind == KIND_LGMM:
            return LabeledGMM(
                np.array(doc["means"], dtype=float),
                np.array(doc["precisions"], dtype=float),
                np.array(doc["label_cond"], dtype=float),
                np.array(doc["priors"], dtype=float),
                shared_precision=bool(doc["shared_precision"]),
            )
        if kind == KIND_LVQ:
            return LvqModel(
                np.array(doc["prototypes"], dtype=float),
                np.array(doc["prototype_labels"], dtype=int),
                np.array(doc["omegas"], dtype=float),
                shared_omega=bool(doc["shared_omega"]),
            )
        if kind == KIND_TRANSFER:
            return TransferMap(
                matrix=np.array(doc["matrix"], dtype=float),
                iterations=int(doc["iterations"]),
                converged=bool(doc["converged"]),
                eq_error_trace=tuple(doc["eq_error_trace"]),
                loglik_trace=tuple(doc["loglik_trace"]),
            )
    except KeyError as exc:
        raise InvalidInputError(f"document is missing field {exc}") from None
    raise InvalidInputError(f"unknown document kind {kind!r}")


def save_model(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(model_to_document(obj), handle, indent=2)
        handle.write("\n")


def load_model(path):
    with open(path, "r", encoding="utf-8") as handle:
        try:
            doc = json.load(handle)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path} is not valid JSON: {exc}") from None
    return document_to_model(doc)
