"""Thin command-line client for the transfer-learning service.

Every subcommand builds a request, posts it to the service and writes the
result to local files. By default the service runs in-process (no server
needed); pass ``--url`` to talk to a remote instance started with
``emtransfer serve``.

Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import asyncio
import csv
import sys
from dataclasses import replace

import httpx

from .bench import (
    CellStats,
    ExperimentConfig,
    ExperimentReport,
    read_config_file,
    write_report_csv,
)
from .dataset import Dataset, read_dataset_csv, write_dataset_csv
from .errors import EmTransferError, NumericalError
from .serialize import document_to_model, load_model, model_to_document, save_model

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits with code 2 on usage errors; the contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID)


class _ServiceError(Exception):
    def __init__(self, status_code, payload):
        self.status_code = status_code
        self.payload = payload
        detail = payload.get("message") or payload.get("detail") or payload
        super().__init__(f"service returned {status_code}: {detail}")


class Client:
    """Posts requests to a remote service or to the in-process app."""

    def __init__(self, url: str | None = None):
        self._remote = httpx.Client(base_url=url, timeout=600.0) if url else None
        if url is None:
            from .service.app import create_app

            self._app = create_app()

    def post(self, endpoint: str, payload: dict) -> dict:
        if self._remote is not None:
            response = self._remote.post(endpoint, json=payload)
        else:
            response = asyncio.run(self._post_in_process(endpoint, payload))
        if response.status_code != 200:
            try:
                body = response.json()
            except ValueError:
                body = {"message": response.text}
            raise _ServiceError(response.status_code, body)
        return response.json()

    async def _post_in_process(self, endpoint: str, payload: dict):
        transport = httpx.ASGITransport(app=self._app)
        async with httpx.AsyncClient(transport=transport, timeout=None,
                                     base_url="http://emtransfer.local") as client:
            return await client.post(endpoint, json=payload)

    def close(self):
        if self._remote is not None:
            self._remote.close()


def _dataset_payload(path) -> dict:
    data = read_dataset_csv(path)
    return {"points": data.points.tolist(), "labels": data.labels.tolist()}


def _write_dataset(payload: dict, path) -> None:
    write_dataset_csv(Dataset(payload["points"], payload["labels"]), path)


def _cmd_generate(client: Client, args) -> int:
    body = {"generator": args.generator, "seed": args.seed}
    if args.n_per_class is not None:
        body["n_per_class"] = args.n_per_class
    result = client.post("/generate", body)
    _write_dataset(result["dataset"], args.out)
    print(f"wrote {len(result['dataset']['labels'])} points to {args.out}")
    return EXIT_OK


def _cmd_train(client: Client, args) -> int:
    body = {
        "dataset": _dataset_payload(args.data),
        "family": args.family,
        "seed": args.seed,
        "prototypes_per_class": args.prototypes_per_class,
        "epochs": args.epochs,
        "k_per_label": args.k_per_label,
        "restarts": args.restarts,
    }
    result = client.post("/train", body)
    save_model(document_to_model(result["document"]), args.out)
    print(f"trained {args.family} (training error {result['training_error']:.4f}) -> {args.out}")
    return EXIT_OK


def _cmd_transfer(client: Client, args) -> int:
    body = {
        "document": model_to_document(load_model(args.model)),
        "target": _dataset_payload(args.data),
        "epsilon": args.epsilon,
        "max_iterations": args.max_iterations,
    }
    if args.sigma is not None:
        body["sigma"] = args.sigma
    if args.ridge is not None:
        body["ridge"] = args.ridge
    result = client.post("/transfer", body)
    save_model(document_to_model(result["document"]), args.out)
    state = "converged" if result["converged"] else "did not converge"
    print(f"transfer map {state} after {result['iterations']} iterations "
          f"(final error {result['final_eq_error']:.6g}) -> {args.out}")
    return EXIT_OK


def _cmd_predict(client: Client, args) -> int:
    data = read_dataset_csv(args.data)
    body = {
        "document": model_to_document(load_model(args.model)),
        "points": data.points.tolist(),
        "labels": data.labels.tolist(),
    }
    if args.transfer_map:
        body["transfer"] = model_to_document(load_model(args.transfer_map))
    result = client.post("/predict", body)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["label"])
            for label in result["labels"]:
                writer.writerow([label])
        print(f"wrote {len(result['labels'])} predictions to {args.out}")
    if result.get("error") is not None:
        print(f"classification error: {result['error']:.4f}")
    return EXIT_OK


def _benchmark_body(config: ExperimentConfig) -> dict:
    body = {
        "dataset": config.dataset,
        "methods": list(config.methods),
        "exclude_classes": list(config.exclude_classes),
        "seed": config.seed,
        "epsilon": config.epsilon,
    }
    if config.n_grid is not None:
        body["n_grid"] = list(config.n_grid)
    if config.folds is not None:
        body["folds"] = config.folds
    if config.n_per_class is not None:
        body["n_per_class"] = config.n_per_class
    if config.sigma is not None:
        body["sigma"] = config.sigma
    if config.ridge is not None:
        body["ridge"] = config.ridge
    if config.dataset == "csv":
        body["source_data"] = _dataset_payload(config.source_csv)
        body["target_data"] = _dataset_payload(config.target_csv)
    return body


def _cmd_benchmark(client: Client, args) -> int:
    config = read_config_file(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.method:
        overrides["methods"] = tuple(args.method)
    if args.n_grid:
        overrides["n_grid"] = tuple(int(v) for v in args.n_grid.split(","))
    if args.folds is not None:
        overrides["folds"] = args.folds
    if args.exclude_classes:
        overrides["exclude_classes"] = tuple(int(v) for v in args.exclude_classes.split(","))
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.sigma is not None:
        overrides["sigma"] = args.sigma
    if args.epsilon is not None:
        overrides["epsilon"] = args.epsilon
    if args.ridge is not None:
        overrides["ridge"] = args.ridge
    if overrides:
        config = replace(config, **overrides)
    result = client.post("/benchmark", _benchmark_body(config))
    cells = {
        (c["method"], c["n"]): CellStats(c["err_mean"], c["err_std"], c["time_mean"],
                                         c["time_std"], c["folds"], c["failures"])
        for c in result["cells"]
    }
    report = ExperimentReport(tuple(result["methods"]), tuple(result["n_grid"]), cells)
    out = args.out or config.output
    if out:
        write_report_csv(report, out)
        print(f"wrote report to {out}")
    for n in report.n_grid:
        row = "  ".join(
            f"{m}={report.cell(m, n).err_mean:.3f}" for m in report.methods
        )
        print(f"N={n}: {row}")
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("emtransfer.service.app:app", host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="emtransfer", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--url", default=None,
                        help="base URL of a running service (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample an artificial dataset to CSV")
    p.add_argument("generator", choices=["toy-source", "toy-target", "toy-ambiguous",
                                         "cigars-source", "cigars-target"])
    p.add_argument("--n-per-class", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="fit a source model and save its document")
    p.add_argument("--data", required=True, help="training dataset CSV")
    p.add_argument("--family", choices=["gmlvq", "lgmlvq", "lgmm", "lgmm-loc"],
                   default="gmlvq")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--prototypes-per-class", type=int, default=1)
    p.add_argument("--k-per-label", type=int, default=1)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("transfer", help="fit a transfer map from target data")
    p.add_argument("--model", required=True, help="source model document")
    p.add_argument("--data", required=True, help="labeled target dataset CSV")
    p.add_argument("--sigma", type=float, default=None,
                   help="prototype-to-Gaussian conversion scale")
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--ridge", type=float, default=None)
    p.add_argument("--max-iterations", type=int, default=200)
    p.add_argument("--out", required=True)

    p = sub.add_parser("predict", help="classify a CSV, optionally through a map")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--transfer-map", default=None)
    p.add_argument("--out", default=None, help="write predicted labels here")

    p = sub.add_parser("benchmark", help="run a crossvalidated experiment")
    p.add_argument("--config", default=None, help="key = value experiment file")
    p.add_argument("--method", action="append", default=None,
                   help="override methods (repeatable)")
    p.add_argument("--n-grid", default=None, help="comma-separated sizes")
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--exclude-classes", default=None, help="comma-separated labels")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--ridge", type=float, default=None)
    p.add_argument("--out", default=None, help="report CSV path")

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    return parser


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "transfer": _cmd_transfer,
    "predict": _cmd_predict,
    "benchmark": _cmd_benchmark,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INVALID
    if args.command == "serve":
        return _cmd_serve(args)
    client = Client(args.url)
    try:
        return _COMMANDS[args.command](client, args)
    except _ServiceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.status_code in (400, 422):
            return EXIT_INVALID
        return EXIT_NUMERICAL
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (EmTransferError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    finally:
        client.close()


if __name__ == "__main__":
    raise SystemExit(main())
