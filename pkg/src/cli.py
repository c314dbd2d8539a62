"""
CLI - front end de los experimentos.

Comandos: generate, train, eval, sample, qq, copula, rankcorr, shift, sweep.

Códigos de salida:
- 0 éxito
- 1 cualquier otra falla
- 2 configuración inválida (se listan los campos)
- 3 entrenamiento fallido (el reporte parcial queda escrito)
"""

import argparse
import asyncio
import json
import logging
import sys
from typing import Any, Dict, List, Optional, Sequence

from pydantic import ValidationError

from .config import ExperimentConfig, Settings, get_settings
from .errors import ConfigurationError, HybridFlowError
from .graphs.graph_agent import ExperimentGraph

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_TRAINING = 3

GENERATORS = ("moons", "circles", "tabular")
MODEL_KINDS = ("mvn", "mctm", "cf", "maf", "hcf", "hmaf")
DIAGNOSTIC_COMMANDS = ("qq", "copula", "rankcorr", "shift")

COMMAND_PHASES = {
    "generate": ("data",),
    "train": ("data", "train"),
    "eval": ("data", "train", "eval"),
    "sample": ("data", "train", "sample"),
    **{cmd: ("data", "train", "diagnostics") for cmd in DIAGNOSTIC_COMMANDS},
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="documento JSON de ExperimentConfig")
    common.add_argument("--dataset", help="nombre de un dataset configurado o generador (moons, circles, tabular)")
    common.add_argument("--model", help="nombre de un modelo configurado o tipo (mvn, mctm, cf, maf, hcf, hmaf)")
    common.add_argument("--family", choices=["bernstein", "rqs"])
    common.add_argument("--conditional", action=argparse.BooleanOptionalAction, default=None)
    common.add_argument("--seed", type=int)
    common.add_argument("--outdir")
    common.add_argument("--noise", type=float)
    common.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=None)
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch-size", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--patience", type=int)
    common.add_argument("--max-steps", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--log-level")

    parser = argparse.ArgumentParser(prog="hybridflows", description="Flujos normalizantes híbridos")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", parents=[common], help="genera o lee el dataset")
    gen.add_argument("--n", dest="n_rows", type=int, help="filas de train+validación")
    for name in ("train", "eval"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--n", dest="n_rows", type=int)
    sample = sub.add_parser("sample", parents=[common], help="muestrea el modelo")
    sample.add_argument("--n", dest="n_samples", type=int, help="cantidad de muestras")
    for name in DIAGNOSTIC_COMMANDS:
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--n", dest="n_rows", type=int)
    sweep = sub.add_parser("sweep", parents=[common], help="todos los modelos × semillas × datasets")
    sweep.add_argument("--seeds", type=int, nargs="+")
    sweep.add_argument("--n", dest="n_rows", type=int)
    return parser


def _base_payload(args: argparse.Namespace) -> Dict[str, Any]:
    """Documento de partida: el archivo de configuración o uno mínimo armado con --dataset/--model."""
    if args.config:
        config = ExperimentConfig.load(args.config)
        payload = config.model_dump(mode="json")
    else:
        dataset = args.dataset or "moons"
        model = args.model or "hcf"
        if dataset not in GENERATORS:
            raise ConfigurationError(f"[CLI] sin --config el dataset debe ser uno de {GENERATORS}", ["dataset"])
        if model not in MODEL_KINDS:
            raise ConfigurationError(f"[CLI] sin --config el modelo debe ser uno de {MODEL_KINDS}", ["model"])
        payload = {"datasets": [{"generator": dataset}], "models": [{"kind": model}]}
    return payload


def _select(items: List[Dict[str, Any]], name: Optional[str], key_fields: Sequence[str]) -> List[Dict[str, Any]]:
    if name is None:
        return items
    chosen = [item for item in items if any(item.get(k) == name for k in key_fields if item.get(k))]
    return chosen or items


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """Carga la configuración y aplica las banderas de la línea de comandos."""
    payload = _base_payload(args)
    if args.config:
        config = ExperimentConfig.model_validate(payload)
        payload["datasets"] = [d for d in payload["datasets"]
                               if args.dataset is None or _label(d) == args.dataset] or _missing("dataset", args.dataset)
        payload["models"] = [m for m, spec in zip(payload["models"], config.models)
                             if args.model is None or spec.label == args.model or
                             (not spec.name and spec.kind == args.model)] or _missing("model", args.model)

    for data in payload["datasets"]:
        _override(data, "n", getattr(args, "n_rows", None))
        _override(data, "noise", args.noise)
        _override(data, "standardize", args.standardize)
    for model in payload["models"]:
        _override(model, "family", args.family)
        _override(model, "conditional", args.conditional)
    train = payload.setdefault("train", {})
    for field, value in (("epochs", args.epochs), ("batch_size", args.batch_size), ("learning_rate", args.lr),
                         ("patience", args.patience), ("max_steps", args.max_steps)):
        _override(train, field, value)
    evaluation = payload.setdefault("evaluation", {})
    _override(evaluation, "n_samples", getattr(args, "n_samples", None))
    if args.command == "sample":
        _override(evaluation, "sample_seed", args.seed)
    if args.command in DIAGNOSTIC_COMMANDS:
        evaluation["diagnostics"] = [args.command]
    _override(payload, "outdir", args.outdir)
    if getattr(args, "seeds", None):
        payload["seeds"] = args.seeds
    elif args.seed is not None and args.command != "sample":
        payload["seeds"] = [args.seed]
    return ExperimentConfig.model_validate(payload)


def _label(data: Dict[str, Any]) -> str:
    return data.get("name") or data.get("generator", "moons")


def _missing(kind: str, name: str):
    raise ConfigurationError(f"[CLI] {kind} '{name}' no está en la configuración", [f"{kind}s"])


def _override(target: Dict[str, Any], key: str, value: Any) -> None:
    if value is not None:
        target[key] = value


def format_validation_error(exc: ValidationError) -> List[str]:
    """Una línea por error: ruta con puntos y mensaje."""
    return [f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()]


def exit_code_for(failure: Optional[str]) -> int:
    return {"configuration": EXIT_CONFIG, "training": EXIT_TRAINING}.get(failure, EXIT_FAILURE)


def run_command(args: argparse.Namespace, config: ExperimentConfig, settings: Settings) -> int:
    if args.command == "sweep":
        graph = ExperimentGraph(settings)
        table, states = asyncio.run(graph.run_sweep(config))
        print(table.to_wide_frame().to_string(index=False) if table.rows else "sin ensayos completados")
        failures = [s.failure for s in states if s.failed]
        if not failures:
            return EXIT_OK
        return EXIT_TRAINING if "training" in failures else exit_code_for(failures[0])

    graph = ExperimentGraph(settings, diagnostics=[args.command] if args.command in DIAGNOSTIC_COMMANDS else None)
    state = graph.new_state(config, config.datasets[0], config.models[0], config.seeds[0],
                            reuse_model=args.command != "train")
    state = asyncio.run(graph.run_pipeline(state, COMMAND_PHASES[args.command]))
    print(json.dumps(state.outputs, indent=2, sort_keys=True))
    if state.failed:
        for error in state.errors:
            print(error, file=sys.stderr)
        return exit_code_for(state.failure)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = get_settings()
    if args.workers is not None:
        settings = settings.model_copy(update={"workers": args.workers})
    logging.basicConfig(level=(args.log_level or settings.log_level).upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        config = build_config(args)
    except ValidationError as exc:
        for line in format_validation_error(exc):
            print(line, file=sys.stderr)
        return EXIT_CONFIG
    except ConfigurationError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG

    try:
        return run_command(args, config, settings)
    except HybridFlowError as exc:
        logger.error(f"[CLI] {exc}")
        return EXIT_FAILURE
