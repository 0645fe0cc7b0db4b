"""Command-line entry points.

Exit codes: 0 success, 1 grammar issues or solve failure, 2 parse or usage
error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .agent import AgentConfig, EndpointError, ExhaustedRetries, ScriptedClient, run_session
from .catalog import CatalogError, load_catalog
from .dsl import ProgramSyntaxError, parse_program, validate_grammar
from .feedback import grammar_report
from .physics import QuasiStaticBackend
from .pipeline import SolverConfig, solve_program
from .scene import Bounds2D
from .scenefile import SceneFileError, load_scene, program_hash, render_svg, save_scene
from .stability import DIM, PerturbationSpec, estimate_p_fail, sample_dataset

log = logging.getLogger("predscene")

DEFAULT_BOUNDS = "-0.5,0.5,-0.5,0.5,0"
DEFAULT_SEED = 0

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def default_catalog_path() -> Path:
    return Path(str(resources.files("predscene").joinpath("resources/demo_catalog.json")))


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


def _bounds(text: str) -> Bounds2D:
    try:
        return Bounds2D.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _emit(doc: dict) -> None:
    sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _catalog(args):
    try:
        return load_catalog(args.catalog or default_catalog_path())
    except (OSError, CatalogError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load catalog: {exc}") from exc


def _read_program(path: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    return text, parse_program(text)


def _solver_config(args) -> SolverConfig:
    return SolverConfig(args.resolution, args.kbottom, args.ksearch, args.threshold)


def _provenance(text: str, args, config: SolverConfig) -> dict:
    return {"program_hash": program_hash(text), "seed": args.seed, "solver": config.to_json()}


def cmd_validate(args) -> int:
    _, program = _read_program(args.program)
    catalog = _catalog(args) if args.catalog else None
    report = grammar_report(validate_grammar(program, catalog))
    _emit(report.to_json())
    return EXIT_FAIL if report.issues else EXIT_OK


def cmd_solve(args) -> int:
    text, program = _read_program(args.program)
    config = _solver_config(args)
    outcome = solve_program(program, _catalog(args), args.bounds, args.seed, config)
    if not outcome.ok:
        _emit(outcome.report.to_json())
        return EXIT_FAIL
    save_scene(args.out, outcome.scene, _provenance(text, args, config))
    log.info("wrote %s", args.out)
    return EXIT_OK


def cmd_stability(args) -> int:
    try:
        scene = load_scene(args.scene)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot load scene: {exc}") from exc
    if args.object not in scene:
        raise UsageError(f"no object {args.object!r} in {args.scene}")
    spec = PerturbationSpec.default_for(scene[args.object], args.samples)
    if args.scale != 1.0:
        spec = spec.scaled(args.scale)
    backend = QuasiStaticBackend(resolution=args.resolution)
    data = sample_dataset(scene, args.object, spec, backend, args.seed)
    _emit(estimate_p_fail(np.zeros(DIM), data, spec).to_json())
    return EXIT_OK


def cmd_render(args) -> int:
    try:
        scene = load_scene(args.scene)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot load scene: {exc}") from exc
    Path(args.out).write_text(render_svg(scene, args.width), encoding="utf-8")
    return EXIT_OK


def cmd_generate(args) -> int:
    config = AgentConfig(
        endpoint=args.endpoint,
        model=args.model,
        api_key_env=args.api_key_env,
        max_retries=args.max_retries,
        offline=args.offline,
        max_enrichment_rounds=args.enrich,
        stability_samples=args.samples,
    )
    client = None
    program_text = None
    if args.offline:
        if not args.program:
            raise UsageError("--offline needs --program")
        program_text, _ = _read_program(args.program)
    elif args.scripted:
        try:
            client = ScriptedClient.from_file(args.scripted)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read scripted responses: {exc}") from exc
    else:
        if not args.endpoint or not args.model:
            raise UsageError("online mode needs --endpoint and --model")
        if not os.environ.get(args.api_key_env):
            raise UsageError(f"environment variable {args.api_key_env} is not set")
    solver = _solver_config(args)
    transcript_path = args.transcript or str(Path(args.out).with_suffix(".transcript.jsonl"))
    try:
        scene, transcript = run_session(
            args.prompt, config, _catalog(args), args.bounds, args.seed,
            client=client, program_text=program_text, solver_config=solver,
        )
    except ExhaustedRetries as exc:
        exc.transcript.save(transcript_path)
        log.error("%s", exc)
        return EXIT_FAIL
    except EndpointError as exc:
        log.error("%s", exc)
        return EXIT_FAIL
    transcript.save(transcript_path)
    # Provenance names the round whose scene was kept, with that round's seed.
    kept = next(r for r in reversed(transcript.rounds) if r["ok"])
    response = transcript.messages[kept["after_message"] - 1]["content"]
    prov = {"program_hash": program_hash(response), "seed": kept["seed"], "solver": solver.to_json()}
    save_scene(args.out, scene, prov)
    return EXIT_OK


def _common(p: argparse.ArgumentParser, solve: bool = True) -> None:
    p.add_argument("--catalog", help="asset manifest JSON (default: bundled demo catalog)")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"random seed (default {DEFAULT_SEED})")
    p.add_argument("--resolution", type=_positive_float, default=0.01, help="voxel size in meters")
    if solve:
        p.add_argument("--bounds", type=_bounds, default=_bounds(DEFAULT_BOUNDS),
                       help=f"minx,maxx,miny,maxy,topz (default {DEFAULT_BOUNDS})")
        p.add_argument("--kbottom", type=_positive_int, default=1, help="bottom-surface depth in voxels")
        p.add_argument("--ksearch", type=_positive_int, default=1, help="contact search depth in voxels")
        p.add_argument("--threshold", type=float, default=0.3, help="retrieval similarity threshold")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="predscene", description="Predicate-based tabletop scene generation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a predicate program's grammar")
    p.add_argument("program")
    p.add_argument("--catalog", help="asset manifest; enables PLACE-IN category checks")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="solve a predicate program into a scene file")
    p.add_argument("program")
    p.add_argument("--out", required=True, help="scene file to write")
    _common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("stability", help="estimate one object's failure probability")
    p.add_argument("scene")
    p.add_argument("object")
    p.add_argument("--samples", "-N", type=_positive_int, default=50, help="perturbation samples")
    p.add_argument("--scale", type=_positive_float, default=1.0, help="multiply every default std-dev")
    _common(p, solve=False)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("render", help="top-down SVG of a scene file")
    p.add_argument("scene")
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=_positive_int, default=600, help="image width in pixels")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("generate", help="run the agent loop for a scene prompt")
    p.add_argument("prompt")
    p.add_argument("--out", required=True, help="scene file to write")
    p.add_argument("--transcript", help="transcript JSONL (default: next to --out)")
    p.add_argument("--offline", action="store_true", help="use --program instead of an endpoint")
    p.add_argument("--program", help="program file for offline mode")
    p.add_argument("--scripted", help="JSON array of canned endpoint responses")
    p.add_argument("--endpoint", help="chat-completions URL")
    p.add_argument("--model", help="model name sent to the endpoint")
    p.add_argument("--api-key-env", default="OPENAI_API_KEY", help="environment variable holding the API key")
    p.add_argument("--max-retries", type=int, default=5)
    p.add_argument("--enrich", type=int, default=1, help="enrichment rounds after a success")
    p.add_argument("--samples", type=_positive_int, default=50, help="stability samples per object")
    _common(p)
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ProgramSyntaxError as exc:
        sys.stderr.write(f"predscene: parse error: {exc}\n")
        return EXIT_USAGE
    except (UsageError, SceneFileError) as exc:
        sys.stderr.write(f"predscene: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
