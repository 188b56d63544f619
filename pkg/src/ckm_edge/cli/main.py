#!/usr/bin/env python3
"""`ckm` command line: the whole cloud-edge workflow behind one entry point.

    ckm synth      --count 200 --size 32 --out data/synth
    ckm train      --data data/synth --steps 20000 --out prior.ckmw
    ckm publish    --registry reg --weights prior.ckmw --version v1
    ckm serve      --registry reg --bind 127.0.0.1:7070
    ckm list       --server 127.0.0.1:7070
    ckm fetch      --server 127.0.0.1:7070 --version latest
    ckm observe    --grid g.ckmg --op-json '{"kind": "ipbox", ...}' --out g.ckmo
    ckm construct  --weights prior.ckmw --obs g.ckmo
    ckm eval       --weights prior.ckmw --testset data/synth --task ipbox
    ckm sweep      --weights prior.ckmw --testset data/synth --zetas 0,5,10,13,20,100

Settings come from flags, then config.yaml, then built-in defaults. Every command
writes a JSON echo of its effective settings next to its outputs.

Exit codes: 0 success, 2 usage, 3 data/format, 4 network, 5 numerical.
"""

from __future__ import annotations

import argparse
import csv
import json
import signal
import sys
import threading
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from ckm_edge.cloud import EdgeClient, Registry, edge_construct, fetch_model, publish_model, serve
from ckm_edge.config import get_section, load_config, set_config
from ckm_edge.core import ConstructionRunner, PosteriorConfig, build_operator, default_zeta, parse_operator_json
from ckm_edge.core.dispatcher import load_observation, save_observation
from ckm_edge.data import SynthParams, load_dataset, load_grid, save_dataset, synth_generate
from ckm_edge.diffusion import ArchDescriptor, TrainConfig, load_weights, make_schedule, save_weights, train
from ckm_edge.errors import EXIT_DATA, EXIT_OK, EXIT_USAGE, CkmError
from ckm_edge.evaluation import TaskConfig, dump_outcome, parameter_sweep, run_task, write_report_json, write_sweep_csv
from ckm_edge.evaluation.tasks import TASKS
from ckm_edge.operators import observe
from ckm_edge.utils.logger import configure_logging, get_logger
from ckm_edge.utils.path_utils import ensure_dir, get_output_path, write_json

logger = get_logger("ckm_edge.cli")

_NOT_ECHOED = {"func", "out", "out_dir"}


def parse_csv_or_list(values: Optional[Sequence[str]]) -> Optional[List[str]]:
    """Split possibly comma-delimited strings into a flat list.

    Example: ["0,5", "10"] -> ["0", "5", "10"]
    """
    if not values:
        return None
    out: List[str] = []
    for v in values:
        out.extend([p.strip() for p in v.split(",") if p.strip()])
    return out or None


def _echo(args: argparse.Namespace, path: Path, **extra: Any) -> Path:
    """Config echo: every flag plus the resolved settings behind an output.

    Destinations are left out so two runs into different directories echo the same bytes.
    """
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k not in _NOT_ECHOED}
    return write_json(path, {"command": args.command, "flags": flags, **extra})


def _echo_path(out: Path) -> Path:
    return out.with_name(f"{out.stem}.config.json")


# ----------------------------------------------------------------------------------
# Data
# ----------------------------------------------------------------------------------
def cmd_synth(args: argparse.Namespace) -> int:
    if args.count < 1:
        raise ValueError("count must be ≥ 1")
    if args.size % 4:
        raise ValueError(f"size must be divisible by 4 (the score network halves it twice), got {args.size}")
    out = Path(args.out) if args.out else args.out_dir / "synth"
    seeds = np.random.SeedSequence(args.seed).generate_state(args.count)
    grids = [synth_generate(SynthParams(size=args.size, seed=int(s))) for s in seeds]
    split = (args.split, args.seed) if args.count >= 2 and 0.0 < args.split < 1.0 else None
    save_dataset(grids, out, params={**SynthParams(size=args.size).to_dict(), "seed": args.seed}, split=split)
    _echo(args, out / "config.json")
    print(out)
    return EXIT_OK


def cmd_observe(args: argparse.Namespace) -> int:
    grid = load_grid(args.grid)
    spec = parse_operator_json(args.op_json)
    op = build_operator(spec, building=grid.building)
    sigma = get_section("sampling")["sigma"] if args.sigma is None else args.sigma
    obs = observe(grid, op, sigma=sigma, seed=args.seed)
    out = Path(args.out) if args.out else get_output_path(args.out_dir, "observe", Path(args.grid).stem, ".ckmo")
    save_observation(obs, out)
    _echo(args, _echo_path(out), operator=op.to_spec(), sigma=sigma)
    print(out)
    return EXIT_OK


# ----------------------------------------------------------------------------------
# Training and registry
# ----------------------------------------------------------------------------------
def _arch_from_args(args: argparse.Namespace) -> ArchDescriptor:
    if args.arch:
        return ArchDescriptor.parse(args.arch)
    net = get_section("network")
    return ArchDescriptor(
        base_width=int(net["base_width"]),
        channel_mult=tuple(int(m) for m in net["channel_mult"]),
        emb_dim=int(net["emb_dim"]),
        groups=int(net["groups"]),
    )


def cmd_train(args: argparse.Namespace) -> int:
    section = get_section("training")
    cfg = TrainConfig(
        batch_size=int(section["batch_size"]) if args.batch is None else args.batch,
        steps=int(section["steps"]) if args.steps is None else args.steps,
        learning_rate=float(section["learning_rate"]) if args.lr is None else args.lr,
        ema_decay=float(section["ema_decay"]),
        seed=args.seed,
        checkpoint_every=int(section["checkpoint_every"]) if args.checkpoint_every is None else args.checkpoint_every,
        log_every=int(section["log_every"]),
        weighting=args.weighting,
    )
    init = load_weights(args.init) if args.init else None
    if init is not None and args.n_timesteps is None:
        sched = init.noise_schedule()
    else:
        sched_cfg = get_section("schedule")
        sched = make_schedule(
            args.n_timesteps or int(sched_cfg["n_timesteps"]),
            sched_cfg.get("beta_min"),
            sched_cfg.get("beta_max"),
        )
    arch = init.arch if init is not None else _arch_from_args(args)
    if init is not None and args.arch and ArchDescriptor.parse(args.arch) != init.arch:
        raise ValueError(f"--arch {args.arch} does not match --init weights ({init.arch.to_string()})")
    data = load_dataset(args.data, args.part)

    out = Path(args.out) if args.out else get_output_path(args.out_dir, "train", "prior", ".ckmw")
    ensure_dir(out.parent)
    loss_csv = out.with_name(f"{out.stem}.loss.csv")
    with open(loss_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "loss"])

        def on_log(entry) -> None:
            writer.writerow([entry.step, f"{entry.loss:.8g}"])
            fh.flush()

        def on_checkpoint(params) -> None:
            save_weights(params, out.with_name(f"{out.stem}.step{params.trained_steps}.ckmw"))

        params = train(data, sched, cfg, arch=arch, init=init, on_log=on_log, on_checkpoint=on_checkpoint, progress=args.progress)
    save_weights(params, out)
    _echo(args, _echo_path(out), train=cfg.to_dict(), schedule=sched.meta(), arch=arch.to_string())
    print(out)
    return EXIT_OK


def cmd_publish(args: argparse.Namespace) -> int:
    manifest = publish_model(args.registry, args.weights, args.version)
    print(json.dumps(manifest.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    registry = Registry.open(args.registry, create=False)
    bind = args.bind or get_section("server")["bind"]
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    handle = serve(registry, bind)
    print(handle.address_string, flush=True)
    try:
        stop.wait()
    finally:
        handle.shutdown()
    return EXIT_OK


def cmd_list(args: argparse.Namespace) -> int:
    if args.server:
        with EdgeClient(args.server) as client:
            models = client.list_models()
    else:
        models = Registry.open(args.registry, create=False).list()
    print(json.dumps([m.to_dict() for m in models], indent=2, sort_keys=True))
    return EXIT_OK


def cmd_fetch(args: argparse.Namespace) -> int:
    print(fetch_model(args.server, args.version, cache_dir=args.cache_dir))
    return EXIT_OK


# ----------------------------------------------------------------------------------
# Construction and evaluation
# ----------------------------------------------------------------------------------
def cmd_construct(args: argparse.Namespace) -> int:
    if args.weights and args.server:
        raise ValueError("--weights and --server are mutually exclusive")
    if not args.weights and not args.server:
        raise ValueError("one of --weights or --server is required")
    spec = parse_operator_json(args.op_json) if args.op_json else None
    observation = load_observation(args.obs, spec=spec)
    sampling = get_section("sampling")
    cfg = PosteriorConfig(
        zeta=default_zeta(observation.operator.kind) if args.zeta is None else args.zeta,
        corrector_steps=int(sampling["corrector_steps"]) if args.corrector_steps is None else args.corrector_steps,
        snr=float(sampling["snr"]) if args.snr is None else args.snr,
        sigma=observation.sigma,
        seed=args.seed,
        detach_score=args.detach_score or bool(sampling["detach_score"]),
    )
    out = Path(args.out) if args.out else get_output_path(args.out_dir, "construct", Path(args.obs).stem, ".ckmg")
    if args.server:
        path = edge_construct(args.server, args.obs, spec, cfg, version=args.version, cache_dir=args.cache_dir, out_path=out)
    else:
        runner = ConstructionRunner.from_files(args.weights, args.obs, cfg, operator_spec=spec, out_path=out)
        runner.run()
        path = runner.save_to
    print(path)
    return EXIT_OK


def _task_config(args: argparse.Namespace) -> TaskConfig:
    tasks = get_section("tasks")
    sampling = get_section("sampling")
    return TaskConfig(
        task=args.task,
        box_side=tuple(tasks["box_side"]),
        mask_ratio=tuple(tasks["mask_ratio"]),
        scale=int(tasks["scale"]),
        truncation=tuple(tasks["truncation"]),
        sectors=int(tasks["sectors"]),
        sigma=float(sampling["sigma"]) if args.sigma is None else args.sigma,
        zeta=args.zeta,
        corrector_steps=int(sampling["corrector_steps"]) if args.corrector_steps is None else args.corrector_steps,
        snr=float(sampling["snr"]) if args.snr is None else args.snr,
        detach_score=args.detach_score or bool(sampling["detach_score"]),
        include_buildings=not args.exclude_buildings,
        seed=args.seed,
        testset=str(args.testset),
    )


def _eval_inputs(args: argparse.Namespace):
    params = load_weights(args.weights)
    grids = load_dataset(args.testset, args.part)
    limit = get_section("tasks")["test_grids"] if args.grids is None else args.grids
    if limit:
        grids = grids[: int(limit)]
    return params, params.noise_schedule(), grids


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _task_config(args)
    params, sched, grids = _eval_inputs(args)
    out = Path(args.out) if args.out else get_output_path(args.out_dir, "eval", cfg.task, ".json")
    on_outcome: Optional[Callable] = None
    if args.dump_pgm:
        pgm_dir = out.with_name(f"{out.stem}_pgm")
        on_outcome = lambda outcome: dump_outcome(outcome, pgm_dir)  # noqa: E731
    report = run_task(cfg, params, sched, grids, jobs=args.jobs, on_outcome=on_outcome, progress=args.progress)
    write_report_json(report, out)
    _echo(args, _echo_path(out), task=cfg.to_dict(), weights_sha256=params.checksum())
    print(json.dumps({"task": report.task, "report": str(out), **report.aggregate()}, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    raw = parse_csv_or_list(args.values)
    if not raw:
        raise ValueError(f"--{args.param.replace('_', '-')} values are required (e.g. 0,5,10,13,20,100)")
    cfg = _task_config(args)
    params, sched, grids = _eval_inputs(args)
    curve = parameter_sweep(cfg, params, sched, grids, args.param, [float(v) for v in raw], jobs=args.jobs)
    out = Path(args.out) if args.out else get_output_path(args.out_dir, "sweep", f"{cfg.task}_{args.param}", ".csv")
    write_sweep_csv(curve, out, name=args.param)
    write_json(out.with_suffix(".json"), {f"{v:g}": r.to_dict() for v, r in curve.items()})
    _echo(args, _echo_path(out), task=cfg.to_dict(), weights_sha256=params.checksum())
    print(out)
    return EXIT_OK


# ----------------------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------------------
def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="Seed for every random draw (default: 0)")
    common.add_argument("--out-dir", type=Path, default=Path("outputs"), help="Root for auto-named outputs (default: ./outputs)")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ... (default: $LOG_LEVEL or INFO)")
    common.add_argument("--config", type=Path, default=None, help="Explicit config.yaml path")
    return common


def _add_sampler_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--zeta", type=float, default=None, help="Observation constraint strength (default: per task)")
    p.add_argument("--corrector-steps", type=int, default=None, help="Langevin corrector steps per timestep")
    p.add_argument("--snr", type=float, default=None, help="Langevin signal-to-noise ratio")
    p.add_argument("--detach-score", action="store_true", help="Treat the score as constant in the likelihood gradient")


def _add_eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--weights", type=Path, required=True, help="CKMW prior weights")
    p.add_argument("--testset", type=Path, required=True, help="Dataset directory")
    p.add_argument("--part", default="test", choices=["all", "train", "test"], help="Dataset part (default: test)")
    p.add_argument("--task", default="ipbox", type=str.lower, choices=TASKS, help="Construction task (default: ipbox)")
    p.add_argument("--grids", type=int, default=None, help="Evaluate the first N grids (default: tasks.test_grids)")
    p.add_argument("--sigma", type=float, default=None, help="Measurement noise std")
    p.add_argument("--exclude-buildings", action="store_true", help="Leave building cells out of the RMSE")
    p.add_argument("--jobs", type=int, default=1, help="Number of parallel grid workers")
    p.add_argument("--progress", action="store_true", help="Show a progress bar")
    p.add_argument("--out", type=Path, default=None, help="Output file")
    _add_sampler_flags(p)


def build_argument_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ckm", description="Score-prior channel knowledge map construction, cloud to edge")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    common = _common()

    p = sub.add_parser("synth", parents=[common], help="Generate a synthetic dataset")
    p.add_argument("--count", type=int, default=10, help="Number of grids (default: 10)")
    p.add_argument("--size", type=int, default=64, help="Grid side in cells, divisible by 4 (default: 64)")
    p.add_argument("--split", type=float, default=0.8, help="Train fraction of regions; 0 disables (default: 0.8)")
    p.add_argument("--out", type=Path, default=None, help="Dataset directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="Train the score prior")
    p.add_argument("--data", type=Path, required=True, help="Dataset directory")
    p.add_argument("--part", default="train", choices=["all", "train", "test"], help="Dataset part (default: train)")
    p.add_argument("--steps", type=int, default=None, help="Optimisation steps")
    p.add_argument("--batch", type=int, default=None, help="Batch size")
    p.add_argument("--lr", type=float, default=None, help="Adam learning rate")
    p.add_argument("--n-timesteps", type=int, default=None, help="Diffusion steps N")
    p.add_argument("--arch", default=None, help='Architecture descriptor, e.g. "unet:ch=2,base=32,mult=1-2-2,emb=64,groups=8"')
    p.add_argument("--weighting", default="none", choices=["none", "sigma2"], help="Per-timestep loss weighting (default: none)")
    p.add_argument("--checkpoint-every", type=int, default=None, help="Checkpoint interval in steps (0 disables)")
    p.add_argument("--init", type=Path, default=None, help="Resume from these CKMW weights")
    p.add_argument("--progress", action="store_true", help="Show a progress bar")
    p.add_argument("--out", type=Path, default=None, help="Output CKMW file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("publish", parents=[common], help="Add weights to a registry")
    p.add_argument("--registry", type=Path, required=True, help="Registry directory")
    p.add_argument("--weights", type=Path, required=True, help="CKMW file")
    p.add_argument("--version", required=True, help='Version label, e.g. "v3"')
    p.set_defaults(func=cmd_publish)

    p = sub.add_parser("serve", parents=[common], help="Serve a registry over CKMP")
    p.add_argument("--registry", type=Path, required=True, help="Registry directory")
    p.add_argument("--bind", default=None, help="host:port (default: server.bind)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("list", parents=[common], help="List published models")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--server", help="host:port of a running server")
    src.add_argument("--registry", type=Path, help="Local registry directory")
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("fetch", parents=[common], help="Fetch weights into the edge cache")
    p.add_argument("--server", required=True, help="host:port")
    p.add_argument("--version", default="latest", help="Version or 'latest' (default)")
    p.add_argument("--cache-dir", type=Path, default=None, help="Cache directory (default: $CKM_CACHE_DIR)")
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("observe", parents=[common], help="Degrade a grid: y = A(x) + n")
    p.add_argument("--grid", type=Path, required=True, help="CKMG file")
    p.add_argument("--op-json", required=True, help="Operator JSON (inline or file)")
    p.add_argument("--sigma", type=float, default=None, help="Noise std (default: sampling.sigma)")
    p.add_argument("--out", type=Path, default=None, help="Output CKMO file")
    p.set_defaults(func=cmd_observe)

    p = sub.add_parser("construct", parents=[common], help="Reconstruct a grid from an observation")
    p.add_argument("--weights", type=Path, default=None, help="Local CKMW weights")
    p.add_argument("--server", default=None, help="host:port to fetch weights from")
    p.add_argument("--version", default="latest", help="Model version with --server (default: latest)")
    p.add_argument("--cache-dir", type=Path, default=None, help="Edge cache directory")
    p.add_argument("--obs", type=Path, required=True, help="CKMO observation")
    p.add_argument("--op-json", default=None, help="Operator JSON overriding the stored one")
    p.add_argument("--out", type=Path, default=None, help="Output CKMG file")
    _add_sampler_flags(p)
    p.set_defaults(func=cmd_construct)

    p = sub.add_parser("eval", parents=[common], help="Evaluate a task on a test set")
    _add_eval_flags(p)
    p.add_argument("--dump-pgm", action="store_true", help="Write observation/truth/reconstruction PGMs per grid")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="Sweep one sampler knob on a test set")
    _add_eval_flags(p)
    p.add_argument("--param", default="zeta", choices=["zeta", "snr", "corrector_steps"], help="Knob to sweep (default: zeta)")
    p.add_argument("--zetas", "--values", dest="values", nargs="+", help="Values, comma-separated or repeated")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_argument_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        if args.config is not None:
            set_config(load_config(args.config))
        logger.info("ckm %s", args.command, extra={"fields": {"seed": args.seed}})
        code = args.func(args)
        logger.info("ckm %s done", args.command)
        return code
    except CkmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, TypeError, FileNotFoundError, NotImplementedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    finally:
        if args.config is not None:
            set_config(None)


if __name__ == "__main__":
    sys.exit(main())
