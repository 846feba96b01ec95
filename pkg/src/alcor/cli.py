"""Command-line entry point.

Subcommands: validate, synth, run, metrics, cost, export. ``run`` accepts a
TOML or JSON config file mirroring its flags; explicit flags win over the
file. Exit codes: 0 success, 1 runtime error, 2 usage or parse error.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

from . import synth as synth_mod
from . import tensor_io
from .acquisition import AcquisitionKind
from .loop import CorrectionRun, LoopConfig, OracleConfig, load_dataset, run_simulation
from .pool import ResidualPolicy

RUN_DEFAULTS = {
    "mode": "simulate",
    "kind": "sim",
    "batch_size": 64,
    "rounds": 4,
    "epsilon": 0.0,
    "predictor": "builtin",
    "external_command": None,
    "error_rate": 0.0,
    "seed": 0,
    "residual": "components",
    "expand_confirmed": True,
    "listen": "127.0.0.1:8000",
    "ui_dir": None,
    "lease_seconds": 120.0,
    "manifest": None,
    "out": None,
    "resume": False,
}


def _load_config_file(path: Path) -> dict:
    text = path.read_bytes()
    if path.suffix == ".json":
        return json.loads(text.decode("utf-8"))
    try:
        import tomllib
    except ModuleNotFoundError:  # python < 3.11
        import tomli as tomllib
    return tomllib.loads(text.decode("utf-8"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alcor",
                                     description="Active label correction toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a dataset manifest and its tensors")
    v.add_argument("manifest", help="path to manifest.json")

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--images", type=int, default=10, help="number of images (default 10)")
    s.add_argument("--height", type=int, default=64, help="image height (default 64)")
    s.add_argument("--width", type=int, default=64, help="image width (default 64)")
    s.add_argument("--classes", type=int, default=4, help="number of classes (default 4)")
    s.add_argument("--noise", type=float, default=0.4,
                   help="fraction of superpixels flipped to a wrong class (default 0.4)")
    s.add_argument("--grid", type=int, default=8, help="superpixel grid size (default 8)")
    s.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")

    r = sub.add_parser("run", help="run the correction loop")
    r.add_argument("--config", help="TOML or JSON file mirroring these flags")
    r.add_argument("--manifest", help="dataset manifest path")
    r.add_argument("--out", help="run output directory")
    r.add_argument("--mode", choices=["simulate", "serve"],
                   help="simulate against the oracle or serve annotators (default simulate)")
    r.add_argument("--kind", choices=[k.value for k in AcquisitionKind],
                   help="acquisition function (default sim)")
    r.add_argument("-B", "--batch-size", type=int, dest="batch_size",
                   help="queries per round (default 64)")
    r.add_argument("-T", "--rounds", type=int, dest="rounds",
                   help="number of rounds (default 4)")
    r.add_argument("--epsilon", type=float,
                   help="similarity threshold for label expansion in [0,1] (default 0)")
    r.add_argument("--predictor", choices=["builtin", "external"],
                   help="prediction refresh backend (default builtin)")
    r.add_argument("--external-command", dest="external_command",
                   help="command invoked as '<command> <round_dir>' for external predictions")
    r.add_argument("--error-rate", type=float, dest="error_rate",
                   help="oracle wrong-answer probability (default 0)")
    r.add_argument("--seed", type=int, help="seed for oracle and random acquisition (default 0)")
    r.add_argument("--residual", choices=[p.value for p in ResidualPolicy],
                   help="policy for pixels outside every superpixel (default components)")
    r.add_argument("--expand-confirmed", dest="expand_confirmed",
                   action=argparse.BooleanOptionalAction, default=None,
                   help="expand confirmed labels across their segment (default on)")
    r.add_argument("--listen", help="serve-mode address host:port (default 127.0.0.1:8000)")
    r.add_argument("--ui-dir", dest="ui_dir", help="static frontend directory to serve at /")
    r.add_argument("--lease-seconds", type=float, dest="lease_seconds",
                   help="query lease duration in serve mode (default 120)")
    r.add_argument("--resume", action="store_true", default=None,
                   help="continue from the latest checkpoint in --out")

    m = sub.add_parser("metrics", help="re-emit metrics for a finished run")
    m.add_argument("--run-dir", required=True, dest="run_dir")

    c = sub.add_parser("cost", help="print a CSV cost table over (L, p)")
    c.add_argument("--l-values", dest="l_values", default="2,5,10,19,20,50,100,256",
                   help="comma-separated class counts (default 2,5,10,19,20,50,100,256)")
    c.add_argument("--p-values", dest="p_values",
                   default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1",
                   help="comma-separated confirmation probabilities (default 0..1 by 0.1)")

    e = sub.add_parser("export", help="copy a run's corrected dataset elsewhere")
    e.add_argument("--run-dir", required=True, dest="run_dir")
    e.add_argument("--out", required=True)

    return parser


def cmd_validate(args: argparse.Namespace) -> int:
    path = Path(args.manifest)
    if not path.exists():
        print(f"manifest not found: {path}", file=sys.stderr)
        return 2
    try:
        manifest = tensor_io.load_manifest(path)
    except (tensor_io.ManifestError, tensor_io.IoFailure) as exc:
        print(f"cannot parse manifest: {exc}", file=sys.stderr)
        return 2
    report = tensor_io.validate_manifest(manifest)
    print(json.dumps(report.as_dict(), indent=2, sort_keys=True))
    return 0 if report.clean else 1


def cmd_synth(args: argparse.Namespace) -> int:
    spec = synth_mod.SynthSpec(
        images=args.images, height=args.height, width=args.width,
        classes=args.classes, noise=args.noise, grid=args.grid, seed=args.seed)
    manifest_path = synth_mod.generate_dataset(args.out, spec)
    print(str(manifest_path))
    return 0


def _resolve_run_config(args: argparse.Namespace) -> dict:
    merged = dict(RUN_DEFAULTS)
    if args.config:
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise FileNotFoundError(f"config file not found: {cfg_path}")
        file_cfg = _load_config_file(cfg_path)
        unknown = set(file_cfg) - set(RUN_DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_cfg)
    for key in RUN_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    if not merged["manifest"]:
        raise ValueError("a manifest is required (--manifest or config file)")
    if not merged["out"]:
        raise ValueError("an output directory is required (--out or config file)")
    return merged


def cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = _resolve_run_config(args)
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(str(exc), file=sys.stderr)
        return 2

    manifest = tensor_io.load_manifest(cfg["manifest"])
    dataset = load_dataset(manifest, ResidualPolicy(cfg["residual"]))
    loop_cfg = LoopConfig(
        batch_size=cfg["batch_size"],
        rounds=cfg["rounds"],
        kind=AcquisitionKind(cfg["kind"]),
        epsilon=cfg["epsilon"],
        expand_confirmed=cfg["expand_confirmed"],
        predictor=cfg["predictor"],
        external_command=cfg["external_command"],
        oracle=OracleConfig(error_rate=cfg["error_rate"], seed=cfg["seed"]),
        seed=cfg["seed"],
        residual=ResidualPolicy(cfg["residual"]),
    )

    if cfg["mode"] == "simulate":
        run_simulation(dataset, loop_cfg, cfg["out"], resume=bool(cfg["resume"]))
        print(f"run complete: {cfg['out']}")
        return 0

    import socket

    import uvicorn

    from .service import InteractiveSession, create_app

    host, _, port = cfg["listen"].rpartition(":")
    host = host or "127.0.0.1"
    try:
        probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind((host, int(port)))
        probe.close()
    except OSError as exc:
        print(f"address unavailable: {cfg['listen']} ({exc})", file=sys.stderr)
        return 1

    if cfg["resume"]:
        run = CorrectionRun.resume(dataset, loop_cfg, cfg["out"])
        session = InteractiveSession(run=run, session_id=Path(cfg["out"]).name,
                                     lease_seconds=cfg["lease_seconds"])
        session._issue_round()
    else:
        run = CorrectionRun(dataset, loop_cfg, cfg["out"])
        session = InteractiveSession.start(run, Path(cfg["out"]).name,
                                           lease_seconds=cfg["lease_seconds"])
    app = create_app(session, ui_dir=cfg["ui_dir"])
    try:
        uvicorn.run(app, host=host, port=int(port), log_level="warning")
    except (OSError, SystemExit) as exc:
        print(f"address unavailable: {cfg['listen']} ({exc})", file=sys.stderr)
        return 1
    return 0


def cmd_metrics(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    rounds = sorted(run_dir.glob("rounds/round_*/metrics.json"))
    if not rounds:
        print(f"no round metrics under {run_dir}", file=sys.stderr)
        return 1
    combined = [json.loads(p.read_text(encoding="utf-8")) for p in rounds]
    print(json.dumps(combined, indent=2, sort_keys=True))
    csv_path = run_dir / "metrics.csv"
    if csv_path.exists():
        print(f"per-round CSV: {csv_path}", file=sys.stderr)
    return 0


def cmd_cost(args: argparse.Namespace) -> int:
    from .cost import cost_table

    l_values = [int(v) for v in args.l_values.split(",") if v]
    p_values = [float(v) for v in args.p_values.split(",") if v]
    rows = cost_table(l_values, p_values)
    print("L,p,classification_bits,correction_bits,ratio,saving_rate")
    for row in rows:
        print(f"{row['L']},{row['p']:g},{row['classification_bits']:.6f},"
              f"{row['correction_bits']:.6f},{row['ratio']:.6f},{row['saving_rate']:.6f}")
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    final_dir = Path(args.run_dir) / "final"
    if not final_dir.is_dir():
        print(f"no final export under {args.run_dir}; did the run finish?", file=sys.stderr)
        return 1
    out = Path(args.out)
    shutil.copytree(final_dir, out, dirs_exist_ok=True)
    print(str(out))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "validate": cmd_validate,
        "synth": cmd_synth,
        "run": cmd_run,
        "metrics": cmd_metrics,
        "cost": cmd_cost,
        "export": cmd_export,
    }
    try:
        return handlers[args.command](args)
    except Exception as exc:  # uniform runtime-error contract
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
