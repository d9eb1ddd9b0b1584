"""Command-line tool: dataset generation, training, inference, and sweeps.

Every command is driven by a JSON config plus flags, writes its outputs
atomically, and drops a run manifest next to each primary output so the
run is reproducible from (config, seed) alone.

Exit codes: 0 success, 2 invalid configuration, 3 I/O or data-format
failure, 4 geometry mismatch, 5 corrupt or missing checkpoint.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .checkpoint import load_params
from .dataio import DatasetHeader, pack_record, read_dataset, unpack_record, write_dataset
from .diffusion import GuidanceConfig
from .errors import CheckpointError, ConfigError, DataFormatError, GeometryError
from .evaluation import SweepConfig, _cdm_estimate_batch, run_sweep
from .rng import derive
from .training import TrainConfig, generate_dataset, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_GEOMETRY = 4
EXIT_CHECKPOINT = 5
EXIT_INTERRUPT = 130


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).strftime(
        "%Y-%m-%dT%H:%M:%SZ")


def _read_config(path) -> tuple[dict, bytes]:
    """Read the raw config bytes (hashed as-is) and parse the JSON."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        obj = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config {path} is not valid UTF-8: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config {path} is not valid JSON: line {exc.lineno} "
            f"column {exc.colno}: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return obj, raw


def _atomic_write_text(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".manifest-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_manifest(out_path, *, command: str, config_bytes: bytes,
                   config: dict, master_seed: int, outputs: list,
                   started: str) -> str:
    """Write `<out>.manifest.json` describing the finished run.

    The config hash is the SHA-256 of the config file bytes exactly as
    read; the embedded config has every default materialized so the run
    is self-describing.
    """
    manifest = {
        "tool": "risdiff",
        "version": __version__,
        "command": command,
        "config_hash": "sha256:" + hashlib.sha256(config_bytes).hexdigest(),
        "master_seed": master_seed,
        "started_utc": started,
        "finished_utc": _utc_now(),
        "outputs": [str(p) for p in outputs],
        "config": config,
    }
    path = str(out_path) + ".manifest.json"
    _atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _train_config(args) -> tuple[TrainConfig, bytes]:
    raw_dict, raw_bytes = _read_config(args.config)
    if args.seed is not None:
        raw_dict["master_seed"] = args.seed
    return TrainConfig.from_dict(raw_dict), raw_bytes


def cmd_gen_data(args) -> int:
    started = _utc_now()
    cfg, raw = _train_config(args)
    header = generate_dataset(cfg, args.out)
    write_manifest(args.out, command="gen-data", config_bytes=raw,
                   config=cfg.to_dict(), master_seed=cfg.master_seed,
                   outputs=[args.out], started=started)
    print(f"wrote {header.sample_count} samples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    started = _utc_now()
    cfg, raw = _train_config(args)
    log_path = args.log if args.log is not None else str(args.out) + ".log.jsonl"

    def progress(epoch: int, mean_loss: float) -> None:
        print(f"epoch {epoch}/{cfg.epochs} mean_loss {mean_loss:.6f}", flush=True)

    history = train(cfg, args.data, args.out, log_path=log_path,
                    resume_from=args.resume, progress=progress)
    write_manifest(args.out, command="train", config_bytes=raw,
                   config=cfg.to_dict(), master_seed=cfg.master_seed,
                   outputs=[args.out, log_path], started=started)
    print(f"trained {len(history)} epochs; checkpoint at {args.out}")
    return EXIT_OK


def cmd_infer(args) -> int:
    started = _utc_now()
    ckpt = load_params(args.checkpoint)
    header, records = read_dataset(args.input)
    geom = ckpt.geometry
    if (header.n, header.m1, header.m2) != (geom["n"], geom["m1"], geom["m2"]):
        raise GeometryError(
            f"input geometry (n={header.n}, m1={header.m1}, m2={header.m2}) "
            f"does not match checkpoint (n={geom['n']}, m1={geom['m1']}, "
            f"m2={geom['m2']})")
    lambda2 = args.lambda2 if args.lambda2 is not None else float(
        ckpt.meta.get("lambda2", 0.7))
    cfg = GuidanceConfig(lambda2=lambda2)
    n, m2 = header.n, header.m2
    count = records.shape[0]
    partials = np.empty((count, n, m2), dtype=np.complex128)
    indicators = np.empty((count, m2), dtype=np.float64)
    pilots = np.empty((count, n), dtype=np.complex128)
    snrs = np.empty(count, dtype=np.float64)
    for i in range(count):
        block, indicators[i], pilots[i], snrs[i] = unpack_record(
            records[i], n, m2)
        # The block slot may carry the full matrix (dataset samples); only
        # the observed columns condition the model.
        partials[i] = block * indicators[i][None, :]
    estimates = _cdm_estimate_batch(
        ckpt, partials, indicators, pilots, cfg,
        derive(args.seed, "infer"),
        data_consistency=not args.no_projection,
    )
    out_records = np.stack([
        pack_record(estimates[i], indicators[i], pilots[i], snrs[i])
        for i in range(count)
    ])
    out_header = DatasetHeader(n=n, m1=header.m1, m2=header.m2,
                               spacing=header.spacing, seed=args.seed,
                               sample_count=count)
    write_dataset(args.out, out_header, out_records)
    config_bytes = json.dumps({
        "checkpoint": str(args.checkpoint), "input": str(args.input),
        "lambda2": lambda2, "data_consistency": not args.no_projection,
        "seed": args.seed,
    }, sort_keys=True).encode("utf-8")
    write_manifest(args.out, command="infer", config_bytes=config_bytes,
                   config=json.loads(config_bytes), master_seed=args.seed,
                   outputs=[args.out], started=started)
    print(f"wrote {count} reconstructions to {args.out}")
    return EXIT_OK


def _collect_checkpoints(directory) -> dict:
    """Map geometry -> checkpoint for every loadable file in the directory."""
    found: dict = {}
    try:
        names = sorted(os.listdir(directory))
    except OSError:
        raise
    for name in names:
        path = os.path.join(directory, name)
        if not os.path.isfile(path):
            continue
        try:
            ckpt = load_params(path)
        except (CheckpointError, OSError) as exc:
            print(f"warning: skipping {path}: {exc}", file=sys.stderr)
            continue
        key = (ckpt.geometry["n"], ckpt.geometry["m1"], ckpt.geometry["m2"])
        if key in found:
            print(f"warning: duplicate checkpoint for geometry {key}; "
                  f"keeping the first one", file=sys.stderr)
            continue
        found[key] = ckpt
    return found


def cmd_sweep(args) -> int:
    started = _utc_now()
    raw_dict, raw_bytes = _read_config(args.config)
    if args.seed is not None:
        raw_dict["master_seed"] = args.seed
    if args.methods is not None:
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
        if not methods:
            raise ConfigError("--methods must name at least one method")
        raw_dict["methods"] = methods
    sweep = SweepConfig.from_dict(raw_dict)
    needs_model = any(m in ("cdm", "cdm_raw") for m in sweep.methods)
    checkpoints = {}
    if needs_model and args.checkpoints is not None:
        checkpoints = _collect_checkpoints(args.checkpoints)
    records = run_sweep(sweep, checkpoints, args.out, threads=args.threads)
    write_manifest(args.out, command="sweep", config_bytes=raw_bytes,
                   config=sweep.to_dict(), master_seed=sweep.master_seed,
                   outputs=[args.out], started=started)
    print(f"wrote {len(records)} records to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="risdiff",
        description="Diffusion-based cascaded-channel estimation toolkit: "
                    "dataset generation, training, inference, and NMSE sweeps.",
    )
    parser.add_argument("--version", action="version",
                        version=f"risdiff {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a training dataset")
    p.add_argument("--config", required=True, help="training JSON config")
    p.add_argument("--out", required=True, help="output dataset path")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config's master seed")
    p.add_argument("--threads", type=int, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the denoiser on a dataset")
    p.add_argument("--config", required=True, help="training JSON config")
    p.add_argument("--data", required=True, help="input dataset path")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--log", default=None,
                   help="epoch-loss JSONL path (default: <out>.log.jsonl)")
    p.add_argument("--resume", default=None,
                   help="checkpoint to continue from")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config's master seed")
    p.add_argument("--threads", type=int, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="reconstruct blocks from a sample file")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p.add_argument("--input", required=True,
                   help="dataset-format file of samples to reconstruct")
    p.add_argument("--out", required=True,
                   help="output reconstruction file (dataset format)")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for the reverse chains (default 0)")
    p.add_argument("--lambda2", type=float, default=None,
                   help="guidance weight (default: the checkpoint's)")
    p.add_argument("--no-projection", action="store_true",
                   help="skip overwriting observed columns with known values")
    p.add_argument("--threads", type=int, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("sweep", help="run the NMSE evaluation grid")
    p.add_argument("--config", required=True, help="sweep JSON config")
    p.add_argument("--checkpoints", default=None,
                   help="directory of trained checkpoints (for cdm methods)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--methods", default=None,
                   help="comma-separated override, e.g. zero_fill,lmmse")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config's master seed")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for sweep cells (default: cores); "
                        "results do not depend on this")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", None) is None:
        args.threads = os.cpu_count() or 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GeometryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_INTERRUPT


if __name__ == "__main__":
    sys.exit(main())
