"""Command-line entry point: ``romda <stage> [--config FILE] [--out DIR] [--a.b=value ...]``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from romda.errors import ConfigError, ContractError, RomdaError
from romda.pipeline.config import PipelineConfig, apply_overrides
from romda.pipeline.manifest import RunManifest
from romda.pipeline.stages import COMMANDS, STAGES, MissingInput

log = logging.getLogger("romda")

OUTPUT_ENV = "ROMDA_OUTPUT"
DEFAULT_OUTPUT = "romda_run"
EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="romda",
        description="Train, evaluate and adapt the probabilistic reduced-order model.",
        epilog="Any remaining --section.key=value flag overrides the matching config entry.",
    )
    p.add_argument("stage", choices=STAGES + ("all",))
    p.add_argument("--config", type=Path, help="JSON config file (defaults are built in)")
    p.add_argument("--out", type=Path,
                   help=f"run directory (default: ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(config_path, overrides) -> PipelineConfig:
    doc = PipelineConfig().to_dict()
    if config_path is not None:
        try:
            doc = PipelineConfig.load(config_path).to_dict()
        except OSError as exc:
            raise ConfigError("--config", str(exc)) from None
    return PipelineConfig.from_dict(apply_overrides(doc, overrides))


def run_stages(cfg: PipelineConfig, run_dir, stages) -> RunManifest:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(cfg.dumps())
    manifest = RunManifest.open(run_dir, cfg.digest())
    for stage in stages:
        log.info("stage %s", stage)
        t0 = time.perf_counter()
        artifacts = COMMANDS[stage](cfg, run_dir)
        manifest.record(stage, artifacts, time.perf_counter() - t0, run_dir)
        manifest.save(run_dir)
    return manifest


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    bad = [e for e in extra if not (e.startswith("--") and "=" in e)]
    if bad:
        parser.print_usage(sys.stderr)
        print(f"romda: error: unrecognised arguments: {' '.join(bad)}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = resolve_config(args.config, extra)
    except ConfigError as exc:
        print(f"romda: config error at {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run_dir = args.out or Path(os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT))
    stages = STAGES if args.stage == "all" else (args.stage,)
    try:
        manifest = run_stages(cfg, run_dir, stages)
    except MissingInput as exc:
        print(f"romda: missing input: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (RomdaError, OSError, ContractError) as exc:
        log.error("%s failed: %s", args.stage, exc)
        return EXIT_RUNTIME
    print(json.dumps({s: manifest.stages[s]["seconds"] for s in stages}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
