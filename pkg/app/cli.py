"""
besfs command-line driver

    besfs run <script> [--backend memory|posix:<dir>] [--mode benign|adv|unprotected]
                       [--adv-config <file>] [--seed N] [--strict-abort] [-o report.json]
    besfs gen --seed N --len K [-o <script>]
    besfs campaign [--config <file>] [-o <dir>]
    besfs serve [--host H] [--port P]

exit codes: 0 clean, 2 violation detected, 1 harness error or failed assertion
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional

import structlog
from pydantic import ValidationError

from app.config import configure_logging, settings
from app.services.adversary import AdversaryConfig
from app.services.campaign import CampaignConfig, run_campaign, table
from app.services.generator import generate
from app.services.harness import EXIT_FAILED, HarnessError, RunMode, human_summary, run
from app.services.pagestore import SealingKey
from app.services.script import ScriptError, parse_script, render_script


logger = structlog.get_logger()


def _key() -> Optional[SealingKey]:
    if settings.SEALING_KEY is None:
        return None
    return SealingKey.from_hex(settings.SEALING_KEY.get_secret_value())


def cmd_run(args: argparse.Namespace) -> int:
    try:
        script = parse_script(Path(args.script).read_text(encoding="utf-8"))
    except OSError as e:
        print(f"error: cannot read script: {e}", file=sys.stderr)
        return EXIT_FAILED
    except ScriptError as e:
        print(f"error: {args.script}: {e}", file=sys.stderr)
        return EXIT_FAILED

    adversary = None
    if args.adv_config:
        try:
            adversary = AdversaryConfig.model_validate_json(Path(args.adv_config).read_text(encoding="utf-8"))
        except (OSError, ValidationError) as e:
            print(f"error: bad adversary config: {e}", file=sys.stderr)
            return EXIT_FAILED

    try:
        report = run(
            script,
            backend_spec=f"posix:{settings.STORE_ROOT}" if args.backend == "posix" else args.backend,
            mode=RunMode(args.mode),
            adversary=adversary,
            seed=args.seed,
            strict_abort=args.strict_abort,
            key=_key(),
            capacity=settings.PAGE_POOL_CAPACITY,
            mmap_base=settings.MMAP_BASE,
            check_good=settings.CHECK_GOOD_STATE,
        )
    except HarnessError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILED

    if args.output:
        Path(args.output).write_text(report.model_dump_json(indent=2), encoding="utf-8")
    print(human_summary(report))
    return report.summary.exit_code


def cmd_gen(args: argparse.Namespace) -> int:
    try:
        script = generate(args.seed, args.len, invalid_fraction=args.invalid_fraction,
                          capacity=settings.PAGE_POOL_CAPACITY)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILED
    text = render_script(script, header=f"seed={args.seed} length={args.len}")
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_campaign(args: argparse.Namespace) -> int:
    try:
        if args.config:
            config = CampaignConfig.model_validate_json(Path(args.config).read_text(encoding="utf-8"))
        else:
            config = CampaignConfig(
                seed=settings.DEFAULT_SEED,
                scripts=settings.CORPUS_SCRIPTS,
                length=settings.CORPUS_LENGTH,
                invalid_fraction=settings.INVALID_FRACTION,
                capacity=settings.PAGE_POOL_CAPACITY,
            )
    except (OSError, ValidationError) as e:
        print(f"error: bad campaign config: {e}", file=sys.stderr)
        return EXIT_FAILED

    report = run_campaign(config)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "campaign.json").write_text(report.model_dump_json(indent=2), encoding="utf-8")
    logger.info("campaign report written", path=str(out / "campaign.json"))
    print(table(report))
    return 0 if report.accepted else EXIT_FAILED


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("app.main:app", host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="besfs", description="filesystem integrity monitor harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a workload script")
    p.add_argument("script")
    p.add_argument("--backend", default="memory", help="memory, posix (STORE_ROOT) or posix:<dir>")
    p.add_argument("--mode", default="benign", choices=[mode.value for mode in RunMode])
    p.add_argument("--adv-config", help="adversary config (json)")
    p.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
    p.add_argument("--strict-abort", action="store_true", default=settings.STRICT_ABORT)
    p.add_argument("-o", "--output", help="write the json report here")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gen", help="generate a workload script")
    p.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
    p.add_argument("--len", type=int, default=settings.CORPUS_LENGTH)
    p.add_argument("--invalid-fraction", type=float, default=settings.INVALID_FRACTION)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("campaign", help="differential fault-injection campaign")
    p.add_argument("--config", help="campaign config (json)")
    p.add_argument("-o", "--output", default="campaign-out")
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("serve", help="run the http api")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging(settings.LOG_LEVEL)
    args = build_parser().parse_args(argv)
    return args.func(args)
