"""
Main entry point for TVP-SIRD estimation and forecasting
"""
import argparse
import logging
import sys

from rich.console import Console
from rich.logging import RichHandler

from src.cli_io import COMMANDS, load_run_config, run, write_error_summary
from src.errors import TvpSirdError

console = Console()


def setup_logging(verbose: bool = False):
    """Route library logging through rich"""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, rich_tracebacks=True, show_path=False)],
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Score-driven SIRD models: simulate, fit, forecast and evaluate")
    parser.add_argument("command", choices=COMMANDS, help="What to run")
    parser.add_argument("--config", type=str, default="config/config.yaml", help="Config file path")
    parser.add_argument("--seed", type=int, default=None, help="Random seed (overrides the config)")
    parser.add_argument("--model", type=str, choices=["fp", "tvp", "tvp-beta", "mf", "factor"], default=None,
                        help="Model variant (overrides the config)")
    parser.add_argument("--out", type=str, default=None, help="Output directory (overrides the config)")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    return parser


def main(argv=None) -> int:
    """Main execution flow"""
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)

    console.rule("[bold]TVP-SIRD")
    console.print(f"\n📄 Config: {args.config}")
    console.print(f"⚙️  Command: {args.command}")

    out_dir = args.out
    try:
        # Step 1: configuration
        console.rule("STEP 1: Configuration")
        config = load_run_config(args.config, {
            "seed": args.seed, "model": args.model, "output.directory": args.out,
        })
        out_dir = config.output.directory
        console.print(f"✅ Model: {config.model.value}   Seed: {config.seed}   Output: {out_dir}")

        # Step 2: run
        console.rule(f"STEP 2: {args.command.capitalize()}")
        summary = run(config, args.command)
    except TvpSirdError as e:
        console.print(f"\n❌ {type(e).__name__}: {e}")
        if out_dir:
            write_error_summary(out_dir, args.command, e)
        return e.exit_code
    except Exception as e:
        logging.getLogger(__name__).exception("Unexpected failure")
        console.print(f"\n❌ Unexpected {type(e).__name__}: {e}")
        if out_dir:
            write_error_summary(out_dir, args.command, e)
        return TvpSirdError.exit_code

    console.rule("✅ COMPLETE")
    console.print(f"\n⏱️  Runtime: {summary['runtime_seconds']:.1f}s")
    if summary.get("acceptance"):
        rates = ", ".join(f"{name}={rate:.2f}" for name, rate in summary["acceptance"].items())
        console.print(f"📊 Acceptance: {rates}")
    if summary.get("loglik_at_median") is not None:
        console.print(f"📈 Log-likelihood at posterior median: {summary['loglik_at_median']:.3f}")
    if summary.get("diagnostics"):
        console.print(f"⚠️  Diagnostics: {summary['diagnostics']}")
    console.print(f"📁 Output directory: {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
