#!/usr/bin/env python3
"""
Bootstrap a Weaves checkout: directories, dependencies, .env, the results
ledger, and one shipped tapestry run end to end.

    python setup.py            # everything
    python setup.py --no-install
"""

import argparse
import logging
import os
import subprocess
import sys
from pathlib import Path

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger("weaves.setup")

ROOT = Path(__file__).resolve().parent
MIN_PYTHON = (3, 9)

ENV_TEMPLATE = """# Scheduler
WEAVES_POLICY=cooperative
WEAVES_SEED=42

# Monitor: stdio, a socket path, or http:127.0.0.1:<port>
# WEAVES_MONITOR=http:127.0.0.1:5055

# Benchmarks
WEAVES_BENCH_TARGET_MS=2000
WEAVES_BENCH_REPS=3

# Results ledger
WEAVES_RESULTS_DATABASE_URL=sqlite:///instance/weaves-results.db

WEAVES_LOG_LEVEL=INFO
"""


def run_step_command(args, label):
    """Run a subprocess from the repo root; False when it exits non-zero."""
    logger.info(f"{label}: {' '.join(args)}")
    try:
        completed = subprocess.run(args, cwd=ROOT, check=True, capture_output=True, text=True)
    except subprocess.CalledProcessError as e:
        logger.error(f"{label} failed with exit status {e.returncode}")
        for line in (e.stderr or "").strip().splitlines()[-10:]:
            logger.error(f"  {line}")
        return False
    for line in completed.stdout.strip().splitlines()[-5:]:
        logger.info(f"  {line}")
    return True


def check_interpreter():
    if sys.version_info < MIN_PYTHON:
        logger.error(f"Weaves needs Python {'.'.join(map(str, MIN_PYTHON))}+, found {sys.version.split()[0]}")
        return False
    try:
        import greenlet  # noqa: F401
    except ImportError:
        logger.info("greenlet not importable yet; it will be installed with the requirements")
    logger.info(f"Python {sys.version.split()[0]} ✓")
    return True


def make_directories():
    for name in ("logs", "instance", "results"):
        (ROOT / name).mkdir(exist_ok=True)
    logger.info("logs/, instance/ and results/ present ✓")
    return True


def install_requirements():
    return (run_step_command([sys.executable, "-m", "pip", "install", "--upgrade", "pip"], "pip upgrade")
            and run_step_command([sys.executable, "-m", "pip", "install", "-r", "requirements.txt"], "requirements"))


def write_env_file():
    env_file = ROOT / ".env"
    if env_file.exists():
        logger.info(".env kept as is ✓")
    else:
        env_file.write_text(ENV_TEMPLATE)
        logger.info("Wrote default .env ✓")
    return True


def create_results_ledger():
    sys.path.insert(0, str(ROOT))
    os.chdir(ROOT)
    try:
        from weaves import load_config
        from weaves.models import ResultsLedger

        ledger = ResultsLedger(load_config()["RESULTS_DATABASE_URL"])
    except Exception as e:
        logger.error(f"Could not open the results ledger: {e}")
        return False
    logger.info(f"Results ledger at {ledger.url} ✓")
    return True


def smoke_run():
    return run_step_command([sys.executable, "run.py", "demo", "sullivan", "--tapestry", "tapestries/sullivan.tap"],
                            "smoke run")


STEPS = [
    ("interpreter", check_interpreter),
    ("directories", make_directories),
    ("requirements", install_requirements),
    ("environment", write_env_file),
    ("ledger", create_results_ledger),
    ("smoke run", smoke_run),
]


def print_usage_hints():
    print("\n" + "=" * 60)
    print("Weaves is ready.")
    print("=" * 60)
    print("  python run.py host --tapestry tapestries/pairs.tap --monitor http:127.0.0.1:5055 --keep-alive")
    print("  curl http://127.0.0.1:5055/strings")
    print("  python run.py demo sweep --n-vms 4")
    print("  python run.py demo collab --forcing sine --u1 1")
    print("  python run.py bench flows --model weaves --n 16 --target-ms 2000 --reps 3")
    print("  pytest                      (WEAVES_SLOW_TESTS=1 for the timing checks)")
    print("\nSettings live in instance/config.py; .env overrides them.")


def main(argv=None):
    parser = argparse.ArgumentParser(description="Bootstrap a Weaves checkout")
    parser.add_argument("--no-install", action="store_true", help="skip pip")
    args = parser.parse_args(argv)

    for name, step in STEPS:
        if name == "requirements" and args.no_install:
            logger.info("requirements skipped (--no-install)")
            continue
        if not step():
            logger.error(f"Setup stopped at step '{name}'")
            return 1
    print_usage_hints()
    return 0


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        logger.info("Setup interrupted")
        sys.exit(1)
