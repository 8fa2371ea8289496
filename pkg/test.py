#!/usr/bin/env python3
"""
Diagnostic script for a Weaves checkout: config, shipped tapestries, the
HTTP monitor app and the results ledger
"""
import os
import sys
import traceback
from pathlib import Path

sys.path.insert(0, ".")


def check_config_loading():
    """Check that instance/config.py loads"""
    print("1. Checking config loading...")
    try:
        from weaves import load_config
        config = load_config()
        print("   ✓ Config loaded successfully")
        print(f"   SCHEDULER_POLICY: {config['SCHEDULER_POLICY']}")
        print(f"   RESULTS_DATABASE_URL: {config['RESULTS_DATABASE_URL']}")
        return config
    except Exception as e:
        print(f"   ❌ Config loading failed: {e}")
        traceback.print_exc()
        return None


def check_tapestries():
    """Parse and instantiate every shipped tapestry"""
    print("2. Checking shipped tapestries...")
    from weaves.errors import PlanError
    from weaves.tapestry_config import instantiate, load_tapestry

    ok = True
    for path in sorted(Path("tapestries").glob("*.tap")):
        try:
            handle = instantiate(load_tapestry(path), filename=str(path))
            classes = handle.runtime.equivalence_classes()
            print(f"   ✓ {path}: {len(handle.runtime.strings)} strings, {len(classes.classes)} classes")
        except PlanError as e:
            print(f"   ❌ {path}\n{e.render()}")
            ok = False
    return ok


def check_monitor_app():
    """Create the HTTP monitor app and hit /health"""
    print("3. Checking HTTP monitor...")
    try:
        from weaves import create_app
        from weaves.monitor import Monitor
        from weaves.tapestry_config import instantiate, load_tapestry

        handle = instantiate(load_tapestry("tapestries/collab.tap"))
        app = create_app(Monitor(handle))
        response = app.test_client().get("/health")
        print(f"   ✓ /health -> {response.status_code} {response.get_json()}")
        return True
    except Exception as e:
        print(f"   ❌ Monitor app failed: {e}")
        traceback.print_exc()
        return False


def check_ledger(config):
    """Open the results ledger and list its tables"""
    print("4. Checking results ledger...")
    try:
        from sqlalchemy import inspect
        from weaves.models import ResultsLedger

        ledger = ResultsLedger(config["RESULTS_DATABASE_URL"])
        print(f"   ✓ Tables: {inspect(ledger.engine).get_table_names()}")
        print(f"   Recent timing rows: {len(ledger.recent())}")
        return True
    except Exception as e:
        print(f"   ❌ Ledger check failed: {e}")
        traceback.print_exc()
        return False


def check_environment_variables():
    print("5. Checking environment variables...")
    env_file = Path(".env")
    if env_file.exists():
        print(f"   ✓ .env file exists: {env_file.absolute()}")
    else:
        print("   ⚠️  No .env file found")
    for var in ['WEAVES_POLICY', 'WEAVES_SEED', 'WEAVES_MONITOR', 'WEAVES_RESULTS_DATABASE_URL']:
        print(f"     {var}={os.getenv(var, 'NOT SET')}")


def main():
    print("Weaves Diagnostic Script")
    print("=" * 50)

    check_environment_variables()
    print()

    config = check_config_loading()
    if config is None:
        print("❌ Cannot proceed - config loading failed")
        return
    print()

    check_tapestries()
    print()
    check_monitor_app()
    print()
    check_ledger(config)

    print("\n" + "=" * 50)
    print("Diagnostic complete!")


if __name__ == "__main__":
    main()
