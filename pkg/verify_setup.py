#!/usr/bin/env python3
"""
verify_setup.py - Pre-flight checks before long training runs or deploying the API
Run this locally to catch configuration and numerics issues early.
"""

import os
import sys

REQUIRED_FILES = [
    "api.py",
    "config.py",
    "harness.py",
    "sac.py",
    "neural.py",
    "requirements.txt",
]


def check_files():
    """Check that all required files exist"""
    missing = [file for file in REQUIRED_FILES if not os.path.exists(file)]
    if missing:
        print(f"❌ Missing files: {', '.join(missing)}")
        return False

    print("✅ All required files present")
    return True


def check_imports():
    """Check that all imports work"""
    try:
        import dotenv  # noqa: F401
        import fastapi  # noqa: F401
        import numpy  # noqa: F401
        import pydantic  # noqa: F401
        import uvicorn  # noqa: F401
        print("✅ All Python imports successful")
        return True
    except ImportError as e:
        print(f"❌ Import error: {e}")
        print("   Run: pip install -r requirements.txt")
        return False


def check_config():
    """Check that the experiment configuration parses and is consistent"""
    from pydantic import ValidationError

    from config import DEFAULT_CONFIG_PATH, load_experiment_spec

    try:
        spec = load_experiment_spec()
    except (ValidationError, OSError, ValueError) as e:
        print(f"❌ Config {DEFAULT_CONFIG_PATH} is invalid: {e}")
        return False

    sc = spec.scenario
    if abs(sc.inter_ant_distance - 1.5 * sc.wavelength) > 1e-12:
        print(f"⚠️  Warning: antenna spacing {sc.inter_ant_distance} m is not 3λ/2 = {1.5 * sc.wavelength} m")
    if spec.sac.steps and spec.sac.steps <= spec.sac.batch_size:
        print("⚠️  Warning: training ends before the first full batch is collected")

    print(f"✅ Config loaded: M={sc.num_sats}, N={sc.ants_per_sat}, K={sc.num_users}, seed={spec.seed}")
    return True


def check_gradients():
    """Run a quick finite-difference gradient check"""
    from harness import GRADCHECK_TOLERANCE, run_gradcheck

    network_error, actor_error = run_gradcheck(seed=0, networks=5)
    if max(network_error, actor_error) > GRADCHECK_TOLERANCE:
        print(f"❌ Gradient check failed: networks {network_error:.3e}, actor loss {actor_error:.3e}")
        return False

    print(f"✅ Gradients match finite differences (max relative error {max(network_error, actor_error):.1e})")
    return True


def check_api_file():
    """Check api.py for common issues"""
    try:
        with open("api.py", "r") as f:
            content = f.read()
    except FileNotFoundError:
        print("❌ api.py not found")
        return False

    if "app = FastAPI" not in content:
        print("❌ api.py doesn't define FastAPI app")
        return False
    if '@app.get("/health")' not in content:
        print("⚠️  Warning: No /health endpoint found")

    print("✅ api.py looks good")
    return True


def main():
    """Run all checks"""
    print("=" * 60)
    print("🔍 Verifying Precoding Setup")
    print("=" * 60)

    checks = [
        ("File structure", check_files),
        ("Python imports", check_imports),
        ("Experiment config", check_config),
        ("Gradients", check_gradients),
        ("API file", check_api_file),
    ]

    results = []
    for name, check_func in checks:
        print(f"\n📋 Checking: {name}")
        print("-" * 60)
        results.append(check_func())
        if name == "Python imports" and not results[-1]:
            break

    print("\n" + "=" * 60)
    if all(results):
        print("✅ All checks passed! Ready to train.")
        print("\nNext steps:")
        print("1. python harness.py train --preset SAC1 --out runs/sac1.npz")
        print("2. python harness.py sweep-distance --checkpoint SAC1=runs/sac1.npz")
        print("3. python harness.py serve")
        return 0
    else:
        print("❌ Some checks failed. Fix the issues above before training.")
        return 1


if __name__ == "__main__":
    sys.exit(main())
