"""
Test Setup Script
Verify that the environment can run the recommender pipeline
"""

import os
import sys

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))


def check_imports():
    """Check that all required packages can be imported"""
    print("Checking imports...")

    for package in ("numpy", "scipy", "pandas", "pydantic", "structlog", "dotenv"):
        try:
            __import__(package)
            print(f"✓ {package} imported successfully")
        except ImportError as e:
            print(f"✗ Failed to import {package}: {e}")
            return False

    return True


def check_configuration():
    """Check the environment settings"""
    print("\nChecking configuration...")

    try:
        from config import config

        config.validate()
        print(f"✓ LOG_LEVEL={config.LOG_LEVEL} LOG_FORMAT={config.LOG_FORMAT}")
        print(f"✓ RUNS_DIR={config.RUNS_DIR} DATA_DIR={config.DATA_DIR}")
        print(f"✓ DEFAULT_SEED={config.default_seed()} SWEEP_WORKERS={config.sweep_workers()}")
        return True

    except Exception as e:
        print(f"✗ Configuration error: {e}")
        return False


def check_modules():
    """Check that every pipeline stage loads"""
    print("\nChecking custom modules...")

    modules = [
        "interactions",
        "sequences",
        "synthworld",
        "diffkit",
        "sine_model",
        "objective",
        "metrics",
        "evaluator",
        "category_analysis",
        "training_log",
        "run_manager",
        "cli",
    ]
    for name in modules:
        try:
            __import__(name)
            print(f"✓ {name} module loaded")
        except Exception as e:
            print(f"✗ Failed to import {name}: {e}")
            return False

    return True


def test_imports():
    assert check_imports()


def test_configuration():
    assert check_configuration()


def test_modules():
    assert check_modules()


def main():
    """Run all checks"""
    print("=" * 60)
    print("SINE Recommender - Setup Verification")
    print("=" * 60)

    checks = [
        ("Imports", check_imports),
        ("Configuration", check_configuration),
        ("Custom Modules", check_modules),
    ]

    results = []

    for check_name, check_func in checks:
        try:
            result = check_func()
            results.append((check_name, result))
        except Exception as e:
            print(f"\n✗ {check_name} check failed with exception: {e}")
            results.append((check_name, False))

    print("\n" + "=" * 60)
    print("Check Results Summary")
    print("=" * 60)

    for check_name, result in results:
        status = "✓ PASS" if result else "✗ FAIL"
        print(f"{status} - {check_name}")

    all_passed = all(result for _, result in results)

    print("\n" + "=" * 60)
    if all_passed:
        print("✓ All checks passed! System is ready to use.")
        print("\nNext steps:")
        print("1. Generate data: python src/cli.py synth")
        print("2. Prepare it: python src/cli.py prepare --input runs/<synth run>/interactions.csv")
        print("3. Train: python src/cli.py train --dataset runs/<prepare run>/dataset.jsonl")
    else:
        print("✗ Some checks failed. Please fix the issues above.")
        print("\nCommon fixes:")
        print("1. Run: pip install -r requirements.txt")
        print("2. Check the values in your .env file against .env.example")
    print("=" * 60)

    return 0 if all_passed else 1


if __name__ == "__main__":
    sys.exit(main())
