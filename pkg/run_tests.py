#!/usr/bin/env python3
"""
Test runner for attend_affect.

Usage:
    python run_tests.py                 # Run all tests except the slow learnability run
    python run_tests.py unit            # Run only unit tests
    python run_tests.py integration     # Run only the command-line pipeline test
    python run_tests.py fast            # Unit tests without the whole-model gradient checks
    python run_tests.py slow            # Only the learnability run (several minutes)
    python run_tests.py --cov           # Run with coverage report
    python run_tests.py -k ccc          # Forward a keyword filter to pytest
"""

import argparse
import subprocess
import sys
from pathlib import Path

SELECTIONS = {
    "all": ["tests/"],
    "unit": ["tests/unit/"],
    "integration": ["tests/integration/"],
    "fast": ["tests/unit/", "--ignore=tests/unit/test_gradcheck.py"],
    "slow": ["tests/", "-m", "slow"],
}


def build_command(selection: str, coverage: bool, keyword: str = None, quiet: bool = False) -> list:
    """Assemble the pytest invocation for one selection."""
    cmd = [sys.executable, "-m", "pytest", *SELECTIONS[selection]]
    cmd.append("-q" if quiet else "-v")
    if keyword:
        cmd.extend(["-k", keyword])
    if coverage:
        cmd.extend(["--cov=attend_affect", "--cov-report=term-missing", "--cov-report=html"])
    else:
        # pytest.ini turns coverage on; plain runs skip it
        cmd.append("--no-cov")
    cmd.extend(["--tb=short", "--durations=10"])
    return cmd


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Run the attend_affect test suite.")
    parser.add_argument("selection", nargs="?", default="all", choices=sorted(SELECTIONS))
    parser.add_argument("--cov", "--coverage", dest="coverage", action="store_true")
    parser.add_argument("-k", dest="keyword", help="pytest keyword expression")
    parser.add_argument("-q", "--quiet", action="store_true")
    args = parser.parse_args(argv)

    if not Path("attend_affect").is_dir():
        print("Error: run this script from the project root directory", file=sys.stderr)
        return 1

    cmd = build_command(args.selection, args.coverage, args.keyword, args.quiet)
    print(f"Running: {' '.join(cmd)}")
    print("-" * 50)
    try:
        returncode = subprocess.run(cmd).returncode
    except FileNotFoundError:
        print("Error: pytest not found. Install it with: pip install -r requirements.txt", file=sys.stderr)
        return 1
    print("\nAll tests passed." if returncode == 0 else f"\nTests failed with exit code {returncode}")
    return returncode


if __name__ == "__main__":
    sys.exit(main())
