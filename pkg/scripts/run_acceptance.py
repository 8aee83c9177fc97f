"""Run the acceptance suite and print one PASS/FAIL line per criterion.

Example::

    python3 scripts/run_acceptance.py            # all criteria (about 15 minutes)
    python3 scripts/run_acceptance.py -k "05 or 07"
"""
import sys
from pathlib import Path

import pytest

if __name__ == "__main__":
    target = Path(__file__).resolve().parent.parent / "tests" / "test_acceptance.py"
    sys.exit(pytest.main([str(target), "-v", *sys.argv[1:]]))
