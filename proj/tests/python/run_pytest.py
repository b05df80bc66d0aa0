"""ctest entry point: exit 77 (skipped) when the extension is not installed."""

import pathlib
import sys

try:
    import dmp3dad  # noqa: F401
except ImportError as exc:
    print(f"dmp3dad Python package not importable ({exc}); run `pip install --no-build-isolation -e .`")
    sys.exit(77)

import pytest

sys.exit(pytest.main(["-q", str(pathlib.Path(__file__).resolve().parent)]))
