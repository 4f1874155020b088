"""Format, lint and type-check the project sources.

Usage:
    python scripts/lint.py [--check]

``--check`` reports problems without rewriting files (for CI).
"""

import subprocess
import sys
from pathlib import Path

TARGETS = ["projects", "scripts"]


def _run(name: str, cmd: list) -> bool:
    print(f"\nRunning {name}...")
    result = subprocess.run(cmd)
    return result.returncode == 0


def run_black(paths: list, check: bool) -> bool:
    return _run("Black", ["black", *paths] + (["--check", "--diff"] if check else []))


def run_isort(paths: list, check: bool) -> bool:
    flags = ["--check-only", "--diff"] if check else []
    return _run("isort", ["isort", *paths, *flags])


def run_ruff(paths: list, check: bool) -> bool:
    return _run("Ruff", ["ruff", "check", *paths] + ([] if check else ["--fix"]))


def run_mypy() -> bool:
    """Type-check each project's src/ on its own (they share the ``src`` name)."""
    sources = sorted(Path("projects").glob("*/src"))
    if not sources:
        print("No sources to type check.")
        return True
    return all(_run(f"mypy ({src.parent.name})", ["mypy", str(src)]) for src in sources)


def main():
    check = "--check" in sys.argv
    paths = [p for p in TARGETS if Path(p).exists()]

    print("=" * 60)
    print("Code Quality Check")
    print("=" * 60)

    results = {
        "Black": run_black(paths, check),
        "isort": run_isort(paths, check),
        "Ruff": run_ruff(paths, check),
        "mypy": run_mypy(),
    }

    print("\n" + "=" * 60)
    print("Summary")
    print("=" * 60)

    all_passed = True
    for tool, passed in results.items():
        status = "✓ PASSED" if passed else "✗ ISSUES FOUND"
        print(f"{tool}: {status}")
        if not passed:
            all_passed = False

    print("=" * 60)

    if not all_passed and not check:
        print("Some issues were auto-fixed. Review changes.")
    sys.exit(0 if all_passed else 1)


if __name__ == "__main__":
    main()
