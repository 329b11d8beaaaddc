import sys
from pathlib import Path

import pytest

from skelattack.dataset_gen import generate_formulas, render
from skelattack.victim_oracle import builtin_atlas

REPO_ROOT = Path(__file__).resolve().parent.parent
ECHO_ORACLE = REPO_ROOT / "scripts" / "echo_oracle.py"


def echo_command(*extra: str) -> list[str]:
    return [sys.executable, str(ECHO_ORACLE), *extra]


@pytest.fixture(scope="session")
def atlas():
    return builtin_atlas()


@pytest.fixture(scope="session")
def corpus(atlas):
    """The 40-formula evaluation corpus, rendered once per session."""
    specs = generate_formulas(40, seed=7)
    return [(s, render(s.tokens, atlas)) for s in specs]
