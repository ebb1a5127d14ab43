import shutil
from pathlib import Path

import pytest

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture
def t0(tmp_path) -> Path:
    """A disposable copy of the clean-success task bundle."""
    dest = tmp_path / "t0"
    shutil.copytree(FIXTURES / "tasks" / "t0", dest)
    return dest


@pytest.fixture
def t1(tmp_path) -> Path:
    """A disposable copy of the code_generator-exhausts bundle."""
    dest = tmp_path / "t1"
    shutil.copytree(FIXTURES / "tasks" / "t1", dest)
    return dest


@pytest.fixture
def tasks_dir(tmp_path) -> Path:
    """Both task bundles under one directory, for bench runs."""
    dest = tmp_path / "tasks"
    shutil.copytree(FIXTURES / "tasks", dest)
    return dest


@pytest.fixture
def calibration() -> Path:
    return FIXTURES / "sim" / "calibration.yaml"
