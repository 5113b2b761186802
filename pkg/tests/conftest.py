import os
import sys

import pytest

HERE = os.path.dirname(os.path.abspath(__file__))
DATA = os.path.join(HERE, "data")
sys.path.insert(0, HERE)


def data(name):
    return os.path.join(DATA, name)


@pytest.fixture
def workspace(tmp_path):
    from hafeat.config import ToolConfig
    return ToolConfig(workspace_dir=str(tmp_path / "ws"))
