import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def write_csv(tmp_path):
    def _write(rows, name="data.csv", header="x,y,ks,lane"):
        p = tmp_path / name
        lines = [header] + [",".join(str(v) for v in r) for r in rows]
        p.write_text("\n".join(lines) + "\n")
        return p
    return _write
