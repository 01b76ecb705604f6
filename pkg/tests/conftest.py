from pathlib import Path

import numpy as np
import pytest

from idlv.data import encode_pgm

# name -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (passed, detail) in ACCEPTANCE_RESULTS.items():
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")


def write_tree(root, layout, size=2, seed=0):
    """Write a dataset tree; ``layout[split][client] = (n_real, n_fake)``."""
    rng = np.random.default_rng(seed)
    root = Path(root)
    for split, clients in layout.items():
        (root / split).mkdir(parents=True, exist_ok=True)
        for client, (n_real, n_fake) in clients.items():
            for label, n in (("real", n_real), ("fake", n_fake)):
                d = root / split / client / label
                d.mkdir(parents=True, exist_ok=True)
                for k in range(n):
                    img = rng.integers(0, 256, size=(size, size))
                    (d / f"{k:05d}.pgm").write_bytes(encode_pgm(img))
    return root


def nuaa_train_layout():
    """15 clients with 1743 real and 1748 fake images in total."""
    reals = [117] * 3 + [116] * 12
    fakes = [117] * 8 + [116] * 7
    assert sum(reals) == 1743 and sum(fakes) == 1748
    return {f"subject{c:02d}": (r, f) for c, (r, f) in enumerate(zip(reals, fakes))}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
