import numpy as np
import pytest

from vista.data import NoiseSpec, SplitSpec, make_gaussian_clusters, prepare_splits

# Desk-scale noisy-label benchmark shared by the trainer and acceptance tests:
# 3 overlapping classes in 8-D, N = 600, 40% symmetric noise on train+val.
NOISY_KW = dict(batch_size=64, lr=0.1, lr_schedule="cosine-warm-restarts", lr_period=40, per_batch_lr=True)


def noisy_splits(seed, rate=0.4, kind="symmetric"):
    ds = make_gaussian_clusters(3, 200, 8, 1.0, seed=100 + seed, center_scale=1.5)
    return prepare_splits(ds, SplitSpec(0.6, 0.2, 0.2, seed=seed), NoiseSpec(kind, rate, seed=seed))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_noisy():
    return noisy_splits(0)


# One line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE_LINES: dict[str, str] = {}


def report_criterion(key, ok, detail):
    line = f"{key} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES[key] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[1:])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
