import numpy as np
import pytest

from lgur.config import RunConfig
from lgur.data import generate_dataset


def tiny_config(**overrides) -> RunConfig:
    """A model small enough for exhaustive finite-difference checks."""
    cfg = RunConfig().replace(**{
        "d": 8, "n_heads": 2, "d_ff": 16, "s": 5, "K": 2, "d_prime": 4, "vis_blocks": 1,
        "P_ids": 2, "Q": 2, "epochs": 1, "eval_every": 1,
        "data.n_ids": 4, "data.pairs_per_id": 2, "data.n_test_ids": 2,
        "data.n_attributes": 2, "data.n_values": 3, "data.height": 2, "data.width": 2,
        "data.patch_dim": 4, "data.vocab_size": 8, "data.n_fillers": 1,
    })
    return cfg.replace(**overrides)


def small_config(**overrides) -> RunConfig:
    """Fast to train, large enough to learn the synthetic task."""
    cfg = RunConfig().replace(**{
        "d": 32, "n_heads": 4, "s": 16, "K": 3, "d_prime": 32, "vis_blocks": 1,
        "P_ids": 8, "Q": 2, "epochs": 2, "eval_every": 1,
        "data.n_ids": 24, "data.pairs_per_id": 3, "data.n_test_ids": 6,
    })
    return cfg.replace(**overrides)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def tiny_data(tiny_cfg):
    return generate_dataset(tiny_cfg.data)


# ---------------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per criterion, repeated in the
# terminal summary so it survives output capture

_LINES = pytest.StashKey[list]()


class _Criterion:
    def __init__(self, name, lines):
        self.name, self.lines, self.details, self.failed = name, lines, [], []

    def check(self, ok, detail, fatal=True):
        """Record ``detail``; a failed check raises unless ``fatal`` is off,
        in which case the failure is raised when the block ends."""
        self.details.append(detail)
        if not ok:
            self.failed.append(detail)
            if fatal:
                raise AssertionError(f"{self.name}: {'; '.join(self.failed)}")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        details = list(self.details)
        if exc_type is not None and not self.failed:
            details.append(f"error: {exc!r}")
        ok = exc_type is None and not self.failed
        self.lines.append(f"{'PASS' if ok else 'FAIL'}  {self.name}: " + "; ".join(details))
        print(self.lines[-1])
        if exc_type is None and self.failed:
            raise AssertionError(f"{self.name}: {'; '.join(self.failed)}")
        return False


@pytest.fixture
def criterion(request):
    lines = request.config.stash.setdefault(_LINES, [])
    return lambda name: _Criterion(name, lines)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
