import time

import numpy as np
import pytest

from motionflow.netcore import Module


def zero_parameters(model: Module) -> None:
    for p in model.parameters().values():
        p.data[...] = 0.0


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Trained runs on the default dataset are expensive; every test that needs
# one shares this session cache, keyed by training seed.
ABLATION_SEEDS = tuple(range(7, 17))


class RunCache:
    def __init__(self):
        from motionflow.synthetic_data import gen_dataset
        from motionflow.trainer import TrainConfig

        self.cfg = TrainConfig()
        self.ds = gen_dataset(self.cfg.seed, self.cfg.n_scenes, self.cfg.scene)
        self.runs = {}
        self.seconds = {}  # seed -> {"ae": s, "normalised": s, "direct_regression": s}

    def get(self, seed):
        from dataclasses import replace

        from motionflow.trainer import SeedRun, train_ae, train_sampler

        if seed not in self.runs:
            c = replace(self.cfg, seed=seed)
            t = {}
            t0 = time.perf_counter()
            ae = train_ae(self.ds, c)
            t["ae"] = time.perf_counter() - t0
            t0 = time.perf_counter()
            norm = train_sampler(self.ds, ae, replace(c, mode="normalised"))
            t["normalised"] = time.perf_counter() - t0
            t0 = time.perf_counter()
            direct = train_sampler(self.ds, None, replace(c, mode="direct_regression"))
            t["direct_regression"] = time.perf_counter() - t0
            self.runs[seed] = SeedRun(seed, ae, norm, direct)
            self.seconds[seed] = t
        return self.runs[seed]


@pytest.fixture(scope="session")
def run_cache():
    return RunCache()


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def verdict():
    def record(number: int, name: str, passed: bool, detail: str) -> None:
        ACCEPTANCE_LINES[number] = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
