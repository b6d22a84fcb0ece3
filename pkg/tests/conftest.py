import json
import os
from pathlib import Path

import pytest

from rmcosgan.harness import ExperimentConfig, MetricReport, train

RUN_DIR = Path(os.environ.get("RMCOSGAN_ACCEPTANCE_DIR", Path(__file__).resolve().parents[1] / ".acceptance-runs"))

_LINES: list[str] = []


class RunCache:
    """Full-length training runs, stored on disk and reused across sessions.

    A cached run is reused only if its stored config matches exactly.
    """

    def __init__(self, root: Path, base: ExperimentConfig):
        self.root = root
        self.base = base

    def config(self, **changes) -> ExperimentConfig:
        cfg = self.base.replace(**changes)
        return cfg.replace(out_dir=str(self.root / cfg.hash()))

    def get(self, **changes):
        cfg = self.config(**changes)
        out = Path(cfg.out_dir)
        stored = out / "config.json"
        final = out / f"checkpoint_{cfg.steps:07d}.npz"
        if not (stored.is_file() and final.is_file() and json.loads(stored.read_text()) == cfg.to_dict()):
            train(cfg)
        return cfg, MetricReport.read_csv(out / "report.csv"), final


@pytest.fixture(scope="session")
def runs() -> RunCache:
    return RunCache(RUN_DIR, ExperimentConfig())


@pytest.fixture(scope="session")
def record():
    def emit(criterion: int, name: str, passed: bool, detail: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'}  [{criterion:2d}] {name}: {detail}"
        _LINES.append(line)
        print(line)
    return emit


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance")
        for line in sorted(_LINES, key=lambda l: int(l.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
