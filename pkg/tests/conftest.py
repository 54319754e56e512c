from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import pytest

from talkface.diffusion.autoencoder import AutoencoderConfig
from talkface.pipeline.config import TrainConfig
from talkface.pipeline.data import ClipRecord, ingest_directory, load_dataset
from talkface.pipeline.synth import synth_dataset
from talkface.pipeline.train import train_stage1, train_stage2


@dataclass
class TinyRun:
    root: Path
    cfg: TrainConfig
    records: list[ClipRecord]
    stage1: Path
    stage2: Path


def tiny_config(root: Path, **overrides) -> TrainConfig:
    base = dict(data_dir=str(root / "data"), work_dir=str(root / "work"), steps=12, a2m_steps=12, probe_size=2,
                autoencoder=AutoencoderConfig(steps=60))
    base.update(overrides)
    return TrainConfig(**base)


def make_ingested(root: Path, clips: int = 2, seed: int = 0, duration_s: float = 3.0) -> list[ClipRecord]:
    synth_dataset(root / "raw", clips, seed, duration_s)
    ingest_directory(root / "raw", root / "data")
    return load_dataset(root / "data")


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory) -> TinyRun:
    """Two 3 s clips trained for a handful of steps; enough to exercise every
    code path, not to produce good video."""
    root = tmp_path_factory.mktemp("tiny_run")
    records = make_ingested(root)
    cfg = tiny_config(root)
    s1 = train_stage1(records, cfg)
    s2 = train_stage2(records, cfg)
    return TinyRun(root, cfg, records, s1, s2)


# ----------------------------------------------------------------------------- acceptance summary

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    n, title = marker.args
    entry = _CRITERIA.setdefault(n, {"title": title, "ok": True, "notes": []})
    ok = rep.passed and not hasattr(rep, "wasxfail")
    entry["ok"] &= ok
    if rep.when == "call":
        entry["notes"].extend(f"{k}={v}" for k, v in item.user_properties)
    if not ok:
        reason = getattr(rep, "wasxfail", "") or rep.outcome
        entry["notes"].append(f"{item.name}: {reason}")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        line = f"[{'PASS' if e['ok'] else 'FAIL'}] {n}. {e['title']}"
        if e["notes"]:
            line += "  (" + "; ".join(e["notes"]) + ")"
        terminalreporter.write_line(line)
