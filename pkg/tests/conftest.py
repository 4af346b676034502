import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Twelve 128x128 scenes run through the synth and preprocess subcommands.

    Returns the dataset directory; ``manifest_16.jsonl`` beside the full
    manifest keeps the first 16 training pairs and every val/test pair.
    """
    import json

    from ntlcut.cli import main

    root = tmp_path_factory.mktemp("small")
    assert main(["synth", "--n-scenes", "12", "--format", "bin", "--out-dir", str(root / "raw"),
                 "--log-level", "WARNING"]) == 0
    assert main(["preprocess", str(root / "raw"), "--out-dir", str(root / "data"),
                 "--log-level", "WARNING"]) == 0
    data = root / "data"
    recs = [json.loads(x) for x in (data / "manifest.jsonl").read_text().splitlines()]
    train_ids = sorted({r["pair_id"] for r in recs if r["split"] == "train"})[:16]
    kept = [r for r in recs if r["split"] != "train" or r["pair_id"] in train_ids]
    (data / "manifest_16.jsonl").write_text("".join(json.dumps(r) + "\n" for r in kept))
    return data


@pytest.fixture(scope="session")
def smoke_run(small_dataset, tmp_path_factory):
    """Two desk-config epochs on the 16-pair manifest; returns (run dir, final state)."""
    from ntlcut.train import TrainConfig, train

    out = tmp_path_factory.mktemp("smoke")
    state = train(TrainConfig.desk(epochs_constant=1, epochs_decay=1),
                  small_dataset / "manifest_16.jsonl", out)
    return out, state


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, gathered by ``test_acceptance``."""
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
