"""Shared fixtures: a tiny synthetic corpus and quickly trained small models."""
from __future__ import annotations

import numpy as np
import pytest

from choreoforge import dataset, fdgn, gcrm, synth


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """4 genres x 3 pairs of 8 s (two clips each); returns the manifest path."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    synth.gen_dataset(synth.default_genres(4), 3, seed=11, out_dir=root, duration_s=8.0)
    return root / "manifest.json"


@pytest.fixture(scope="session")
def tiny_train(tiny_corpus):
    return dataset.load_corpus(tiny_corpus, ("train",))


@pytest.fixture(scope="session")
def tiny_fdgn(tiny_train):
    result = fdgn.train_fdgn([r.features for r in tiny_train], [r.fragment for r in tiny_train],
                             fdgn.TrainConfig(steps=30, batch=8, seed=1),
                             fdgn.FDGNConfig(hidden=32, music_hidden=32, step_dim=16, diffusion_steps=10))
    return result


@pytest.fixture(scope="session")
def tiny_retrieval(tiny_train):
    return gcrm.train_retrieval([r.image for r in tiny_train], [r.fragment for r in tiny_train],
                                [r.genre for r in tiny_train],
                                gcrm.RetrievalTrainConfig(steps=30, batch=8, seed=1),
                                gcrm.EncoderConfig(width=32))


@pytest.fixture(scope="session")
def tiny_checkpoints(tmp_path_factory, tiny_fdgn, tiny_retrieval):
    root = tmp_path_factory.mktemp("tiny_ckpt")
    tiny_fdgn.model.save(root / "fdgn.cftn")
    tiny_retrieval.model.save(root / "retrieval.cftn")
    return root / "fdgn.cftn", root / "retrieval.cftn"


@pytest.fixture(scope="session")
def track_12s():
    """A 12 s track of genre 2 (three clips) with its ground-truth dance."""
    return synth.gen_pair(synth.default_genres(4)[2], 404, 12.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary ---------------------------------------------------------

_CRITERIA: dict[int, dict] = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    number, title = marker
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "seen": False})
    if report.when == "call" or report.failed:
        entry["seen"] = True
        entry["ok"] = entry["ok"] and report.passed


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        status = "PASS" if entry["ok"] and entry["seen"] else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {status}  {entry['title']}")
