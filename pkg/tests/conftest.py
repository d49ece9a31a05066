"""Session fixtures: seed-fixed phantom cohorts and tiny models trained on them."""

import time
from dataclasses import dataclass

import numpy as np
import pytest

from voxdemog.nets import NetConfig, Network, build
from voxdemog.pipeline import predict_records
from voxdemog.stats import PredictionRecord
from voxdemog.training import TrainConfig, TrainResult, split_dataset, train
from voxdemog.volume import CohortManifest, PhantomSpec, load_arrays, make_cohort

PHANTOM = PhantomSpec(extent=32, seed=11)
# Desk-scale schedules: SFCN gets the full 60-epoch budget, the slower
# architectures a 15-epoch cap that is enough for the comparison harness.
EPOCH_CAP = {"sfcn": 60, "densenet3d": 15, "swin3d": 15}


@dataclass
class Study:
    spec: PhantomSpec
    dev: CohortManifest
    test: CohortManifest
    dev_inputs: dict
    test_inputs: dict


@dataclass
class Trained:
    net: Network
    result: TrainResult
    seconds: float
    test_records: list[PredictionRecord]


def make_study(root) -> Study:
    """200-subject development cohort (2:1 train/val) and a 100-subject held-out test cohort."""
    dev = make_cohort(PHANTOM, 200, root / "dev", seed=1, cohort="dev")
    test = make_cohort(PHANTOM, 100, root / "test", seed=2, cohort="test")
    return Study(PHANTOM, dev, test, load_arrays(dev), load_arrays(test))


def train_tiny(study: Study, arch: str, task: str) -> Trained:
    targets = {r.subject_id: (r.sex if task == "sex" else r.age) for r in study.dev.rows}
    split = split_dataset(study.dev.ids, (2, 1), 42)
    net = build(NetConfig.tiny(arch, task))
    cfg = TrainConfig(batch_size=4, learning_rate=5e-3, max_epochs=EPOCH_CAP[arch], patience=10, seed=42)
    t0 = time.perf_counter()
    result = train(net, study.dev_inputs, targets, split, cfg)
    seconds = time.perf_counter() - t0
    return Trained(net, result, seconds, predict_records(net, study.test))


@pytest.fixture(scope="session")
def study(tmp_path_factory) -> Study:
    return make_study(tmp_path_factory.mktemp("study"))


@pytest.fixture(scope="session")
def trained(study):
    """``trained(arch, task)`` trains on first use and caches the result."""
    cache = {}

    def get(arch: str, task: str) -> Trained:
        if (arch, task) not in cache:
            cache[arch, task] = train_tiny(study, arch, task)
        return cache[arch, task]

    return get


def mean_baseline_mae(study: Study) -> float:
    split = split_dataset(study.dev.ids, (2, 1), 42)
    ages = {r.subject_id: r.age for r in study.dev.rows}
    mean = np.mean([ages[i] for i in split.train])
    return float(np.mean([abs(r.age - mean) for r in study.test.rows]))


# -- acceptance reporting: one PASS/FAIL line per criterion ---------------------


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")
    config._acceptance = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if rep.failed:
        msg = str(rep.longrepr.reprcrash.message) if hasattr(rep.longrepr, "reprcrash") else str(rep.longrepr)
        detail = f"{detail}; {msg.splitlines()[0]}" if detail else msg.splitlines()[0]
    item.config._acceptance[mark.args[0]] = ("PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, detail) in sorted(results.items()):
        terminalreporter.write_line(f"{status}  {name}: {detail}")
