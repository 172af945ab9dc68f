import numpy as np
import pytest

from argus_bench.vit.params import EncoderConfig, init_params
from argus_bench.volume import Volume

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    crit = _CRITERIA.get(report.nodeid)
    if crit is not None:
        crit["outcomes"].append(report.outcome)


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            number, title = mark.args
            _CRITERIA[item.nodeid] = {"number": number, "title": title, "outcomes": []}


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    by_number = {}
    for crit in _CRITERIA.values():
        entry = by_number.setdefault(crit["number"], {"title": crit["title"], "outcomes": []})
        entry["outcomes"].extend(crit["outcomes"])
    terminalreporter.section("acceptance criteria")
    for number in sorted(by_number):
        entry = by_number[number]
        if not entry["outcomes"]:
            status = "NOT RUN"
        elif all(o == "passed" for o in entry["outcomes"]):
            status = "PASS"
        else:
            status = "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {status:7s} {entry['title']}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def micro_cfg():
    return EncoderConfig(dtype="float64")


@pytest.fixture
def micro_params(micro_cfg):
    return init_params(micro_cfg, seed=7)


@pytest.fixture
def micro_volumes(micro_cfg, rng):
    return [Volume(rng.random(micro_cfg.volume_dims), (1.0, 1.0, 1.0)) for _ in range(3)]


CURATION_REMOVED = {
    "b1": ("SAT O2 without oxygen of 93.", "R1"),
    "b2": ("Increase in trunk caliber of the 39 mm pulmonary artery.", "R2"),
    "i1": ("It is compared to the previous study of March 2019, not mediastinal.", "R3"),
}
CURATION_SHORT = {"i2", "b4"}


@pytest.fixture
def curation_records():
    """Twelve raw records: three carry one rule-matching sentence each, two are too short,
    one is a second reconstruction of a CT-RATE scan and two are official test records."""
    from argus_bench.curation import RawRecord

    long_tail = "The lungs are clear and the heart size is within normal limits today."
    return [
        RawRecord("b1", "BIMCV-R", report=f"SAT O2 without oxygen of 93. {long_tail}"),
        RawRecord("b2", "BIMCV-R", report=f"Increase in trunk caliber of the 39 mm pulmonary artery. {long_tail}"),
        RawRecord("b3", "BIMCV-R", report="Mild cardiomegaly is observed. No pleural effusion or pneumothorax is seen."),
        RawRecord("b4", "BIMCV-R", report="Heart normal. Lungs clear."),
        RawRecord("i1", "INSPECT", report="It is compared to the previous study of March 2019, not mediastinal. "
                                         "No filling defect is seen within the main pulmonary arteries."),
        RawRecord("i2", "INSPECT", report="No acute findings."),
        RawRecord("i3", "INSPECT", report="Small bilateral pleural effusions with adjacent basal atelectasis; no central embolus."),
        RawRecord("train_1_a_1", "CT-RATE", findings="Trachea and both main bronchi are patent.",
                  impression="No mass or consolidation is identified in either lung."),
        RawRecord("train_1_a_2", "CT-RATE", findings="Trachea and both main bronchi are patent.",
                  impression="No mass or consolidation is identified in either lung."),
        RawRecord("train_2_a_1", "CT-RATE", findings="Mediastinal structures are unremarkable in appearance.",
                  impression="Degenerative changes are seen along the thoracic spine."),
        RawRecord("valid_1_a_1", "CT-RATE", findings="A nodule of 12 mm is seen in the right upper lobe.",
                  impression="Short.", official_test=True),
        RawRecord("valid_2_a_1", "CT-RATE", findings="Normal.", official_test=True),
    ]
