import logging

import pytest

from arls.instance import BestKnownRegistry, generate_instance, save_instance
from arls.model import ModelConfig, init_params
from arls.report import CSV_HEADER, GapReport, ReportError, gap, run_suite

from .conftest import TINY_TEXT


@pytest.mark.parametrize("obj,star,expected", [(110, 100, 0.10), (100, 100, 0.0), (55, 50, 0.10)])
def test_gap_formula(obj, star, expected):
    assert gap(obj, star) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("star", [0, -3])
def test_gap_rejects_nonpositive_reference(star):
    with pytest.raises(ReportError):
        gap(10, star)


@pytest.fixture
def suite(tmp_path):
    d = tmp_path / "tiny3"
    d.mkdir()
    (d / "t0.txt").write_text(TINY_TEXT)
    for k in (1, 2):
        save_instance(generate_instance(3, 3, seed=k), d / f"r{k}.txt")
    (d / "notes.csv").write_text("ignored\n")
    return d


def test_oracle_reference_bounds_spt(suite):
    report = run_suite(suite, ["spt", "oracle"], reference="oracle")
    assert [r.instance for r in report.rows[::2]] == ["r1", "r2", "t0"]
    for r in report.rows:
        assert r.proven is True and r.gap >= 0
        if r.policy == "oracle":
            assert r.gap == 0
    t0 = [r for r in report.rows if r.instance == "t0" and r.policy == "oracle"][0]
    assert t0.makespan == 6


def test_csv_layout_and_determinism(suite):
    a = run_suite(suite, ["fifo", "mwkr"], reference="oracle").to_csv()
    b = run_suite(suite, ["fifo", "mwkr"], reference="oracle", threads=3).to_csv()
    assert a == b
    lines = a.splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 1 + 3 * 2
    assert lines[1].startswith("tiny3,r1,3,3,fifo,")


def test_missing_registry_entry_leaves_blank_gap(suite, caplog):
    reg = BestKnownRegistry.from_rows([("t0", 6)])
    with caplog.at_level(logging.WARNING):
        report = run_suite(suite, ["spt"], registry=reg)
    by_name = {r.instance: r for r in report.rows}
    assert by_name["t0"].gap is not None and by_name["r1"].gap is None
    assert by_name["r1"].cells()[6:] == ["", "", ""]
    assert "r1" in caplog.text


def test_empty_directory(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        report = run_suite(tmp_path, ["spt"])
    assert report.rows == [] and report.to_csv() == ",".join(CSV_HEADER) + "\n"
    assert "no instances" in caplog.text


def test_markdown_means_to_one_decimal(suite):
    report = run_suite(suite, ["spt", "oracle"], reference="oracle")
    md = report.to_markdown().splitlines()
    assert md[0].startswith("| dataset | size | policy")
    rows = [line for line in md[2:]]
    assert any(line.startswith("| tiny3 | 3x3 | spt | 2 |") for line in rows)
    assert any(line.startswith("| tiny3 | 2x2 | oracle | 1 | 0.0 |") for line in rows)
    spt = [r.gap for r in report.rows if r.policy == "spt" and r.jobs == 3]
    assert f"{100 * sum(spt) / 2:.1f} |" in md[2] + md[3] + md[4] + md[5]


def test_model_policy_and_heuristic_reference(suite, tmp_path):
    params = init_params(ModelConfig(d_model=8, heads=2, d_ff=8), seed=0)
    ckpt = tmp_path / "m.ckpt"
    params.save(ckpt)
    report = run_suite(suite, ["model", "mwkr"], checkpoint=ckpt, reference="heuristic")
    assert len(report.rows) == 6
    for r in report.rows:
        assert r.proven is False
        assert r.gap >= 0 or r.policy == "model"
    assert report.mean_gap("mwkr") >= 0


def test_bad_arguments(suite):
    with pytest.raises(ReportError):
        run_suite(suite, ["nope"])
    with pytest.raises(ReportError):
        run_suite(suite, ["model"])
    with pytest.raises(ReportError):
        run_suite(suite, ["spt"], reference="guess")
    with pytest.raises(ReportError):
        run_suite(suite / "t0.txt", ["spt"])
    assert GapReport().aggregates() == []
