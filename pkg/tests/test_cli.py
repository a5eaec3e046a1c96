"""
Command line: exit codes, JSON reports and the example corpus.
"""
import json

import pytest

from parafact.fileio import load_equation
from parafact.main import attach_signed_values, execute
from parafact.schemas import AClassKind
from tests.conftest import CORPUS, equation_path, map_path

FAST = ["--samples", "300", "--pairs", "40"]


def run(*argv):
    return execute(list(argv), log_run=False)


def test_accepted_morphism_exits_zero():
    code, report = run("check", "--eq", equation_path("heat_circle"), "--map", map_path("circle_scale"),
                       "--iso", *FAST)
    assert code == 0
    assert report.verdicts["morphism"] == "Accepted"
    assert report.exit_code == 0


def test_rejected_morphism_exits_one():
    code, report = run("check", "--eq", equation_path("sin_diffusion"), "--map", map_path("sin_halfshift"),
                       *FAST)
    assert code == 1
    assert report.details["morphism"]["failing_candidate"] == "B.1.1"


@pytest.mark.parametrize("argv", [
    ["check", "--eq", "missing.eq", "--map", "missing.map"],
    ["check", "--eq", "x.eq"],
    ["no-such-command"],
    ["classify-a", "2+sin(u)", "--samples", "0"],
    ["classify-a", "2+sin(u", "--omega", "-50,50"],
])
def test_input_errors_exit_three(argv):
    code, report = run(*argv)
    assert code == 3
    assert report is None


def test_json_report_on_stdout(capsys):
    code, _ = run("classify-a", "exp(u)", "--json", "-")
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["schema"] == 1
    assert payload["command"] == "classify-a"
    assert payload["aclass"]["kind"] == "AexpExt"


def test_json_report_to_file(tmp_path):
    target = tmp_path / "report.json"
    code, _ = run("lattice", "query", "--from", "PE", "--to", "PE1", "--json", str(target))
    assert code == 0
    payload = json.loads(target.read_text())
    assert "Closed" in payload["verdicts"]["relation"]


def test_underivable_relation_exits_one():
    code, report = run("lattice", "query", "--from", "PE1", "--to", "PE")
    assert code == 1
    assert report.verdicts["relation"] == "-"


def test_quotient_file_is_written(tmp_path):
    out = tmp_path / "quotient.eq"
    code, report = run("quotient", "--eq", equation_path("sin_diffusion"), "--map", map_path("sin_shift"),
                       "--out", str(out), *FAST)
    assert code == 0
    quotient = load_equation(str(out))
    assert quotient.dom.axis("x").modulus == pytest.approx(6.283185307)
    assert report.details["quotient_file"] == out.read_text()


def test_normalize_reports_its_construction():
    code, report = run("normalize", "--eq", equation_path("cole_hopf"), "--op", "quasilinearize", *FAST)
    assert code == 0
    assert report.details["provenance"] == "quasilinearize: closed form"


def test_time_reparam_needs_a_map():
    code, _ = run("normalize", "--eq", equation_path("sin_diffusion"), "--op", "time-reparam")
    assert code == 3


def test_examples_list():
    code, report = run("examples", "--corpus", str(CORPUS), "list")
    assert code == 0
    assert "circle-scale" in report.details["examples"]


def test_examples_run_one():
    code, report = run("examples", "--corpus", str(CORPUS), "run", "a-exp")
    assert code == 0
    assert report.verdicts == {"a-exp": "ok"}
    code, _ = run("examples", "--corpus", str(CORPUS), "run", "no-such-example")
    assert code == 3


def test_negative_range_after_omega():
    code, report = run("classify-a", "2+sin(u)", "--omega", "-50,50")
    assert code == 0
    assert report.aclass.kind == AClassKind.AEXP
    assert report.aclass.period == pytest.approx(6.283185307, rel=1e-3)
    assert report.details["omega"] == "(-50,50)"


def test_signed_values_are_attached_to_their_option():
    argv = ["classify-a", "u^2", "--omega", "-1,1", "--json", "-", "--u0-hint", "-1"]
    assert attach_signed_values(argv) == ["classify-a", "u^2", "--omega=-1,1", "--json", "-", "--u0-hint=-1"]
    assert attach_signed_values(["lattice", "query", "--from", "PE", "--to", "PE1"]) == \
        ["lattice", "query", "--from", "PE", "--to", "PE1"]
