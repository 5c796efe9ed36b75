import json
import os

import pytest

from qhpc.cli import DATA_DIR, main
from qhpc.trace import TraceError, TraceRecord, fold, intervals, loads, parse_detail, read_trace, format_detail


def d(name):
    return os.path.join(DATA_DIR, name)


def run(tmp_path, workflow, fabric, *extra, tag="a"):
    trace, metrics = tmp_path / f"{tag}.ndjson", tmp_path / f"{tag}.json"
    code = main(["run", d(workflow), d(fabric), "--trace", str(trace), "--metrics", str(metrics), *extra])
    return code, trace, metrics


@pytest.fixture(autouse=True)
def _cwd(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)


# ------------------------------------------------------------------- validate


def test_validate_ok(capsys):
    assert main(["validate", d("workflow_chemistry.json"), d("fabric_colocated.json")]) == 0
    assert capsys.readouterr().out.startswith("OK")


def test_validate_cycle(tmp_path, capsys):
    wf = tmp_path / "cyc.json"
    wf.write_text(json.dumps({"name": "c", "tasks": [
        {"id": "A", "kind": "classical", "needs": ["B"], "requirements": {"cores": 1}, "payload": {"action": "noop"}},
        {"id": "B", "kind": "classical", "needs": ["A"], "requirements": {"cores": 1}, "payload": {"action": "noop"}},
    ]}))
    assert main(["validate", str(wf), d("fabric_colocated.json")]) == 1
    err = capsys.readouterr().err
    assert "cycle" in err and "A" in err and "B" in err


def test_validate_malformed_fabric_number(tmp_path, capsys):
    fab = json.load(open(d("fabric_colocated.json")))
    fab["qpus"][0]["coherence_time_us"] = "soon"
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(fab))
    assert main(["validate", d("workflow_chemistry.json"), str(p)]) == 1
    assert "qpus[0].coherence_time_us" in capsys.readouterr().err


def test_validate_missing_file(capsys):
    assert main(["validate", "nope.json", d("fabric_colocated.json")]) == 1
    assert "nope.json" in capsys.readouterr().err


# ------------------------------------------------------------------------ run


def test_run_chemistry_success(tmp_path):
    code, trace, metrics = run(tmp_path, "workflow_chemistry.json", "fabric_colocated.json")
    assert code == 0
    m = json.loads(metrics.read_text())
    assert m["outcome"] == "success"
    report = json.loads((tmp_path / "report.json").read_text())
    assert abs(report["final_energy"] + 1.4142) < 1e-3


def test_run_dynamic_remote_is_unsatisfiable(tmp_path):
    code, _, metrics = run(tmp_path, "workflow_dynamic.json", "fabric_remote.json")
    assert code == 2
    assert json.loads(metrics.read_text())["outcome"] == "unsatisfiable"


def test_run_forced_failure(tmp_path):
    code, trace, metrics = run(tmp_path, "workflow_dynamic.json", "fabric_flaky.json")
    assert code == 3
    assert json.loads(metrics.read_text())["outcome"] == "failed"
    fails = [r for r in read_trace(trace) if r.kind == "task_fail"]
    assert [r.attempt for r in fails] == [1, 2, 3]


@pytest.mark.parametrize("workflow,fabric", [
    ("workflow_ensemble.json", "fabric_two_qpu.json"),
    ("workflow_dynamic.json", "fabric_colocated.json"),
])
def test_run_is_deterministic(tmp_path, workflow, fabric):
    a = run(tmp_path, workflow, fabric, "--seed", "4", "--binding", "late", tag="a")
    b = run(tmp_path, workflow, fabric, "--seed", "4", "--binding", "late", tag="b")
    assert a[0] == b[0] == 0
    assert a[1].read_bytes() == b[1].read_bytes()
    assert a[2].read_bytes() == b[2].read_bytes()


def test_run_bad_flags(tmp_path):
    assert run(tmp_path, "workflow_dynamic.json", "fabric_colocated.json", "--reserve", "qx:10")[0] == 1
    assert run(tmp_path, "workflow_dynamic.json", "fabric_colocated.json", "--reserve", "q1")[0] == 1


def test_metrics_file_is_fold_of_trace(tmp_path):
    code, trace, metrics = run(tmp_path, "workflow_straggler.json", "fabric_two_qpu.json", "--binding", "late")
    assert code == 0
    assert json.loads(metrics.read_text()) == fold(read_trace(trace)).to_dict()


# --------------------------------------------------------------------- report


def test_report_two_resources(tmp_path, capsys):
    code, trace, _ = run(tmp_path, "workflow_dynamic.json", "fabric_colocated.json")
    assert code == 0
    capsys.readouterr()
    gantt = tmp_path / "g.tsv"
    assert main(["report", str(trace), "--gantt", str(gantt)]) == 0
    out = capsys.readouterr().out
    table = out.split("\n\n")[0].splitlines()[1:]
    assert sorted(line.split()[0] for line in table) == ["n1", "q1"]
    rows = gantt.read_text().splitlines()
    assert rows[0].split("\t")[:4] == ["task", "resource", "start_us", "end_us"]
    assert [r.split("\t")[0] for r in rows[1:]] == ["circuit", "feedback"]


def test_report_empty_trace(tmp_path, capsys):
    p = tmp_path / "empty.ndjson"
    p.write_text("")
    assert main(["report", str(p)]) == 0
    assert "makespan_us                0" in capsys.readouterr().out


def test_report_malformed(tmp_path, capsys):
    p = tmp_path / "bad.ndjson"
    p.write_text('{"kind":"task_start","at_us":5}\nnot json\n')
    assert main(["report", str(p)]) == 1
    assert "line 2" in capsys.readouterr().err
    assert main(["report", str(tmp_path / "missing.ndjson")]) == 1


def test_utilization_recomputed_from_records(tmp_path):
    code, trace, _ = run(tmp_path, "workflow_ensemble.json", "fabric_two_qpu.json")
    records = read_trace(trace)
    m = fold(records)
    makespan = max(r.at_us for r in records if r.kind == "task_end")
    busy = {}
    for rid in m.busy_us:
        # merge the sorted spans by hand
        spans = sorted((s, e) for _, r, s, e, _, _ in intervals(records) if r == rid)
        cover, last = 0, 0
        for s, e in spans:
            s, e = max(s, last), min(e, makespan)
            if e > s:
                cover += e - s
                last = e
        busy[rid] = cover
    assert m.makespan_us == makespan
    for rid in m.busy_us:
        assert m.busy_us[rid] == busy[rid]
        assert m.utilization[rid] == busy[rid] / makespan


# ---------------------------------------------------------------------- trace


def test_trace_record_validation():
    with pytest.raises(TraceError):
        TraceRecord.from_dict({"kind": "lunch", "at_us": 0})
    with pytest.raises(TraceError):
        TraceRecord.from_dict({"kind": "bind", "at_us": -1})
    with pytest.raises(TraceError):
        TraceRecord.from_dict({"kind": "bind", "at_us": 0, "colour": "red"})
    with pytest.raises(TraceError, match="backwards"):
        loads('{"kind":"bind","at_us":5}\n{"kind":"bind","at_us":4}\n')
    r = TraceRecord("task_end", 7, "t", "n1", 1, format_detail("done -- ok", kind="quantum", shots=10))
    assert loads(r.to_json()) == [r]
    assert parse_detail(r.detail) == {"kind": "quantum", "shots": "10"}


def test_examples_command(tmp_path):
    assert main(["examples", str(tmp_path / "ex")]) == 0
    assert sorted(os.listdir(tmp_path / "ex")) == sorted(os.listdir(DATA_DIR))
    assert main(["validate", str(tmp_path / "ex" / "workflow_chemistry.json"),
                 str(tmp_path / "ex" / "fabric_colocated.json")]) == 0
