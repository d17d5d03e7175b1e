import io
import json
import subprocess
import sys

import pytest

from bridgesim import cli, scenario


def run(*argv):
    out = io.StringIO()
    code = cli.main(list(argv), out)
    return code, out.getvalue()


def test_run_builtin_passes():
    code, text = run("run", "vn1_vn2")
    assert code == 0 and text.splitlines()[-1] == "OK"


def test_run_reports_failure(tmp_path):
    data = json.loads(scenario.builtin_path("vn1_vn2").read_text())
    data["assertions"].append({"type": "count", "label": "vn2-fwd", "expect": 11})
    path = tmp_path / "s.json"
    path.write_text(json.dumps(data))
    code, text = run("run", str(path))
    assert code == 1 and "FAIL [8] count label=vn2-fwd expected=11 observed=10" in text


def test_invalid_scenario_exit_2(tmp_path):
    path = tmp_path / "s.json"
    path.write_text('{"name": 3}')
    assert run("validate", str(path)) == (2, "invalid scenario: name: expected str, got int\n")
    assert run("run", str(path))[0] == 2


def test_usage_errors_exit_2():
    with pytest.raises(SystemExit) as info:
        cli.main(["dump", "vn1_vn2", "fdb"], io.StringIO())
    assert info.value.code == 2


def test_format_version_pin(monkeypatch):
    monkeypatch.setenv(cli.FORMAT_ENV, "2")
    code, text = run("validate", "vn1_vn2")
    assert code == 2 and "format version" in text
    monkeypatch.setenv(cli.FORMAT_ENV, "1")
    assert run("validate", "vn1_vn2")[0] == 0


def test_trace_file(tmp_path):
    path = tmp_path / "t.txt"
    assert run("run", "vn1_vn2", "--trace", str(path))[0] == 0
    lines = path.read_text().splitlines()
    assert lines[0].startswith("CTRL service=VN1") and any(l.startswith("FRAME") for l in lines)


@pytest.mark.parametrize("what,first", [
    ("fdb", "bridge=1 fid=101 mac="),
    ("topology", "link 1.1 11.3 metric=1 state=Up"),
    ("lsdb", "seq="),
    ("bindings", "service=VN1 type=MP2MP control=Spb isid=1 bvid=101"),
    ("links", "link=1.1 -> 11.3 state=Up frames=1 bytes=107"),
])
def test_dump(what, first):
    code, text = run("dump", "vn1_vn2", "--at", "0.5", what)
    lines = text.splitlines()
    assert code == 0 and lines[0] == f"# format=1 scenario=vn1_vn2 {what} t=0.5"
    assert lines[1].startswith(first)


def test_links_dump_counts_explicit_path_traffic():
    code, text = run("dump", "vn1_vn2", "--at", "1.0", "links")
    counts = {line.split()[0]: int(line.split("frames=")[1].split()[0]) for line in text.splitlines()[1:]}
    assert code == 0
    # VN2 forward frames leave EB3 towards CB3 only; nothing is sent on the unused CB4 link
    assert counts["link=3.1"] == 10 and counts["link=14.2"] == 0


def test_parallel_jobs_match_serial():
    serial = run("run", "vn1_vn2", "vm_migration")
    parallel = run("run", "vn1_vn2", "vm_migration", "--jobs", "2")
    assert serial == parallel and serial[0] == 0


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "bridgesim.cli", "validate", "protection_switch"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout == "valid protection_switch\n"
