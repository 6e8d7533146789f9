import json

from app.cli import main
from app.services.harness import EXIT_CLEAN, EXIT_FAILED, EXIT_VIOLATION


WORKLOAD = 'create /f rw-\nh = open /f\nwrite $h 0 "abc"\nseek $h 0\nread $h 3 => eSucc abc\n'


def test_gen_to_stdout(capsys):
    assert main(["gen", "--seed", "1", "--len", "5"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("# seed=1 length=5\n")


def test_gen_rejects_zero_length(capsys):
    assert main(["gen", "--len", "0"]) == EXIT_FAILED
    assert "error" in capsys.readouterr().err


def test_run_clean(tmp_path, capsys):
    script = tmp_path / "w.bfs"
    script.write_text(WORKLOAD)
    report = tmp_path / "report.json"
    assert main(["run", str(script), "-o", str(report)]) == EXIT_CLEAN
    assert json.loads(report.read_text())["summary"]["status"] == "clean"
    assert "clean" in capsys.readouterr().out


def test_run_monitored_over_an_adversary(tmp_path):
    script = tmp_path / "w.bfs"
    script.write_text(WORKLOAD.replace(" => eSucc abc", ""))
    adv = tmp_path / "adv.json"
    adv.write_text(json.dumps({
        "strategies": ["ContentTamper"],
        "trigger": {"kind": "every", "k": 1, "ops": ["xReadPage"]},
    }))
    assert main(["run", str(script), "--mode", "adv", "--adv-config", str(adv)]) == EXIT_VIOLATION


def test_run_on_a_posix_directory(tmp_path):
    script = tmp_path / "w.bfs"
    script.write_text(WORKLOAD)
    store = tmp_path / "store"
    assert main(["run", str(script), "--backend", f"posix:{store}"]) == EXIT_CLEAN
    assert (store / "epoch.trusted").exists()


def test_run_bad_script(tmp_path, capsys):
    script = tmp_path / "w.bfs"
    script.write_text("create /f rw-\nbogus\n")
    assert main(["run", str(script)]) == EXIT_FAILED
    assert "line 2" in capsys.readouterr().err


def test_run_missing_script(tmp_path):
    assert main(["run", str(tmp_path / "nope.bfs")]) == EXIT_FAILED


def test_campaign_writes_its_report(tmp_path, capsys):
    config = tmp_path / "campaign.json"
    config.write_text(json.dumps({"seed": 1, "scripts": 1, "length": 10, "strategies": ["SizeMismatch"]}))
    out = tmp_path / "out"
    assert main(["campaign", "--config", str(config), "-o", str(out)]) == 0
    report = json.loads((out / "campaign.json").read_text())
    assert report["accepted"] is True
    assert "SizeMismatch" in capsys.readouterr().out
