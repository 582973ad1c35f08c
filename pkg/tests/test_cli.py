import socket
import threading
import time

import pytest

from ergohrc import cli
from ergohrc.hmm import load_models
from ergohrc.mocap import save_clip
from ergohrc.simulation import DEFAULT_TASKS, SyntheticOperatorProfile, synthesize_task_recording
from ergohrc.workflow import GestureId, encode_datagram


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("models")
    code = cli.main(["train", "--synthetic", "3", "--states", "3", "--max-iters", "10",
                     "--seed", "4", "--out", str(out)])
    assert code == 0
    return out / "models.txt"


def test_train_writes_models(trained):
    models = load_models(trained.read_text())
    assert sorted(models) == list(range(14))
    assert all(m.n_states == 3 and m.n_features == 15 for m in models.values())


def test_score_and_delegate(tmp_path, catalog, trained, capsys):
    profile = SyntheticOperatorProfile("op", seed=12)
    paths = []
    for i, (task, spec) in enumerate(sorted(DEFAULT_TASKS.items())):
        clip = synthesize_task_recording(spec, profile, catalog, seed=i, task_id=task)
        paths.append(tmp_path / f"{task}.csv")
        save_clip(clip, paths[-1])
    assert cli.main(["score", *map(str, paths), "--models", str(trained),
                     "--out", str(tmp_path)]) == 0
    summary = (tmp_path / "summary.csv").read_text()
    assert summary.splitlines()[0] == "task,mean,std,mode,risk_class,detections"
    assert len((tmp_path / "detections.csv").read_text().splitlines()) == 1 + 4 * 8
    capsys.readouterr()
    assert cli.main(["delegate", str(tmp_path / "summary.csv"), "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out == "Delegate to robot: T1, T2\nKeep with operators: T3, T4\n"
    assert (tmp_path / "delegation.csv").read_text().startswith("task,assignee\n")


def test_delegate_rethresholds(tmp_path, capsys):
    report = tmp_path / "s.csv"
    report.write_text("task,mean,std,mode,risk_class,detections\nA,10,1,10,Low,3\n")
    assert cli.main(["delegate", str(report), "--thresholds", "5,20", "--out", str(tmp_path)]) == 0
    assert "Delegate to robot: A" in capsys.readouterr().out


def test_simulate_is_reproducible(tmp_path):
    args = ["simulate", "--operators", "3", "--seed", "5"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    for mode in ("NoGrNoSa", "GrOnly", "GrPlusSa"):
        a = (tmp_path / "a" / f"kpi_{mode}.csv").read_bytes()
        assert a == (tmp_path / "b" / f"kpi_{mode}.csv").read_bytes()
        assert a.startswith(b"operator,SA,RiOM\n")


def test_simulate_config_file(tmp_path):
    config = tmp_path / "sim.cfg"
    config.write_text("# small run\noperators = 2\nmode = GrOnly\n")
    assert cli.main(["simulate", "--config", str(config), "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "kpi_GrOnly.csv").read_text().splitlines()
    assert len(lines) == 4
    assert not (tmp_path / "kpi_NoGrNoSa.csv").exists()


def test_kpi_command(tmp_path, capsys):
    trials = tmp_path / "t.csv"
    motion = tmp_path / "m.csv"
    trials.write_text("1,0,0,0,100,0,0,139.1,0,0\n")
    motion.write_text("operator,condition,x,y,z\n1,without,0,0,0\n1,without,100,0,0\n"
                      "1,with,0,0,0\n1,with,70,0,0\n")
    assert cli.main(["kpi", "--trials", str(trials), "--motion", str(motion),
                     "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out == "operator,SA,RiOM\n1,39.10,30.00\nmean,39.10,30.00\n"


def _free_port():
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_listen_runs_routine(tmp_path, capsys):
    port = _free_port()
    script = [GestureId(g) for g in (1, 2, 3, 4, 8, 9, 5, 6)]

    def send():
        time.sleep(0.3)
        frame = 0
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
            for g in script:
                for _ in range(3):
                    frame += 1
                    s.sendto(encode_datagram(frame, g), ("127.0.0.1", port))
                    time.sleep(0.002)
                time.sleep(0.05)

    sender = threading.Thread(target=send)
    sender.start()
    code = cli.main(["listen", "--port", str(port), "--run-length", "3", "--auto-press",
                     "--timeout", "10", "--out", str(tmp_path)])
    sender.join()
    assert code == 0
    assert "completed=True" in capsys.readouterr().out
    assert (tmp_path / "trace.csv").read_text().splitlines()[-1].endswith("Halt,Done")


@pytest.mark.parametrize("argv", [
    ["score"],
    ["train"],
    ["delegate", "x", "--thresholds", "nonsense"],
    ["simulate", "--operators", "x"],
    ["bogus"],
])
def test_invalid_input_exits_one(argv, tmp_path, capsys):
    assert cli.main(argv + ["--out", str(tmp_path)]) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_bad_config_key_exits_one(tmp_path):
    config = tmp_path / "c.cfg"
    config.write_text("colour = blue\n")
    assert cli.main(["simulate", "--config", str(config), "--out", str(tmp_path)]) == 1


def test_missing_file_exits_two(tmp_path):
    assert cli.main(["kpi", "--trials", str(tmp_path / "nope.csv"), "--motion", "x",
                     "--out", str(tmp_path)]) == 2


def test_failed_trials_exit_two(tmp_path, monkeypatch):
    from ergohrc import simulation

    original = simulation.ExperimentConfig

    def tiny_budget(*args, **kwargs):
        return original(*args, frame_budget=30, **kwargs)

    monkeypatch.setattr(simulation, "ExperimentConfig", tiny_budget)
    assert cli.main(["simulate", "--operators", "1", "--mode", "GrOnly",
                     "--out", str(tmp_path)]) == 2
