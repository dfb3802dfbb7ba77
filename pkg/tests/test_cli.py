import json

import numpy as np
import pytest

from cbpformer import cli
from cbpformer import oracles as orc
from cbpformer import problems as pb
from cbpformer import verify as vf
from cbpformer.errors import ArgumentError


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def trained(workdir):
    """A tiny brachistochrone model and its dataset, built through the CLI."""
    data, model = str(workdir / "d.txt"), str(workdir / "m.ckpt")
    assert cli.main(["gen-data", "count=60", "seed=7", f"out={data}"]) == 0
    args = ["train", f"data={data}", "holdout=20", "epochs=2", "d_emb=16", "n_heads=2"]
    assert cli.main(args + [f"out={model}", f"log={workdir / 'log.csv'}"]) == 0
    return data, model


def test_gen_data_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    code, out, _ = run(capsys, "gen-data", "kind=brachistochrone", "count=25", "seed=7", f"out={a}")
    assert code == 0
    assert out.startswith("# config ")
    cfg = json.loads(out.splitlines()[0][len("# config ") :])
    assert cfg["count"] == 25 and cfg["K"] == 3 and cfg["N"] == 10
    assert "wrote 25 records" in out
    run(capsys, "gen-data", "kind=brachistochrone", "count=25", "seed=7", f"out={b}")
    assert a.read_bytes() == b.read_bytes()
    assert len(orc.Dataset.read(a)) == 25


def test_count_zero_is_argument_error(tmp_path, capsys):
    code, _, err = run(capsys, "gen-data", "count=0", f"out={tmp_path / 'x.txt'}")
    assert code == ArgumentError.exit_code == 2
    assert "error" in err


def test_unknown_key_lists_valid_keys(capsys):
    code, _, err = run(capsys, "gen-data", "colour=blue")
    assert code == 2
    assert "colour" in err and "count" in err and "seed" in err


def test_bad_value_and_unknown_command(capsys):
    assert run(capsys, "gen-data", "count=many")[0] == 2
    assert run(capsys, "fly")[0] == 2
    assert run(capsys, "gen-data", "count")[0] == 2


def test_unwritable_output_is_io_error(capsys):
    code, _, _ = run(capsys, "gen-data", "count=1", "out=/nonexistent/dir/d.txt")
    assert code == cli.IO_EXIT


def test_default_count_depends_on_kind():
    assert cli.KIND_DEFAULTS[pb.BRACHISTOCHRONE] == {"count": 10_000, "epochs": 30}
    assert cli.KIND_DEFAULTS[pb.OBSTACLE] == {"count": 20_000, "epochs": 40}


def test_train_writes_checkpoint_and_log(trained, workdir):
    lines = (workdir / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,mean_loss,wall_seconds" and len(lines) == 3
    from cbpformer.seq2seq import Seq2Seq

    m = Seq2Seq.load(trained[1])
    assert m.meta["train_records"] == 40 and m.meta["final_loss"] > 0


def test_infer_prints_all_control_points(trained, tmp_path, capsys):
    curve = tmp_path / "c.txt"
    code, out, _ = run(capsys, "infer", f"model={trained[1]}", "theta=2.0,1.0", f"out={curve}")
    assert code == 0
    rows = [l for l in out.splitlines() if not l.startswith("#") and not l.startswith("inferred")]
    assert len(rows) == pb.TranscriptionConfig().M + 1
    inst, z = pb.import_warm_start(curve.read_text())
    np.testing.assert_array_equal(inst.theta, [2.0, 1.0])


def test_infer_requires_theta(trained, capsys):
    assert run(capsys, "infer", f"model={trained[1]}")[0] == 2


def test_verify_prints_status(tmp_path, capsys):
    inst = pb.ProblemInstance(pb.OBSTACLE, [0, 0, 6, 0, 3, 0.2])
    curve = tmp_path / "c.txt"
    curve.write_text(pb.export_warm_start(inst, orc.oracle_decision(inst)))
    report = tmp_path / "cert.json"
    code, out, _ = run(capsys, "verify", f"curve={curve}", f"out={report}")
    assert code == 0 and "status Certified" in out
    doc = json.loads(report.read_text())
    assert doc["status"] == vf.CERTIFIED and doc["counterexample"] is None


def test_plan_writes_csvs(tmp_path, capsys):
    prefix = tmp_path / "plan"
    code, out, _ = run(capsys, "plan", f"out={prefix}")
    assert code == 0 and "reached goal" in out
    assert (tmp_path / "plan.json").exists()
    path = (tmp_path / "plan_path.csv").read_text().splitlines()
    assert path[0] == "t,x,y,speed" and len(path) > 10
    assert (tmp_path / "plan_iter000.csv").exists()


def test_plan_non_convergence_exit(tmp_path, capsys):
    code, _, _ = run(capsys, "plan", "max_iterations=1", f"out={tmp_path / 'p'}")
    assert code == 7
    assert (tmp_path / "p.json").exists()


def test_plan_scenario_file(tmp_path, capsys):
    sc = {"start": [0, 0], "destination": [5, 0], "obstacles": []}
    f = tmp_path / "s.json"
    f.write_text(json.dumps(sc))
    code, out, _ = run(capsys, "plan", f"scenario={f}", f"out={tmp_path / 'p'}")
    assert code == 0 and "reached goal in 2 iterations" in out


def test_eval_writes_metrics(trained, tmp_path, capsys):
    out_csv = tmp_path / "m.csv"
    code, out, _ = run(capsys, "eval", f"model={trained[1]}", f"data={trained[0]}", "holdout=20", f"out={out_csv}")
    assert code == 0 and "over 20 records" in out
    rows = out_csv.read_text().splitlines()
    assert rows[0] == "metric,value,unit"
    assert [r.split(",")[0] for r in rows[1:]] == ["trajectory_mse", "cost_violation", "final_loss", "inference_time"]


def test_eval_kind_mismatch_is_configuration_error(trained, tmp_path, capsys):
    other = tmp_path / "o.txt"
    orc.build_dataset(pb.OBSTACLE, 3, seed=1).write(other)
    assert run(capsys, "eval", f"model={trained[1]}", f"data={other}", f"out={tmp_path / 'm.csv'}")[0] == 3


def test_eval_empty_set():
    ds = orc.build_dataset(pb.BRACHISTOCHRONE, 3, seed=1)
    with pytest.raises(ArgumentError):
        cli.evaluate_predictions(ds, [], lambda th: None)


def test_eval_fed_with_oracle_tokens():
    ds = orc.build_dataset(pb.BRACHISTOCHRONE, 30, seed=11)
    fit_err = 0.0
    for i in range(len(ds)):
        fit_err = max(fit_err, orc.brachistochrone_decision(ds.instance(i))[1])

    def oracle_tokens(th):
        return orc.decision_to_tokens(orc.oracle_decision(pb.ProblemInstance(pb.BRACHISTOCHRONE, th)))

    m = cli.evaluate_predictions(ds, range(len(ds)), oracle_tokens)
    assert m["trajectory_mse"] <= fit_err**2
    assert m["cost_violation_pct"] <= 1.0
