import argparse
import json
import os

import pytest

from gsc import cli


def run(argv, capsys=None):
    code = cli.main(argv)
    out = capsys.readouterr() if capsys is not None else None
    return code, out


def _args(command, **kw):
    ns = argparse.Namespace(config=None, **{k: None for k in cli.OPTIONS[command]})
    for k, v in kw.items():
        setattr(ns, k, v)
    return ns


def test_unknown_command_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["no-such-command"])
    assert exc.value.code == cli.EXIT_USAGE


def test_bad_flag_value_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.main(["bound", "--m", "many"])
    assert exc.value.code == cli.EXIT_USAGE


def test_invalid_bound_arguments(capsys):
    code, out = run(["bound", "--epsilon", "2"], capsys)
    assert code == cli.EXIT_USAGE
    assert "usage error" in out.err


def test_missing_model_is_data_error(tmp_path, capsys):
    code, out = run(["eval", "--model", str(tmp_path / "absent.json")], capsys)
    assert code == cli.EXIT_DATA
    assert "data error" in out.err


def test_ppe_without_data_is_data_error(tmp_path, capsys):
    code, _ = run(["experiment-ppe", "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_DATA


def test_unknown_env_is_usage_error(tmp_path, capsys):
    code, _ = run(["gen-data", "--env", "MOON", "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_USAGE


def test_defaults_when_nothing_given():
    o = cli.resolve("bound", _args("bound"))
    assert o == {k: default for k, (_, default) in cli.OPTIONS["bound"].items()}


def test_ini_config_precedence(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[general]\nseed = 7\nepochs = 11\n\n[train]\nepochs = 13\nintercept = no\n")
    o = cli.resolve("train", _args("train", config=str(ini)))
    # command section beats general; general beats defaults
    assert (o["seed"], o["epochs"], o["intercept"]) == (7, 13, False)
    o = cli.resolve("train", _args("train", config=str(ini), epochs=3))
    assert o["epochs"] == 3


def test_json_sidecar_config(tmp_path):
    side = tmp_path / "prev.json"
    side.write_text(json.dumps({"command": "bound", "options": {"r": 3.0, "m": 50}}))
    o = cli.resolve("bound", _args("bound", config=str(side), m=9))
    assert (o["r"], o["m"]) == (3.0, 9)


def test_sidecar_from_other_command_rejected(tmp_path):
    side = tmp_path / "prev.json"
    side.write_text(json.dumps({"command": "train", "options": {}}))
    with pytest.raises(cli.UsageError):
        cli.resolve("bound", _args("bound", config=str(side)))


def test_missing_config_is_usage_error(tmp_path, capsys):
    code, _ = run(["bound", "--config", str(tmp_path / "nope.ini")], capsys)
    assert code == cli.EXIT_USAGE


def test_bad_boolean_in_config(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[train]\nintercept = maybe\n")
    with pytest.raises(cli.UsageError):
        cli.resolve("train", _args("train", config=str(ini)))


def test_bound_prints_table_and_chain(tmp_path, capsys):
    code, out = run(["bound", "--r", "5", "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_OK
    assert "ordering chain: holds" in out.out
    rows = (tmp_path / "bound.csv").read_text().splitlines()
    assert rows[0] == "subclass,rho,bound"
    rho = {r.split(",")[0]: float(r.split(",")[1]) for r in rows[1:]}
    assert rho["GSC"] == 10.0 and rho["GP"] == 7.0


def test_bound_chain_not_applicable_below_two(capsys):
    with pytest.warns(RuntimeWarning, match="r < 2"):
        code, out = run(["bound", "--r", "1"], capsys)
    assert code == cli.EXIT_OK
    assert "not applicable" in out.out


def test_gen_data_train_eval_roundtrip(tmp_path, capsys):
    data, model = tmp_path / "data", tmp_path / "model"
    assert run(["gen-data", "--env", "SC", "--seed", "3", "--out", str(data)], capsys)[0] == 0
    for name in ("train.csv", "test.csv", "gen-data.json"):
        assert (data / name).exists()
    side = json.loads((data / "gen-data.json").read_text())
    assert side["command"] == "gen-data" and side["options"]["seed"] == 3
    code, _ = run(["train", "--env", "SC", "--data", str(data), "--lambda", "0.01", "--epochs", "40",
                   "--out", str(model)], capsys)
    assert code == 0
    spec = json.loads((model / "model.json").read_text())
    assert len(spec["w"]) == 2 and spec["lambda"] == 0.01
    code, out = run(["eval", "--env", "SC", "--data", str(data), "--model", str(model / "model.json")], capsys)
    assert code == 0
    report = json.loads(out.out)
    assert 0.0 <= report["strategic_accuracy"] <= 1.0


def test_gen_data_ppe_tables(tmp_path, capsys):
    assert run(["gen-data", "--env", "PPE", "--out", str(tmp_path)], capsys)[0] == 0
    header = (tmp_path / "ratings.csv").read_text().splitlines()[0]
    assert header == "user_id,item_id,rating"
    assert (tmp_path / "users.csv").read_text().startswith("user_id,f0")


def test_gen_data_is_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        run(["gen-data", "--env", "NL", "--seed", "5", "--out", str(tmp_path / name)], capsys)
    for f in ("train.csv", "test.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_sidecar_rerun_is_byte_identical(tmp_path, capsys):
    first, second = tmp_path / "first", tmp_path / "second"
    code, _ = run(["experiment-generalization", "--env", "NL", "--n-seeds", "2", "--epochs", "5",
                   "--lambda", "0.1", "--out", str(first)], capsys)
    assert code == 0
    code, _ = run(["experiment-generalization", "--config", str(first / "generalization_NL.json"),
                   "--out", str(second)], capsys)
    assert code == 0
    for name in ("generalization_NL.csv", "generalization_NL_seeds.csv", "generalization_NL.svg"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_unwritable_output_dir(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code, _ = run(["bound", "--out", os.path.join(str(blocker), "sub")], capsys)
    assert code == cli.EXIT_USAGE
