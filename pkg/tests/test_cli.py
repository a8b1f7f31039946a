import csv
import json

import pytest

from upomdp.cli import EXIT_DATA, EXIT_FALSIFIED, EXIT_OK, EXIT_UNKNOWN, main
from upomdp.certify import OptimalitySpec, SafetySpec
from upomdp.modelio import parse_model, parse_policy, serialize_model, serialize_policy, serialize_spec
from upomdp.models import toy_two_state
from upomdp.pomdp import Arbitrary, Point, PointBelief, UncertainPomdp, bvar
from upomdp.polynomial import Polynomial

G1 = Polynomial.var(bvar("q1"))


def write(tmp_path, model, policy, spec=None):
    paths = {"model": tmp_path / "model.json", "policy": tmp_path / "policy.json", "spec": tmp_path / "spec.json"}
    paths["model"].write_text(serialize_model(model))
    paths["policy"].write_text(serialize_policy(policy))
    if spec is not None:
        paths["spec"].write_text(serialize_spec(spec))
    return {k: str(v) for k, v in paths.items()}


def run(capsys, argv):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def safety_args(p, degree=1, *extra):
    return ["check-safety", "--model", p["model"], "--policy", p["policy"], "--spec", p["spec"],
            "--degree", str(degree), "--samples", "5000", *extra]


@pytest.fixture
def toy_files(tmp_path):
    def make(bound, horizon=1):
        m, pol = toy_two_state()
        return write(tmp_path, m, pol, SafetySpec(bound, horizon, g=G1, direction="lower"))
    return make


def test_check_safety_certified(toy_files, capsys):
    code, out, _ = run(capsys, safety_args(toy_files(0.3)))
    assert code == EXIT_OK
    rep = json.loads(out)
    assert rep["result"]["status"] == "certified"
    assert rep["schema"] == 1 and rep["mode"] == "safety"
    assert rep["certificate"]["residual"]["passed"]


def test_check_safety_falsified(toy_files, capsys):
    code, out, _ = run(capsys, safety_args(toy_files(0.5)))
    assert code == EXIT_FALSIFIED
    rep = json.loads(out)
    assert rep["result"]["status"] == "falsified"
    assert rep["result"]["witness"]["value"] < 0.5


def test_check_safety_infeasible_at_low_degree(toy_files, capsys):
    code, out, _ = run(capsys, safety_args(toy_files(0.1, horizon=3)))
    assert code == EXIT_UNKNOWN
    assert json.loads(out)["result"]["status"] == "infeasible"


def test_missing_file(toy_files, capsys, tmp_path):
    p = toy_files(0.3)
    p["model"] = str(tmp_path / "nope.json")
    code, _, err = run(capsys, safety_args(p))
    assert code == EXIT_DATA and "cannot read" in err


def test_bad_usage(capsys):
    with pytest.raises(SystemExit) as e:
        main(["check-safety", "--model", "x"])
    assert e.value.code == EXIT_DATA


def test_wrong_spec_kind(toy_files, capsys):
    p = toy_files(0.3)
    code, _, _ = run(capsys, ["check-optimality", "--model", p["model"], "--policy", p["policy"],
                              "--spec", p["spec"], "--degree", "1"])
    assert code == EXIT_DATA


def absorbing():
    states = ("safe", "other")
    T = {("safe", "a", "safe"): Point(1.0), ("other", "a", "other"): Point(0.5), ("other", "a", "safe"): Point(0.5)}
    O = {("safe", "a", "z"): Point(1.0), ("other", "a", "z"): Point(1.0)}
    R = {("safe", "a"): 0.0, ("other", "a"): 1.0}
    return UncertainPomdp(states, ("a",), ("z",), T, O, PointBelief((1.0, 0.0)), R)


def test_check_optimality_codes(tmp_path, capsys):
    p = write(tmp_path, absorbing(), Arbitrary(), OptimalitySpec.uniform(0.1, 2))
    args = ["check-optimality", "--model", p["model"], "--policy", p["policy"], "--spec", p["spec"],
            "--degree", "1", "--samples", "5000"]
    code, out, _ = run(capsys, args)
    assert code == EXIT_OK, out
    m, pol = toy_two_state()
    p = write(tmp_path, m, pol, OptimalitySpec.uniform(0.5, 1))
    args[2], args[4], args[6] = p["model"], p["policy"], p["spec"]
    code, out, _ = run(capsys, args)
    assert code == EXIT_FALSIFIED
    assert json.loads(out)["result"]["witness"]["value"] > 0.5


def test_gen_rocksample_round_trip(tmp_path, capsys):
    for marginal in (False, True):
        d = tmp_path / ("m" if marginal else "f")
        argv = ["gen-rocksample", "--horizon", "4", "--out-dir", str(d)] + (["--marginal"] if marginal else [])
        code, out, _ = run(capsys, argv)
        assert code == EXIT_OK
        text = (d / "model.json").read_text()
        model = parse_model(text)
        assert serialize_model(model) + "\n" == text
        pol = parse_policy((d / "policy.json").read_text(), model)
        assert serialize_policy(pol) + "\n" == (d / "policy.json").read_text()
    assert len(parse_model((tmp_path / "f" / "model.json").read_text()).states) == 3 * 3 * 4 + 2 * 4  # grid, then goal and slip per type combo


def test_simulate_horizon_zero(toy_files, capsys, tmp_path):
    p = toy_files(0.3)
    c = tmp_path / "s.csv"
    code, out, _ = run(capsys, ["simulate", "--model", p["model"], "--policy", p["policy"], "--horizon", "0",
                                "--trajectories", "50", "--functional", "q1", "--csv", str(c)])
    assert code == EXIT_OK
    rows = list(csv.reader(c.open()))
    assert len(rows) == 2 and float(rows[1][1]) == 1.0 == float(rows[1][3])


def test_bound_grid_and_csv(toy_files, capsys, tmp_path):
    p = toy_files(0.3)
    c = tmp_path / "b.csv"
    code, out, err = run(capsys, ["bound", "--model", p["model"], "--policy", p["policy"], "--functional", "q1",
                                  "--direction", "lower", "--degree", "1,2", "--horizon", "1", "--eps", "0.05",
                                  "--samples", "2000", "--trajectories", "500", "--csv", str(c)])
    assert code == EXIT_OK
    rows = json.loads(out)["result"]["table"]
    for r in rows:
        assert abs(r["bound"] / 0.05 - round(r["bound"] / 0.05)) < 1e-9
        assert r["bound"] <= json.loads(out)["oracle"]["worst"]
    assert len(list(csv.reader(c.open()))) == 3
    assert "degree" in err


def test_bound_degree_validation(toy_files, capsys):
    p = toy_files(0.3)
    code, _, _ = run(capsys, ["bound", "--model", p["model"], "--policy", p["policy"], "--functional", "q1",
                              "--direction", "lower", "--degree", "0", "--horizon", "1"])
    assert code == EXIT_DATA
    code, _, _ = run(capsys, ["bound", "--model", p["model"], "--policy", p["policy"], "--functional", "zz",
                              "--direction", "lower", "--degree", "1", "--horizon", "1"])
    assert code == EXIT_DATA


def strip_timings(text):
    doc = json.loads(text)
    doc.pop("timings", None)
    return json.dumps(doc, sort_keys=True)


@pytest.mark.parametrize("cmd", ["safety", "bound", "simulate"])
def test_deterministic_reports(toy_files, capsys, monkeypatch, cmd):
    p = toy_files(0.3)
    monkeypatch.setenv("UPOMDP_SEED", "17")
    argv = {
        "safety": safety_args(p),
        "bound": ["bound", "--model", p["model"], "--policy", p["policy"], "--functional", "q1", "--direction",
                  "lower", "--degree", "1", "--horizon", "1", "--eps", "0.05", "--samples", "2000",
                  "--trajectories", "300"],
        "simulate": ["simulate", "--model", p["model"], "--policy", p["policy"], "--horizon", "3",
                     "--trajectories", "300", "--functional", "q1"],
    }[cmd]
    first = run(capsys, argv)
    second = run(capsys, argv)
    assert first[0] == second[0]
    assert strip_timings(first[1]) == strip_timings(second[1])
    assert json.loads(first[1])["seeds"]["master"] == 17


def test_bad_seed_env(toy_files, capsys, monkeypatch):
    p = toy_files(0.3)
    monkeypatch.setenv("UPOMDP_SEED", "abc")
    code, _, _ = run(capsys, safety_args(p))
    assert code == EXIT_DATA
