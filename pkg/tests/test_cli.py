import csv
from pathlib import Path

import numpy as np
import pytest
import tomli

from rpencounter.cli import main
from rpencounter.scenario import ScenarioError, parse_scenario, render_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "demos" / "scenarios"

MINIMAL = """
[system]
nuclei = [{radical = 1, spin = 0.5, hyperfine = 1.0}]

[reaction.rates]
mode = "triplet_symmetric"
r = {S = 1.0, T = 0.2}

[run]
mode = "me"
t_grid = {start = 0.0, stop = 2.0, num = 5}
"""

VON_NEUMANN = """
[system]
nuclei = []

[reaction.encounter]
mode = "triplet_symmetric_no_t_dephasing"
kappa = 1.5707963267948966
pi = {S = 1.0, T = 1.0}

[rate]
r = 1.0

[run]
t_grid = {start = 0.0, stop = 3.0, num = 4}
n_traj = 40
"""


def write(tmp_path, text, name="s.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


def test_minimal_scenario_parses():
    sc = parse_scenario(MINIMAL)
    assert sc.reaction_kind == "rates"
    assert sc.run["mode"] == "me"


def test_both_reaction_blocks_rejected():
    text = MINIMAL.replace("[run]", '[reaction.encounter]\nkappa = 1.0\npi = {S = 1.0}\n\n[run]')
    with pytest.raises(ScenarioError, match="exactly one reaction model"):
        parse_scenario(text)


def test_unknown_key_names_the_field():
    with pytest.raises(ScenarioError, match="colour"):
        parse_scenario(MINIMAL.replace("[run]", "[run]\ncolour = 3"))


def test_parse_error_has_position():
    with pytest.raises(ScenarioError, match=r"line 3, column"):
        parse_scenario("[system]\nnuclei = []\nfield = [1, 2 3]\n")


def test_semantic_errors():
    with pytest.raises(ScenarioError):
        parse_scenario(MINIMAL.replace('r = {S = 1.0, T = 0.2}', 'r = {S = -1.0, T = 0.2}'))
    with pytest.raises(ScenarioError):
        parse_scenario(MINIMAL.replace('mode = "me"', 'mode = "plot"'))


@pytest.mark.parametrize("path", sorted(SCENARIOS.glob("*.toml")), ids=lambda p: p.stem)
def test_round_trip(path):
    sc = parse_scenario(path.read_text())
    again = parse_scenario(render_scenario(sc))
    assert again == sc
    assert render_scenario(again) == render_scenario(sc)


def test_me_run_writes_csv_and_metadata(tmp_path):
    out = tmp_path / "me"
    assert main(["me", "--scenario", str(write(tmp_path, MINIMAL)), "--out", str(out)]) == 0
    header, rows = read_csv(out / "me.csv")
    assert header[0] == "t" and "Q_S" in header and len(rows) == 5
    trace = np.array([float(r[header.index("trace")]) for r in rows])
    assert np.all(np.diff(trace) <= 1e-12)
    meta = tomli.loads((out / "metadata.toml").read_text())
    assert meta["command"] == "me" and "wall_time_s" in meta and "version" in meta
    # the run replays from its own output directory
    out2 = tmp_path / "replay"
    assert main(["me", "--scenario", str(out / "scenario.toml"), "--out", str(out2)]) == 0
    assert (out / "me.csv").read_bytes() == (out2 / "me.csv").read_bytes()


def test_dark_ideal_detection(tmp_path):
    out = tmp_path / "dark"
    assert main(["dark", "--scenario", str(SCENARIOS / "dark_ideal.toml"), "--out", str(out)]) == 0
    header, rows = read_csv(out / "dark.csv")
    assert header == ["rt", "pD", "pRD", "pR_given_D"]
    data = np.array(rows, dtype=float)
    cond = data[:, 3]
    k = np.nonzero(cond < 0.5)[0][0]
    assert 22.9 < data[k - 1, 0] < data[k, 0] < 23.2


def test_classify_von_neumann(tmp_path, capsys, caplog):
    out = tmp_path / "cls"
    with caplog.at_level("INFO"):
        assert main(["classify", "--scenario", str(write(tmp_path, VON_NEUMANN)), "--out", str(out)]) == 0
    assert "Bright/VonNeumann" in capsys.readouterr().out
    assert "Bright/VonNeumann" in caplog.text


def test_seed_required_for_stochastic_modes(tmp_path):
    assert main(["traj", "--scenario", str(write(tmp_path, VON_NEUMANN)), "--out", str(tmp_path / "t")]) == 2


def test_ensemble_reruns_are_byte_identical(tmp_path):
    path = write(tmp_path, VON_NEUMANN)
    outs = []
    for i, threads in enumerate(("1", "2")):
        out = tmp_path / f"e{i}"
        assert main(["ensemble", "--scenario", str(path), "--seed", "77", "--out", str(out),
                     "--threads", threads]) == 0
        outs.append(out)
    for name in ("ensemble.csv", "ensemble_clicks.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    meta = tomli.loads((outs[0] / "metadata.toml").read_text())
    assert meta["seed"] == 77


def test_traj_run(tmp_path):
    out = tmp_path / "traj"
    assert main(["traj", "--scenario", str(write(tmp_path, VON_NEUMANN)), "--seed", "3", "--out", str(out)]) == 0
    header, rows = read_csv(out / "traj.csv")
    assert len(rows) == 4


def test_numerical_failure_exit_code(tmp_path):
    text = VON_NEUMANN.replace("n_traj = 40", 'n_traj = 40\nconditioning = "dark"\npolicy = "abort"')
    assert main(["ensemble", "--scenario", str(write(tmp_path, text)), "--seed", "1",
                 "--out", str(tmp_path / "x")]) == 3


def test_validation_exit_code(tmp_path):
    assert main(["me", "--scenario", str(write(tmp_path, "[system\n")), "--out", str(tmp_path / "x")]) == 2
    assert main(["me", "--scenario", str(tmp_path / "missing.toml")]) == 2
    # rate equations cannot be classified as an encounter
    assert main(["classify", "--scenario", str(write(tmp_path, MINIMAL)), "--out", str(tmp_path / "y")]) == 2


def test_oracle_mode(tmp_path, capsys):
    for name in ("haberkorn_me.toml", "dark_ideal.toml"):
        out = tmp_path / name
        assert main(["oracle", "--scenario", str(SCENARIOS / name), "--out", str(out)]) == 0
        text = capsys.readouterr().out
        assert "PASS" in text and "FAIL" not in text
        assert (out / "oracle.csv").exists()


def test_yield_mode(tmp_path):
    out = tmp_path / "y"
    assert main(["yield", "--scenario", str(SCENARIOS / "yield_sweep.toml"), "--out", str(out)]) == 0
    header, rows = read_csv(out / "yield.csv")
    assert header[:3] == ["B", "angle_deg", "Phi_S"]
    assert len(rows) == 4
    assert all(0 <= float(r[2]) <= 1 for r in rows)
