import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

import crowdevac as ce
from crowdevac.cli import main
from crowdevac.scenario import ScenarioError, bundled_scenarios, load_scenario

MINIMAL = """
name = "mini"

[model]
n_top = 3
dt = 0.1

[environment]
[[environment.exits]]
pos = [8.0, 0.0]
vis_r = 3.0
cap_r = 0.5

[followers]
count = 12
samples = 40
box = [0.0, -1.0, 2.0, 1.0]

[followers.velocity]
law = "normal"
mean = [0.5, 0.0]
var = [0.05, 0.0]

[leaders]
[[leaders.agents]]
aware = true
beta = 0.8
exit = 1

[objective]
kind = "min_time"

[run]
steps = 120
record_stride = 5
seed = 7

[run.meso]
batch = 10
"""


@pytest.fixture()
def mini(tmp_path):
    path = tmp_path / "mini.toml"
    path.write_text(MINIMAL)
    return path


def test_bundled_test1a_matches_published_setup():
    s = load_scenario("test1a")
    assert s.follower_count == 150
    assert s.n_leaders == 9
    np.testing.assert_allclose(s.env.exit_positions,
                               [[35.0, 10.0], [16.0, 20.0], [10.0, 10.0]])
    assert all(e.visibility_radius == 5.0 for e in s.env.exits)
    assert s.params.n_top == 20
    assert s.params.dt == 0.1
    assert s.params.s2 == 0.4
    assert sum(1 for spec in s.leader_specs if spec.aware) == 3


def test_all_bundled_scenarios_load():
    for name in bundled_scenarios():
        s = load_scenario(name)
        assert s.params.rho_f + s.params.rho_l == 1.0


def test_bad_mass_fractions_rejected(tmp_path):
    bad = MINIMAL.replace("[model]", "[model]\nrho_f = 0.9\nrho_l = 0.2")
    path = tmp_path / "bad.toml"
    path.write_text(bad)
    with pytest.raises(ScenarioError, match="mass constraint"):
        load_scenario(path)


def test_overlapping_disks_rejected(tmp_path):
    bad = MINIMAL + """
[[environment.exits]]
pos = [9.0, 0.0]
vis_r = 3.0
cap_r = 0.5
"""
    path = tmp_path / "bad.toml"
    path.write_text(bad)
    with pytest.raises(ScenarioError, match="disjoint"):
        load_scenario(path)


def test_unknown_key_rejected(tmp_path):
    bad = MINIMAL.replace("[model]", "[model]\nbogus = 1")
    path = tmp_path / "bad.toml"
    path.write_text(bad)
    with pytest.raises(ScenarioError, match="bogus"):
        load_scenario(path)


def test_missing_scenario_is_an_error():
    with pytest.raises(ScenarioError, match="not found"):
        load_scenario("no_such_scenario")


def test_initial_crowd_reproducible(mini):
    s = load_scenario(mini)
    a = s.initial_crowd(3)
    b = s.initial_crowd(3)
    np.testing.assert_array_equal(a.fpos, b.fpos)
    np.testing.assert_array_equal(a.fvel, b.fvel)
    np.testing.assert_array_equal(a.lpos, b.lpos)
    assert abs(a.total_mass() - 1.0) < 1e-12


def _dir_digest(path: Path) -> dict:
    out = {}
    for f in sorted(path.iterdir()):
        if f.is_file() and f.name != "manifest.json":
            out[f.name] = hashlib.sha256(f.read_bytes()).hexdigest()
    return out


@pytest.mark.parametrize("command", ["run-micro", "run-meso"])
def test_cli_run_outputs_and_determinism(mini, tmp_path, command):
    outs = []
    for run_dir in ("a", "b"):
        out = tmp_path / command / run_dir
        rc = main([command, "--scenario", str(mini), "--out", str(out),
                   "--seed", "5", "--steps", "60"])
        assert rc == 0
        for name in ("trajectory.csv", "exits.csv", "series.csv",
                      "congestion.csv", "manifest.json"):
            assert (out / name).exists(), name
        outs.append(_dir_digest(out))
    assert outs[0] == outs[1]  # byte-identical numeric outputs


def test_cli_exits_csv_schema(mini, tmp_path):
    out = tmp_path / "run"
    assert main(["run-micro", "--scenario", str(mini), "--out", str(out),
                 "--steps", "30"]) == 0
    header = (out / "exits.csv").read_text().split("\n")[0]
    assert header == "time,occ_1,evac_1,mean_speed"
    traj_header = (out / "trajectory.csv").read_text().split("\n")[0]
    assert traj_header == "step,agent_id,kind,x,y"


def test_cli_manifest_reproduces_run(mini, tmp_path):
    out = tmp_path / "m"
    assert main(["run-micro", "--scenario", str(mini), "--out", str(out),
                 "--seed", "9", "--steps", "40"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 9
    assert manifest["steps"] == 40
    assert manifest["scenario"]["followers"]["count"] == 12
    assert set(manifest["files"]) >= {"trajectory.csv", "exits.csv",
                                      "series.csv", "congestion.csv"}
    # replay from the manifest alone
    out2 = tmp_path / "m2"
    scn = tmp_path / "replay.toml"
    scn.write_text(mini.read_text())
    assert main(["run-micro", "--scenario", str(scn), "--out", str(out2),
                 "--seed", str(manifest["seed"]),
                 "--steps", str(manifest["steps"])]) == 0
    assert _dir_digest(out) == _dir_digest(out2)


def test_cli_metrics_reformats(mini, tmp_path):
    out = tmp_path / "r"
    assert main(["run-micro", "--scenario", str(mini), "--out", str(out),
                 "--steps", "30"]) == 0
    before = (out / "congestion.csv").read_bytes()
    (out / "congestion.csv").unlink()
    assert main(["metrics", "--out", str(out)]) == 0
    assert (out / "congestion.csv").read_bytes() == before


def test_cli_validate(mini, capsys):
    assert main(["validate", "--scenario", str(mini)]) == 0
    assert "OK mini" in capsys.readouterr().out


def test_cli_validate_failure(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(MINIMAL.replace('count = 12', 'count = 0'))
    assert main(["validate", "--scenario", str(bad)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error:") and "\n" not in err.strip()


def test_cli_optimize_smoke(mini, tmp_path):
    out = tmp_path / "opt"
    rc = main(["optimize", "--scenario", str(mini), "--out", str(out),
               "--iters", "2", "--steps", "50"])
    assert rc == 0
    assert (out / "trace.csv").exists()
    assert (out / "schedule.txt").exists()
    rows = (out / "trace.csv").read_text().strip().split("\n")
    assert rows[0] == "j,candidate_cost,accepted,best_cost"
    assert len(rows) >= 2


def test_cli_meso_density_grids(tmp_path):
    scn = tmp_path / "dens.toml"
    scn.write_text(MINIMAL.replace("batch = 10",
                                   "batch = 10\ndensity_stride = 20"))
    out = tmp_path / "d"
    assert main(["run-meso", "--scenario", str(scn), "--out", str(out),
                 "--steps", "40"]) == 0
    grids = sorted(out.glob("density_*.grid"))
    assert grids, "expected density grid outputs"
    text = grids[0].read_text().split("\n")
    assert text[0].startswith("# origin") and text[2].startswith("# dims")
