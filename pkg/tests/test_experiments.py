import json

import numpy as np
import pytest

from predrec import cli
from predrec.core import DataError
from predrec.experiments import (
    ConfigError,
    ExperimentConfig,
    load_config,
    read_longleaf,
    run,
    synthetic_longleaf,
    write_longleaf,
)


def _csv_bytes(path):
    return {p.name: p.read_bytes() for p in sorted(path.glob("*.csv"))}


# ---------------------------------------------------------------- config

def test_defaults_per_experiment():
    c = ExperimentConfig("example1-d1")
    assert (c.n, c.T, c.T_list, c.n_seeds, c.gamma, c.n_perms) == (500, 1000, [100, 300, 500, 1000], 5, 1.0, 1)
    assert ExperimentConfig("example2-sphere").n == 2000
    assert ExperimentConfig("convergence-study").T_list == [100, 300, 1000, 3000, 10000]
    m = ExperimentConfig("marked-pp", synthetic=True)
    assert m.T == 20000 and m.rounds == 1 and m.refresh


def test_explicit_T_sets_ladder():
    assert ExperimentConfig("example1-d2", T=50).T_list == [50]


@pytest.mark.parametrize("bad", [
    dict(gamma=0.5), dict(T=0), dict(n_perms=0), dict(df=2.0), dict(inflate=0.9),
    dict(variant="half"), dict(beta_bounds=[0.5, 0.1]), dict(experiment="example4"),
])
def test_config_validation(bad):
    kw = dict(experiment="example1-d1")
    kw.update(bad)
    with pytest.raises(ConfigError):
        ExperimentConfig(**kw)


def test_marked_pp_needs_data():
    with pytest.raises(ConfigError):
        ExperimentConfig("marked-pp")


def test_load_config_yaml_json_and_overrides(tmp_path):
    (tmp_path / "c.yaml").write_text("experiment: example1-d2\nn: 40\nseed: 3\n")
    c = load_config(tmp_path / "c.yaml", seed=9)
    assert (c.experiment, c.n, c.seed) == ("example1-d2", 40, 9)
    (tmp_path / "c.json").write_text(json.dumps({"experiment": "example3-5dim", "T": 77}))
    assert load_config(tmp_path / "c.json").T == 77
    (tmp_path / "bad.yaml").write_text("experiment: example1-d1\nbogus: 1\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "list.yaml")
    with pytest.raises(ConfigError):
        load_config(None, n=3)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


# ---------------------------------------------------------------- longleaf ingestion

def test_synthetic_longleaf_round_trip(tmp_path):
    d = synthetic_longleaf(0)
    assert d.n == 584
    write_longleaf(tmp_path / "ll.csv", d)
    back, report = read_longleaf(tmp_path / "ll.csv")
    assert report == {"accepted": 584, "rejected_small_diameter": 0, "rejected_outside_window": 0}
    np.testing.assert_array_equal(back.values, d.values)


def test_ingest_rejections(tmp_path):
    p = tmp_path / "ll.csv"
    p.write_text("x,y,diameter\n10,20,2.0\n200,20,5\n10,0,5\n10,20,2.5\n\n50,60,30\n")
    d, report = read_longleaf(p)
    assert d.n == 2
    assert report == {"accepted": 2, "rejected_small_diameter": 1, "rejected_outside_window": 2}
    np.testing.assert_array_equal(d.values[:, 2], [2.5, 30.0])


def test_ingest_r_export_with_rownames(tmp_path):
    p = tmp_path / "ll.csv"
    p.write_text('"","x","y","marks"\n"1",200,8.8,32.9\n"2",199.3,10,53.5\n')
    d, report = read_longleaf(p)
    assert d.n == 1 and report["rejected_outside_window"] == 1


def test_ingest_errors(tmp_path):
    p = tmp_path / "ll.csv"
    p.write_text("x,y\n1,2\n")
    with pytest.raises(DataError, match="missing column"):
        read_longleaf(p)
    p.write_text("x,y,diameter\n1,2,3\n1,two,3\n5,5\n")
    with pytest.raises(DataError, match=r"lines \[3, 4\]"):
        read_longleaf(p)
    p.write_text("")
    with pytest.raises(DataError):
        read_longleaf(p)
    with pytest.raises(DataError):
        read_longleaf(tmp_path / "nope.csv")


# ---------------------------------------------------------------- runs

def test_example1_smoke_T1(tmp_path):
    r = run(load_config(None, experiment="example1-d1", T=1, n_seeds=1, n=50, out=str(tmp_path)))
    assert r["rows"][0]["ess"] == 1.0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert set(manifest) >= {"config", "seed", "versions", "wall_time_s"}
    assert json.loads((tmp_path / "results.json").read_text())["seed"] == 0


def test_example1_d2_small_and_deterministic(tmp_path):
    kw = dict(experiment="example1-d2", T_list=[50, 100], n_seeds=2, n=60, n_mc=2000)
    a = run(load_config(None, out=str(tmp_path / "a"), **kw))
    run(load_config(None, out=str(tmp_path / "b"), **kw))
    assert _csv_bytes(tmp_path / "a") == _csv_bytes(tmp_path / "b")
    assert set(a["median_by_T"]) == {"50", "100"}
    assert all(r["kl_method"] == "monte-carlo" for r in a["rows"])


def test_example1_permutation_averaging():
    r = run(load_config(None, experiment="example1-d1", T_list=[200], n_seeds=1, n=40, n_perms=3))
    assert r["rows"][0]["kl"] >= 0


def test_example2_mesh_integrates_and_is_deterministic(tmp_path):
    kw = dict(experiment="example2-sphere", n=300, T=300, mesh=[90, 180])
    r = run(load_config(None, out=str(tmp_path / "a"), **kw))
    assert abs(r["mesh_integral_particle"] - 1) < 1e-2
    assert abs(r["mesh_integral_grid"] - 1) < 1e-2
    run(load_config(None, out=str(tmp_path / "b"), **kw))
    assert _csv_bytes(tmp_path / "a") == _csv_bytes(tmp_path / "b")
    north = np.genfromtxt(tmp_path / "a" / "sphere_particle_north.csv", delimiter=",", names=True)
    south = np.genfromtxt(tmp_path / "a" / "sphere_particle_south.csv", delimiter=",", names=True)
    assert np.all(north["z"] >= 0) and np.all(south["z"] < 0)
    assert len(north) + len(south) == 90 * 180


def test_example2_flat_kernel_sanity():
    r = run(load_config(None, experiment="example2-sphere", n=100, T=100, beta_bounds=[1.0, 1.0],
                        true_beta=1.0, mesh=[30, 60]))
    assert r["ess"] == pytest.approx(100)
    assert r["l1_particle_vs_grid"] < 1e-12


def test_example3_small(tmp_path):
    r = run(load_config(None, experiment="example3-5dim", n=100, T=500, n_seeds=1, n_mc=2000,
                        out=str(tmp_path)))
    row = r["rows"][0]
    assert row["ess_pass2"] is not None and row["kl"] > 0
    q = np.genfromtxt(tmp_path / "quantiles.csv", delimiter=",", names=True)
    assert len(q) == 9
    assert (tmp_path / "mixture_contour.csv").exists()


def test_convergence_small(tmp_path):
    r = run(load_config(None, experiment="convergence-study", T_list=[50, 200], n_seeds=2, n=30,
                        out=str(tmp_path)))
    assert all(v["l1_kde"] >= 0 for v in r["median_by_T"].values())
    assert (tmp_path / "l1_median.csv").read_text().startswith("T,l1_kde,l1_plugin,ess\n50,")


def test_marked_pp_small_synthetic(tmp_path):
    r = run(load_config(None, experiment="marked-pp", synthetic=True, T=2000, out=str(tmp_path)))
    assert r["intensity_total_estimate"] == r["n"] == 584
    for variant in ("full", "reduced"):
        for loc in r["fits"][variant]["locations"].values():
            assert abs(loc["integral"] - 1) < 1e-6
            assert loc["total_variation"] >= 0
    files = sorted(p.name for p in tmp_path.glob("conditional_*.csv"))
    assert len(files) == 8
    g = np.genfromtxt(tmp_path / files[0], delimiter=",", names=True)
    assert len(g) == 400 and g["mark"][-1] == 80.0 and g["mark"][0] > 2
    assert "p0" in json.loads((tmp_path / "manifest.json").read_text())


def test_marked_pp_single_variant_from_file(tmp_path):
    write_longleaf(tmp_path / "ll.csv", synthetic_longleaf(1))
    r = run(load_config(None, experiment="marked-pp", data_path=str(tmp_path / "ll.csv"), T=1000,
                        variant="reduced", refresh=False))
    assert list(r["fits"]) == ["reduced"]
    assert r["data_source"].endswith("ll.csv")


# ---------------------------------------------------------------- CLI

def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["example1", "--gamma", "0.4"]) == 2
    assert cli.main(["fit"]) == 2
    (tmp_path / "bad.csv").write_text("x,y,diameter\n1,2,abc\n")
    assert cli.main(["markedpp", "--data", str(tmp_path / "bad.csv")]) == 3
    assert cli.main(["example2", "--T", "5", "--n", "300"]) == 4
    assert "refresh" in capsys.readouterr().err


def test_cli_runs_and_overrides(tmp_path, capsys):
    (tmp_path / "c.yaml").write_text("experiment: example1-d1\nn: 30\nn_seeds: 1\nT: 20\nseed: 1\n")
    assert cli.main(["fit", "--config", str(tmp_path / "c.yaml"), "--seed", "4",
                     "--out", str(tmp_path / "o")]) == 0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["seed"] == 4 and manifest["config"]["T_list"] == [20]
    assert json.loads(capsys.readouterr().out)["experiment"] == "example1-d1"


def test_cli_synth_longleaf(tmp_path):
    assert cli.main(["synth-longleaf", "--out", str(tmp_path / "s.csv"), "--seed", "2"]) == 0
    assert read_longleaf(tmp_path / "s.csv")[0].n == 584
