import json

import numpy as np
import pytest

from mfposterior import cli
from mfposterior.data import Dataset
from mfposterior.errors import ConfigurationError, NumericalError
from mfposterior.inference import PosteriorGrid


def _config(tmp_path, **kw):
    cfg = {"problem": "analytical", "methods": ["A", "B", "F"], "n": 40, "epochs": 30,
           "flow_epochs": 20, "grid_resolution": 20, "seeds": [0]}
    cfg.update(kw)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def _run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = _config(root, methods=["A", "B", "C", "D", "E", "F"], seeds=[0, 1])
    out = root / "out"
    for verb in ("generate", "fit", "posterior"):
        assert _run(verb, cfg, "--out", out) == 0
    return root, cfg, out


def test_generate_split_sizes(tmp_path):
    out = tmp_path / "o"
    assert _run("generate", _config(tmp_path, n=100), "--out", out) == 0
    d = Dataset.load(out / "seed_0" / "dataset.csv")
    assert (len(d.train_idx), len(d.test_idx)) == (75, 25)


def test_generate_lhs_with_explicit_train_count(tmp_path):
    out = tmp_path / "o"
    cfg = _config(tmp_path, n=575, n_train=75, sampling_scheme="lhs")
    assert _run("generate", cfg, "--out", out) == 0
    d = Dataset.load(out / "seed_0" / "dataset.csv")
    assert (len(d.train_idx), len(d.test_idx)) == (75, 500)


def test_generate_is_deterministic(tmp_path):
    cfg = _config(tmp_path)
    _run("generate", cfg, "--out", tmp_path / "a")
    _run("generate", cfg, "--out", tmp_path / "b")
    a = (tmp_path / "a" / "seed_0" / "dataset.csv").read_bytes()
    assert a == (tmp_path / "b" / "seed_0" / "dataset.csv").read_bytes()


def test_pipeline_outputs(pipeline):
    _, _, out = pipeline
    for seed in (0, 1):
        sdir = out / f"seed_{seed}"
        for m in "ABCDEF":
            assert (sdir / f"grid_{m}.npz").exists()
            man = json.loads((sdir / f"manifest_{m}.json").read_text())
            assert man["seed"] == seed and "posterior" in man["timings"]
        a = PosteriorGrid.load(sdir / "grid_A.npz")
        assert abs(a.integral() - 1) < 1e-12


def test_method_a_against_itself_is_zero(pipeline):
    man = json.loads((pipeline[2] / "seed_0" / "manifest_A.json").read_text())
    assert man["metrics"]["hellinger"] == 0.0


def test_no_hidden_hf_calls(pipeline):
    sdir = pipeline[2] / "seed_0"
    for m in "BCDEF":
        assert json.loads((sdir / f"manifest_{m}.json").read_text())["metrics"]["hf_calls_posterior"] == 0
    assert json.loads((sdir / "manifest_A.json").read_text())["metrics"]["hf_calls_posterior"] == 400


def test_method_f_manifest_records_alpha_and_flow(pipeline):
    man = json.loads((pipeline[2] / "seed_0" / "manifest_F.json").read_text())
    assert len(man["metrics"]["alpha"]) == 1
    assert np.isfinite(man["metrics"]["flow_test_loglik"])
    fit = json.loads((pipeline[2] / "seed_0" / "fit_F.json").read_text())
    assert fit["info"]["seed"] == 0 and fit["info"]["epochs"] == 30


def test_rerun_reproduces_metrics_bitwise(pipeline, tmp_path):
    _, cfg, out = pipeline
    other = tmp_path / "again"
    for verb in ("generate", "fit", "posterior"):
        assert _run(verb, cfg, "--out", other) == 0
    for seed in (0, 1):
        a_dir, b_dir = out / f"seed_{seed}", other / f"seed_{seed}"
        for m in "ABCDEF":
            a = json.loads((a_dir / f"manifest_{m}.json").read_text())
            b = json.loads((b_dir / f"manifest_{m}.json").read_text())
            assert a["config_hash"] == b["config_hash"]
            assert a["metrics"] == b["metrics"]
            if m != "A":
                assert (a_dir / f"fit_{m}.json").read_bytes() == (b_dir / f"fit_{m}.json").read_bytes()
            ga = PosteriorGrid.load(a_dir / f"grid_{m}.npz")
            np.testing.assert_array_equal(ga.density, PosteriorGrid.load(b_dir / f"grid_{m}.npz").density)


def test_config_hash_ignores_output_only():
    base = dict(cli.DEFAULTS, output="x")
    assert cli.config_hash(base) == cli.config_hash(dict(base, output="y"))
    assert cli.config_hash(base) != cli.config_hash(dict(base, n=101))


def test_report_mean_and_std(pipeline):
    text = cli.cmd_report([str(pipeline[2])])
    lines = [l.split("\t") for l in text.strip().splitlines()]
    header, rows = lines[0], {r[0]: r for r in lines[1:]}
    assert set(rows) == set("ABCDEF")
    b = rows["B"]
    assert b[header.index("runs")] == "2"
    assert b[header.index("hellinger_std")] != ""
    assert rows["A"][header.index("hellinger_mean")] == "0"


def test_report_single_manifest_has_blank_std(pipeline):
    text = cli.cmd_report([str(pipeline[2] / "seed_0" / "manifest_B.json")])
    header, row = [l.split("\t") for l in text.strip().splitlines()]
    assert row[header.index("hellinger_mean")] != ""
    assert row[header.index("hellinger_std")] == ""


def _manifest(problem, method="B", **metrics):
    return {"problem": problem, "method": method, "metrics": metrics, "timings": {"fit": 1.0}}


def test_report_borehole_has_rescaled_trace_column():
    cols, rows = cli.aggregate([_manifest("borehole", kl=0.1, trace=5.0, rescaled_trace=0.2),
                                _manifest("borehole", kl=0.2, trace=6.0, rescaled_trace=0.4)])
    assert "rescaled_trace_mean" in cols
    assert rows[0][cols.index("rescaled_trace_mean")] == "0.3"
    assert "rescaled_trace_mean" not in cli.aggregate([_manifest("analytical", trace=1.0)])[0]


def test_report_rejects_mixed_benchmarks(tmp_path):
    with pytest.raises(ConfigurationError):
        cli.aggregate([_manifest("borehole"), _manifest("analytical")])
    for i, p in enumerate(("borehole", "analytical")):
        (tmp_path / f"manifest_{i}.json").write_text(json.dumps(_manifest(p)))
    assert _run("report", tmp_path) == 2


def test_configuration_errors_exit_2(tmp_path, capsys):
    assert _run("generate", tmp_path / "missing.json") == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"problem": "analytical", "colour": "red"}))
    assert _run("generate", bad) == 2
    assert _run("fit", _config(tmp_path), "--out", tmp_path / "empty") == 2
    assert _run("generate", _config(tmp_path), "--method", "Z") == 2
    assert "configuration error" in capsys.readouterr().err


def test_numerical_failure_exits_3(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NumericalError("posterior is zero at every grid node")
    monkeypatch.setattr(cli, "run_grid", boom)
    cfg = _config(tmp_path, methods=["A"])
    assert _run("generate", cfg, "--out", tmp_path / "o") == 0
    assert _run("posterior", cfg, "--out", tmp_path / "o") == 3


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert _run("generate", _config(tmp_path)) == 0
    assert (tmp_path / "env" / "analytical" / "seed_0" / "dataset.csv").exists()


def test_flag_overrides(tmp_path):
    args = cli.build_parser().parse_args(["fit", _config(tmp_path), "--method", "B,D", "--seed", "3,4",
                                          "--n", "60", "--grid-res", "30", "--chains", "6",
                                          "--iters", "500", "--gr-threshold", "1.05"])
    cfg = cli.load_config(args.config, args)
    assert cfg["methods"] == ["B", "D"] and cfg["seeds"] == [3, 4] and cfg["n"] == 60
    assert (cfg["grid_resolution"], cfg["chains"], cfg["iterations"], cfg["gr_threshold"]) == (30, 6, 500, 1.05)


def test_rationale_emits_sixteen_grids(tmp_path):
    cfg = _config(tmp_path, problem="rationale", methods=["F"], flow_epochs=10, grid_resolution=15)
    out = tmp_path / "r"
    assert _run("posterior", cfg, "--out", out) == 0
    grids = sorted((out / "seed_0").glob("grid_F_*.npz"))
    assert len(grids) == 16
    mans = [json.loads(p.read_text()) for p in (out / "seed_0").glob("manifest_F_*.json")]
    assert sum("hellinger_vs_A" in m["metrics"] for m in mans) == 3


@pytest.mark.filterwarnings("ignore:duplicate samples")
def test_sampled_pipeline_on_circuit(tmp_path):
    cfg = _config(tmp_path, problem="circuit", methods=["A", "B"], n=20, epochs=10,
                  iterations=200, kl_samples=300)
    out = tmp_path / "c"
    for verb in ("generate", "fit"):
        assert _run(verb, cfg, "--out", out) == 0
    with pytest.warns(RuntimeWarning, match="Gelman-Rubin"):
        assert _run("posterior", cfg, "--out", out, "--gr-threshold", 1.0) == 0
    sdir = out / "seed_0"
    assert (sdir / "samples_A.csv").exists() and (sdir / "samples_B.csv").exists()
    man = json.loads((sdir / "manifest_B.json").read_text())
    assert len(man["metrics"]["diag"]) == 3 and len(man["metrics"]["gelman_rubin"]) == 3
    assert np.isfinite(man["metrics"]["kl"]) and man["metrics"]["hf_calls_posterior"] == 0
    text = cli.cmd_report([str(out)])
    assert "diag_mean" in text.splitlines()[0]
