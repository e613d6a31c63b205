import json

import numpy as np
import pytest

from subgroupkit.cli import main
from subgroupkit.data_model import Dataset, Outcome, TreatmentVector, write_dataset
from subgroupkit.serialize import dump_json, load_json


@pytest.fixture()
def workdir(tmp_path):
    rng = np.random.default_rng(0)
    n, p = 300, 6
    x = rng.normal(size=(n, p))
    t01 = rng.binomial(1, 0.5, n)
    y = x[:, 0] * (2 * t01 - 1) + rng.normal(size=n)
    ds = Dataset(x=x, outcome=Outcome.continuous(y),
                 trt=TreatmentVector.from_labels(np.where(t01 == 1, "Trt", "Ctrl")))
    data_path = tmp_path / "data.csv"
    write_dataset(ds, data_path)
    cfg = {
        "data": {"path": str(data_path),
                 "schema": {"outcome": {"value": "y"}, "treatment": "trt"}},
        "recipe": {"loss": "sq_loss", "method": "weighting",
                   "propensity": {"kind": "constant", "value": 0.5},
                   "penalty": None, "cutpoint": 0},
        "validation": {"method": "train_test", "B": 4, "train_fraction": 0.75,
                       "quantiles": [0.5]},
        "seed": 7,
        "output_dir": str(tmp_path / "out"),
    }
    cfg_path = tmp_path / "config.json"
    dump_json(cfg, cfg_path)
    return tmp_path, cfg_path, data_path


def test_fit_writes_model_and_summary(workdir, capsys):
    tmp, cfg, data = workdir
    assert main(["fit", str(cfg)]) == 0
    model = load_json(tmp / "out" / "model.json")
    assert model["kind"] == "subgroupkit_model"
    assert (tmp / "out" / "summary.txt").exists()
    text = (tmp / "out" / "summary.txt").read_text()
    assert "biased" in text  # the overfitting caveat is always printed


def test_fit_deterministic_bytes(workdir):
    tmp, cfg, data = workdir
    assert main(["fit", str(cfg)]) == 0
    first = (tmp / "out" / "model.json").read_bytes()
    assert main(["fit", str(cfg)]) == 0
    assert (tmp / "out" / "model.json").read_bytes() == first


def test_predict_roundtrip_matches_training_scores(workdir):
    tmp, cfg, data = workdir
    main(["fit", str(cfg)])
    out = tmp / "scores.csv"
    assert main(["predict", str(tmp / "out" / "model.json"), str(data),
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    header = lines[0].split(",")
    assert header[0].startswith("score_") and "recommended" in header
    # score column reproduces the linear predictor over the training rows
    model = load_json(tmp / "out" / "model.json")
    coefs = np.asarray(model["coefficients"])[0]
    import csv as _csv

    with open(data, newline="") as fh:
        rows = list(_csv.DictReader(fh))
    x = np.asarray([[float(r[c]) for c in model["covariate_names"]] for r in rows])
    expect = coefs[0] + x @ coefs[1:]
    got = np.asarray([float(line.split(",")[0]) for line in lines[1:]])
    assert np.allclose(got, expect)


def test_predict_missing_column_errors(workdir, tmp_path):
    tmp, cfg, data = workdir
    main(["fit", str(cfg)])
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert main(["predict", str(tmp / "out" / "model.json"), str(bad)]) == 2


def test_validate_deterministic_and_sliceable(workdir):
    tmp, cfg, data = workdir
    main(["fit", str(cfg)])
    assert main(["validate", str(cfg), str(tmp / "out" / "model.json")]) == 0
    rep1 = (tmp / "out" / "report.json").read_bytes()
    assert main(["validate", str(cfg), str(tmp / "out" / "model.json")]) == 0
    assert (tmp / "out" / "report.json").read_bytes() == rep1
    report = json.loads(rep1)
    assert report["B"] == 4
    assert len(report["by_quantile"]) == 1
    assert (tmp / "out" / "report_cells.csv").exists()


def test_check_overlap_ok_and_strict(workdir, tmp_path):
    tmp, cfg, data = workdir
    assert main(["check-overlap", str(cfg)]) == 0
    assert (tmp / "out" / "overlap.csv").exists()
    header = (tmp / "out" / "overlap.csv").read_text().splitlines()[0]
    assert header == "level,bin_lo,bin_hi,count,density"

    # disjoint-support data must fail under --strict
    rng = np.random.default_rng(1)
    n = 200
    x1 = np.concatenate([rng.uniform(-3, -1, n // 2), rng.uniform(1, 3, n // 2)])
    t01 = (x1 > 0).astype(int)
    y = rng.normal(size=n)
    ds = Dataset(x=np.column_stack([x1, rng.normal(size=n)]),
                 outcome=Outcome.continuous(y),
                 trt=TreatmentVector.from_labels(t01))
    path = tmp_path / "sep.csv"
    write_dataset(ds, path)
    cfg2 = load_json(cfg)
    cfg2["data"]["path"] = str(path)
    cfg2["recipe"]["propensity"] = {"kind": "plain_logistic"}
    cfg2_path = tmp_path / "sep_config.json"
    dump_json(cfg2, cfg2_path)
    assert main(["check-overlap", str(cfg2_path), "--strict"]) == 1


def test_summarize_threshold_behaviour(workdir):
    tmp, cfg, data = workdir
    main(["fit", str(cfg)])
    assert main(["summarize", str(cfg), str(tmp / "out" / "model.json"),
                 "--p-threshold", "1.0"]) == 0
    lines = (tmp / "out" / "subgroups.csv").read_text().splitlines()
    assert len(lines) == 1 + 6  # all covariates at threshold 1.0
    assert "adjusted" not in lines[0] and "p_value" not in lines[0]


def test_summarize_plot_data(workdir):
    tmp, cfg, data = workdir
    main(["fit", str(cfg)])
    assert main(["summarize", str(cfg), str(tmp / "out" / "model.json"),
                 "--plot-data", "interaction", "conditional"]) == 0
    assert (tmp / "out" / "plot_interaction.csv").exists()
    assert (tmp / "out" / "plot_conditional.csv").exists()


def test_unknown_config_key_rejected(workdir, tmp_path):
    tmp, cfg, data = workdir
    raw = load_json(cfg)
    raw["recipe"]["typo_key"] = 1
    bad = tmp_path / "bad.json"
    dump_json(raw, bad)
    assert main(["fit", str(bad)]) == 2


def test_missing_outcome_column_exit_code(workdir, tmp_path):
    tmp, cfg, data = workdir
    raw = load_json(cfg)
    raw["data"]["schema"]["outcome"] = {"value": "nope"}
    bad = tmp_path / "bad2.json"
    dump_json(raw, bad)
    assert main(["fit", str(bad)]) == 2


def test_simulate_deterministic(tmp_path):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    args = ["simulate", "--kind", "sim3", "--n", "50", "--p", "42",
            "--seed", "5"]
    assert main(args + ["--out", str(out1)]) == 0
    assert main(args + ["--out", str(out2)]) == 0
    assert (out1 / "data.csv").read_bytes() == (out2 / "data.csv").read_bytes()
    assert (out1 / "truth.csv").read_bytes() == (out2 / "truth.csv").read_bytes()


def test_simulate_sim4_files(tmp_path):
    out = tmp_path / "s4"
    assert main(["simulate", "--kind", "sim4", "--n", "60", "--n-test", "40",
                 "--p", "41", "--seed", "2", "--out", str(out)]) == 0
    for name in ["train.csv", "test.csv", "truth_train.csv", "truth_test.csv"]:
        assert (out / name).exists()


def test_refit_from_serialized_recipe_matches(workdir):
    # fit via CLI, rebuild the recipe from model.json, refit in-process:
    # identical coefficients for the same data and seed
    tmp, cfg, data = workdir
    main(["fit", str(cfg)])
    d = load_json(tmp / "out" / "model.json")
    from subgroupkit.data_model import load_dataset
    from subgroupkit.fitting import fit_subgroup
    from subgroupkit.serialize import recipe_from_config

    cfg_raw = load_json(cfg)
    ds = load_dataset(cfg_raw["data"]["path"], cfg_raw["data"]["schema"])
    refit = fit_subgroup(ds, recipe_from_config(d["recipe"]), seed=d["seed"])
    assert np.allclose(refit.coefficients, np.asarray(d["coefficients"]))


def test_nonconvergence_exit_code(tmp_path):
    # separated survival data drives the Cox fit into the monotone-likelihood
    # guard, which must surface as the numerical-failure exit code
    import numpy as np

    from subgroupkit.data_model import Dataset, Outcome, TreatmentVector, write_dataset

    base = np.array([1.0, 2.0, 3.0, 10.0, 11.0, 12.0])
    time = np.concatenate([base + 0.01 * k for k in range(4)])
    status = np.ones(24)
    trt01 = np.tile([1, 1, 1, 0, 0, 0], 4)  # treated always fail first
    rng = np.random.default_rng(0)
    ds = Dataset(x=rng.normal(size=(24, 1)),
                 outcome=Outcome.survival(time, status),
                 trt=TreatmentVector.from_labels(trt01))
    path = tmp_path / "sep.csv"
    write_dataset(ds, path)
    cfg = {
        "data": {"path": str(path),
                 "schema": {"outcome": {"time": "time", "status": "status"},
                            "treatment": "trt"}},
        "recipe": {"loss": "cox_loss",
                   "propensity": {"kind": "constant", "value": 0.5},
                   "penalty": None},
        "seed": 0,
        "output_dir": str(tmp_path / "out"),
    }
    cfg_path = tmp_path / "cfg.json"
    dump_json(cfg, cfg_path)
    assert main(["fit", str(cfg_path)]) == 3
