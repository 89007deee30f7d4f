import json

import numpy as np
import pytest

from stril.cli import (
    ConfigError,
    DEFAULTS,
    color_ramp,
    load_config,
    main,
    midrank_percentiles,
    parse_overrides,
    plot_representations,
)

TINY = [
    "--game.horizon", "10",
    "--dataset.games_per_ordered_pair", "2",
    "--dataset.label_fraction", "0.5",
    "--pvrnn.epochs", "2",
    "--pvrnn.batch_size", "16",
    "--indicators.el_steps", "10",
    "--bc.epochs", "2",
    "--bc.hidden", "16",
    "--eval.n_games", "2",
]


def cli(cmd, out, *extra):
    return main([cmd, "-q", "--out_dir", str(out), *TINY, *extra])


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipe")
    assert cli("pipeline", out) == 0
    return out


def test_pipeline_writes_every_artifact(run_dir):
    for name in ("dataset.jsonl", "dataset_full.jsonl", "pvrnn.ckpt", "indicators.csv", "kept_ids.txt",
                 "bc_filtered.ckpt", "bc_unfiltered.ckpt", "eval.csv"):
        assert (run_dir / name).exists(), name
    rows = [line.split(",") for line in (run_dir / "eval.csv").read_text().splitlines()[1:]]
    worst = {r[0] for r in rows if r[1] == "WORST"}
    assert worst == {"filtered", "unfiltered"}


def test_manifests_chain(run_dir):
    gen = json.loads((run_dir / "manifest-gen-data.json").read_text())
    ind = json.loads((run_dir / "manifest-indicators.json").read_text())
    pv = json.loads((run_dir / "manifest-train-pvrnn.json").read_text())
    assert ind["inputs"]["dataset.jsonl"] == gen["outputs"]["dataset.jsonl"]
    assert ind["inputs"]["pvrnn.ckpt"] == pv["outputs"]["pvrnn.ckpt"]
    assert gen["seed"] == 0 and gen["config_hash"] == ind["config_hash"]
    assert "time" not in json.dumps(gen)


def test_filter_p1_keeps_everything(run_dir):
    assert cli("filter", run_dir, "--filter.p", "1") == 0
    kept = (run_dir / "kept_ids.txt").read_text().split()
    n = len((run_dir / "dataset.jsonl").read_text().splitlines()) - 1
    assert len(kept) == n == len(set(kept))
    assert cli("filter", run_dir) == 0


def test_gen_data_rerun_is_byte_identical(tmp_path, run_dir):
    assert cli("gen-data", tmp_path) == 0
    assert (tmp_path / "dataset.jsonl").read_bytes() == (run_dir / "dataset.jsonl").read_bytes()


def test_missing_upstream_names_stage(tmp_path, capsys):
    assert cli("train-bc", tmp_path) == 2
    err = capsys.readouterr().err
    assert "stril gen-data" in err


def test_config_errors_name_the_key(tmp_path, capsys):
    assert cli("filter", tmp_path, "--filter.p", "1.5") == 2
    assert "filter.p" in capsys.readouterr().err
    assert cli("filter", tmp_path, "--pvrnn.epochz", "3") == 2
    assert "pvrnn.epochz" in capsys.readouterr().err
    with pytest.raises(ConfigError, match="game.roster"):
        load_config(overrides={"game.roster": "Rock,Nobody"})
    with pytest.raises(ConfigError, match="pvrnn.epochs"):
        load_config(overrides={"pvrnn.epochs": "many"})


def test_toml_file_and_flag_precedence(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('seed = 3\n[filter]\nfield = "ri"\np = 0.5\n[pvrnn]\nepochs = 7\n')
    cfg = load_config(path, parse_overrides(["--filter.p", "0.1", "--seed=4"]))
    assert cfg["filter.field"] == "ri" and cfg["filter.p"] == 0.1 and cfg["seed"] == 4
    assert cfg["pvrnn.epochs"] == 7 and cfg["bc.epochs"] == DEFAULTS["bc.epochs"]
    with pytest.raises(ConfigError):
        parse_overrides(["--filter.p"])


def test_verify_toy_stage(tmp_path):
    assert main(["verify-toy", "-q", "--out_dir", str(tmp_path), "--toy.n_samples", "2000",
                 "--toy.fixture_samples", "20000"]) == 0
    assert (tmp_path / "toy_report.csv").read_text().startswith("check,case,lhs,rhs,passed,note")


def test_plot_stage(run_dir):
    for label in ("demo_id", "ri", "el", "reward"):
        assert cli("plot", run_dir, "--plot.label", label) == 0
        lines = (run_dir / f"reps_{label}.csv").read_text().splitlines()
        assert len(lines) == 1 + len((run_dir / "dataset.jsonl").read_text().splitlines()) - 1


# -- plotting helpers -----------------------------------------------------------------------

def test_pca_on_two_dims_preserves_distances(tmp_path):
    table = np.random.default_rng(0).normal(size=(30, 2))
    ids = [f"t{k}" for k in range(30)]
    xy = plot_representations(ids, table, list(range(30)), "ri", tmp_path / "a.svg", tmp_path / "a.csv")
    d0 = np.linalg.norm(table[:, None] - table[None], axis=2)
    d1 = np.linalg.norm(xy[:, None] - xy[None], axis=2)
    assert np.max(np.abs(d0 - d1)) < 1e-9


def test_constant_labels_have_median_percentile(tmp_path):
    assert np.all(midrank_percentiles([2.0] * 7) == 0.5)
    assert list(midrank_percentiles([3, 1, 2, 2])) == [0.875, 0.125, 0.5, 0.5]
    table = np.random.default_rng(1).normal(size=(5, 2))
    plot_representations(list("abcde"), table, [1.0] * 5, "reward", tmp_path / "b.svg", tmp_path / "b.csv")
    rows = (tmp_path / "b.csv").read_text().splitlines()[1:]
    assert len(rows) == 5 and all(r.endswith(",0.5") for r in rows)


def test_plot_is_deterministic_and_validates(tmp_path):
    table = np.random.default_rng(2).normal(size=(6, 3))
    args = (list("abcdef"), table, [0.1, None, 0.3, 0.2, 0.5, 0.4], "el")
    plot_representations(*args, tmp_path / "1.svg", tmp_path / "1.csv")
    plot_representations(*args, tmp_path / "2.svg", tmp_path / "2.csv")
    assert (tmp_path / "1.svg").read_bytes() == (tmp_path / "2.svg").read_bytes()
    assert (tmp_path / "1.csv").read_bytes() == (tmp_path / "2.csv").read_bytes()
    with pytest.raises(KeyError):
        plot_representations(list("ab"), table[:2], [1, 2], "opp_id", tmp_path / "x.svg", tmp_path / "x.csv")
    with pytest.raises(ValueError):
        plot_representations(["a"], table[:1], [1], "ri", tmp_path / "x.svg", tmp_path / "x.csv")


def test_color_ramp_is_monotone_in_lightness():
    ramp = color_ramp()
    assert len(ramp) == 256 and len(set(ramp)) > 200
    rgb = np.array([[int(c[i : i + 2], 16) for i in (1, 3, 5)] for c in ramp])
    luma = rgb @ np.array([0.299, 0.587, 0.114])
    assert np.all(np.diff(luma) >= -1.0)
