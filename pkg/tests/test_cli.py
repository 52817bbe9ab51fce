import csv

import numpy as np
import pytest

from daforge import cli
from daforge.baseline import build_vanilla
from daforge.checkpoint import save_checkpoint
from daforge.data import TARGET, Dataset, load_wmd, save_wmd
from daforge.errors import NumericError
from daforge.metrics import MetricsReport

SMALL = """
# a grid that finishes in seconds
synth.source_counts = 12,12,12,12
synth.target_counts = 30,6,6,6
sizes = 12
repeats = 2
iterations = 6
batch_size = 8
epochs = 2
vanilla_filters = 2,2,2
vanilla_hidden = 4,4
ae_epochs = 1
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return str(path)


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_synth_writes_loadable_files(tmp_path, small_config):
    assert run("--config", small_config, "--out-dir", tmp_path / "a", "synth") == 0
    src, tgt = load_wmd(tmp_path / "a" / "source.wmd"), load_wmd(tmp_path / "a" / "target.wmd")
    np.testing.assert_array_equal(src.class_counts(), [12] * 4)
    np.testing.assert_array_equal(tgt.class_counts(), [30, 6, 6, 6])
    assert (tmp_path / "a" / "target.names").exists()


def test_synth_is_reproducible(tmp_path, small_config):
    for d in ("a", "b"):
        assert run("--config", small_config, "--seed", 4, "--out-dir", tmp_path / d, "synth") == 0
    for name in ("source.wmd", "target.wmd"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_synth_spec_file(tmp_path):
    spec = tmp_path / "spec.txt"
    spec.write_text("n_classes = 3\nsource_counts = 2,2,2\ntarget_counts = 10,1,1\n")
    assert run("--out-dir", tmp_path, "synth", spec) == 0
    np.testing.assert_array_equal(load_wmd(tmp_path / "target.wmd").class_counts(), [10, 1, 1])


def test_synth_invalid_spec_exit_2(tmp_path, capsys):
    spec = tmp_path / "spec.txt"
    spec.write_text("target_shape = 4,4\n")
    assert run("--out-dir", tmp_path, "synth", spec) == 2
    assert "too small" in capsys.readouterr().err


def test_unwritable_out_dir_exit_2(tmp_path, small_config):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run("--config", small_config, "--out-dir", blocker / "sub", "synth") == 2


def test_unknown_config_key_exit_2(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key = 1\n")
    assert run("--config", bad, "--out-dir", tmp_path, "synth") == 2


@pytest.fixture
def target_file(tmp_path, small_config):
    run("--config", small_config, "--out-dir", tmp_path / "data", "synth")
    return tmp_path / "data" / "target.wmd"


def test_augment_to_max(tmp_path, small_config, target_file, capsys):
    out = tmp_path / "aug.wmd"
    code = run("--config", small_config, "augment", target_file, out, "--target-total", "max")
    assert code == 0
    before, after = load_wmd(target_file), load_wmd(out)
    np.testing.assert_array_equal(after.class_counts(), [30] * 4)
    np.testing.assert_array_equal(after.maps[:len(before)], before.maps)
    assert len(after) > len(before)
    assert "before" in capsys.readouterr().out


def test_augment_add_per_class_skip(tmp_path, small_config, target_file):
    out = tmp_path / "aug.wmd"
    code = run("--config", small_config, "augment", target_file, out, "--add-per-class", 5,
               "--skip-class", "center")
    assert code == 0
    np.testing.assert_array_equal(load_wmd(out).class_counts(), [30, 11, 11, 11])


def test_augment_empty_class_exit_3(tmp_path, small_config):
    ds = Dataset(np.zeros((4, 8, 8), dtype=np.uint8), [0, 0, 1, 1], ("a", "b", "c"), TARGET)
    save_wmd(ds, tmp_path / "t.wmd")
    assert run("--config", small_config, "augment", tmp_path / "t.wmd", tmp_path / "o.wmd") == 3


def test_augment_missing_input_exit_2(tmp_path):
    assert run("augment", tmp_path / "missing.wmd", tmp_path / "o.wmd") == 2


@pytest.mark.parametrize("method", ["da", "vanilla"])
def test_train_then_eval(tmp_path, small_config, method, capsys):
    out = tmp_path / method
    assert run("--config", small_config, "--out-dir", out, "train", "--method", method) == 0
    with open(out / "curves.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1 + (6 if method == "da" else 2)
    capsys.readouterr()
    metrics = tmp_path / "metrics.csv"
    assert run("eval", out / "model.ckpt", out / "target_test.wmd", "--csv", metrics) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    rep = MetricsReport.from_csv_row(lines[0].split(","), lines[1].split(","))
    assert 0.0 <= rep.balanced_accuracy <= 1.0 and rep.test_seconds >= 0
    with open(metrics) as fh:
        assert len(list(csv.reader(fh))) == 2


def test_train_with_files_and_augment(tmp_path, small_config, target_file):
    source = target_file.with_name("source.wmd")
    code = run("--config", small_config, "--out-dir", tmp_path / "m", "train", "--method", "da",
               "--source", source, "--target", target_file, "--split", "--augment", "--n", 20)
    assert code == 0
    assert (tmp_path / "m" / "model.ckpt").exists()


def test_eval_fresh_nine_class_model_is_chance(tmp_path):
    model = build_vanilla((8, 8, 3), 9, filters=(2, 2, 2), hidden=(4, 4), seed=0)
    save_checkpoint(tmp_path / "m.ckpt", model)
    rng = np.random.default_rng(0)
    labels = np.repeat(np.arange(9), 20)
    ds = Dataset(rng.integers(0, 3, (len(labels), 8, 8)), labels,
                 tuple(f"c{i}" for i in range(9)), TARGET)
    save_wmd(ds, tmp_path / "t.wmd")
    report = MetricsReport.from_predictions(labels, model.predict(ds.x).argmax(axis=1), 9)
    assert report.balanced_accuracy == pytest.approx(1 / 9, abs=0.06)
    assert run("eval", tmp_path / "m.ckpt", tmp_path / "t.wmd") == 0


def test_eval_shape_mismatch_exit_5(tmp_path):
    save_checkpoint(tmp_path / "m.ckpt", build_vanilla((8, 8, 3), 2, filters=(2, 2, 2), hidden=(4, 4)))
    ds = Dataset(np.zeros((2, 9, 9), dtype=np.uint8), [0, 1], ("a", "b"), TARGET)
    save_wmd(ds, tmp_path / "t.wmd")
    assert run("eval", tmp_path / "m.ckpt", tmp_path / "t.wmd") == 5


def test_divergence_exit_4(tmp_path, small_config, monkeypatch, capsys):
    def boom(*a, **k):
        raise NumericError("loss is nan", iteration=3)

    monkeypatch.setattr(cli.da, "train", boom)
    assert run("--config", small_config, "--out-dir", tmp_path, "train") == 4
    assert "iteration 3" in capsys.readouterr().err


def test_grid_deterministic_rerun_is_byte_identical(tmp_path, small_config):
    for d in ("a", "b"):
        assert run("--config", small_config, "--deterministic", "--seed", 7,
                   "--out-dir", tmp_path / d, "grid") == 0
    a, b = (tmp_path / d / "results.csv" for d in ("a", "b"))
    assert a.read_bytes() == b.read_bytes()
    with open(a) as fh:
        rows = list(csv.DictReader(fh))
    assert len([r for r in rows if r["seed"] == "agg"]) == 4
    assert all(r["train_seconds"] == "" for r in rows)
    assert (tmp_path / "a" / "timings.csv").exists() and (tmp_path / "a" / "table.txt").exists()


def test_grid_records_failed_legs(tmp_path, small_config, monkeypatch):
    real = cli.run_grid.__globals__["run_leg"]

    def flaky(cfg, pools, method, augmented, n, repeat):
        if method == "da" and repeat == 1:
            raise NumericError("diverged", iteration=2)
        return real(cfg, pools, method, augmented, n, repeat)

    monkeypatch.setitem(cli.run_grid.__globals__, "run_leg", flaky)
    code = run("--config", small_config, "--out-dir", tmp_path, "grid", "--methods", "da")
    assert code == 4
    with open(tmp_path / "results.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert sum(r["error"].startswith("NumericError") for r in rows) == 2


def test_flags_override_config(tmp_path, small_config):
    args = cli.build_parser().parse_args(["--config", small_config, "--seed", "9", "grid"])
    cfg = cli._config(args, repeats=3)
    assert cfg.repeats == 3 and cfg.seed == 9 and cfg.sizes == (12,)


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("DAFORGE_THREADS", "2")
    assert cli._max_workers(8) == 2
    monkeypatch.setenv("DAFORGE_THREADS", "zero")
    with pytest.raises(cli.CLIError):
        cli._max_workers(8)
    monkeypatch.delenv("DAFORGE_THREADS")
    assert cli._max_workers(3) == 3


def test_check_grad_passes(capsys):
    assert run("check-grad") == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "DA losses" in out


def test_check_grad_failure_exit_6(monkeypatch):
    from daforge.nn import layers

    orig = layers.Dense.backward

    def wrong(self, dy):
        dx = orig(self, dy)
        self.grads[0] = self.grads[0] * 2.0
        return dx

    monkeypatch.setattr(layers.Dense, "backward", wrong)
    assert run("check-grad") == 6
