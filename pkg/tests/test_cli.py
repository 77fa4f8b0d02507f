import hashlib
import json

import numpy as np
import pytest

from l3ae import cli, datasets, models


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def _tsv(text):
    lines = text.rstrip("\n").splitlines()
    head = lines[0].split("\t")
    return [dict(zip(head, line.split("\t"))) for line in lines[1:]]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synthetic data plus a prepared split, made through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["synth", "--out", str(root / "syn"), "--seed", "5", "--users", "300",
                     "--items", "120", "--clusters", "4", "--dim", "16"]) == 0
    assert cli.main(["prepare", "--interactions", str(root / "syn" / "interactions.tsv"),
                     "--out", str(root / "data"), "--seed", "1"]) == 0
    return root


@pytest.fixture
def two_items(tmp_path):
    train = datasets.InteractionMatrix.from_pairs(
        [("u1", "a"), ("u1", "b"), ("u2", "a"), ("u3", "b")])
    empty = datasets.InteractionMatrix.from_pairs([], train.user_ids, train.item_ids)
    datasets.save_split(datasets.SplitBundle(train, empty, empty, 0, (0.8, 0.1, 0.1)),
                        tmp_path / "tiny")
    return tmp_path / "tiny"


def test_prepare_stats_match_generator(tmp_path, capsys):
    code, _, _ = run(capsys, "synth", "--out", tmp_path / "syn", "--users", "80", "--items", "30",
                     "--clusters", "3", "--dim", "4", "--min-activity", "4", "--max-activity", "8")
    assert code == 0
    code, out, _ = run(capsys, "prepare", "--interactions", tmp_path / "syn" / "interactions.tsv",
                       "--out", tmp_path / "data", "--k-core", "1")
    assert code == 0
    truth = json.loads((tmp_path / "syn" / "truth.json").read_text())
    stats = _tsv((tmp_path / "data" / "stats.tsv").read_text())[0]
    assert int(stats["ratings"]) == truth["stats"]["records_above_3"]
    assert int(stats["users"]) <= truth["stats"]["users"]
    assert out.startswith("users\titems\tratings\tdensity")


def test_prepare_missing_file(tmp_path, capsys):
    code, _, err = run(capsys, "prepare", "--interactions", tmp_path / "nope.tsv",
                       "--out", tmp_path / "o")
    assert code == 2 and "nope.tsv" in err


def test_fit_ease_on_two_item_fixture(two_items, tmp_path, capsys):
    code, _, _ = run(capsys, "fit", "--data", two_items, "--model", "ease", "--lambda", "1",
                     "--out", tmp_path / "fit")
    assert code == 0
    w = models.load_weights(tmp_path / "fit" / "weights.bin")
    np.testing.assert_allclose(w.values, [[0, 1 / 3], [1 / 3, 0]], atol=1e-7)
    header = json.loads((tmp_path / "fit" / "weights.bin.json").read_text())
    assert header["model"] == "ease" and header["hyperparams"] == {"lambda": 1.0}


def test_l3ae_without_distillation_matches_ease_reports(workspace, tmp_path, capsys):
    data, syn = workspace / "data", workspace / "syn"
    assert run(capsys, "fit", "--data", data, "--model", "ease", "--lambda", "200",
               "--out", tmp_path / "e")[0] == 0
    assert run(capsys, "fit", "--data", data, "--model", "l3ae", "--lambda-x", "200",
               "--lambda-kd", "0", "--lambda-f", "1", "--embeddings", syn / "embeddings.bin",
               "--out", tmp_path / "l")[0] == 0
    header = json.loads((tmp_path / "l" / "weights.bin.json").read_text())
    assert header["hyperparams"] == {"lambda_f": 1.0, "lambda_kd": 0.0, "lambda_x": 200.0}
    assert (tmp_path / "l" / "semantic.bin").is_file()
    for name in ("e", "l"):
        assert run(capsys, "eval", "--data", data, "--weights", tmp_path / name / "weights.bin",
                   "--out", tmp_path / name)[0] == 0
    a = json.loads((tmp_path / "e" / "report.json").read_text())
    b = json.loads((tmp_path / "l" / "report.json").read_text())
    assert a["slices"] == b["slices"]
    assert (tmp_path / "e" / "report.tsv").read_bytes() == (tmp_path / "l" / "report.tsv").read_bytes()


def test_l3ae_reuses_cached_semantic_matrix(workspace, tmp_path, capsys):
    data, syn = workspace / "data", workspace / "syn"
    args = ["fit", "--data", data, "--model", "l3ae", "--lambda-x", "150", "--lambda-kd", "50",
            "--lambda-f", "5"]
    assert run(capsys, *args, "--embeddings", syn / "embeddings.bin", "--out", tmp_path / "a")[0] == 0
    assert run(capsys, *args, "--semantic", tmp_path / "a" / "semantic.bin",
               "--out", tmp_path / "b")[0] == 0
    a = models.load_weights(tmp_path / "a" / "weights.bin").values
    b = models.load_weights(tmp_path / "b" / "weights.bin").values
    # The cached S went through a float32 round trip.
    np.testing.assert_allclose(a, b, atol=1e-5)
    code, _, err = run(capsys, "fit", "--data", data, "--model", "l3ae", "--lambda-x", "1",
                       "--lambda-kd", "1", "--out", tmp_path / "c")
    assert code == 1 and "embeddings" in err


def test_llm_cease_uses_embeddings(workspace, tmp_path, capsys):
    data, syn = workspace / "data", workspace / "syn"
    assert run(capsys, "fit", "--data", data, "--model", "llm-cease", "--alpha", "2",
               "--lambda", "100", "--embeddings", syn / "embeddings.bin", "--out", tmp_path)[0] == 0
    split = datasets.load_split(data)
    f = datasets.load_embeddings(syn / "embeddings.bin", item_ids=split.item_ids)
    ref = models.fit_collective(split.train, f, 2.0, 100.0).values.astype("<f4")
    np.testing.assert_array_equal(models.load_weights(tmp_path / "weights.bin").values, ref)
    code, _, err = run(capsys, "fit", "--data", data, "--model", "cease", "--alpha", "2",
                       "--lambda", "100", "--out", tmp_path)
    assert code == 1 and "tag" in err


def test_eval_errors(workspace, two_items, tmp_path, capsys):
    data = workspace / "data"
    assert run(capsys, "fit", "--data", data, "--model", "ease", "--lambda", "10",
               "--out", tmp_path)[0] == 0
    code, _, _ = run(capsys, "eval", "--data", data, "--weights", tmp_path / "weights.bin",
                     "--k", "5000")
    assert code == 1
    code, _, _ = run(capsys, "eval", "--data", two_items, "--weights", tmp_path / "weights.bin")
    assert code == 2
    code, out, _ = run(capsys, "eval", "--data", data, "--weights", tmp_path / "weights.bin",
                       "--k", "5,10", "--part", "validation")
    assert code == 0
    assert {r["k"] for r in _tsv(out)} == {"5", "10"}


def test_grid_command_and_config(workspace, tmp_path, capsys):
    data, syn = workspace / "data", workspace / "syn"
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": "ease", "data": str(data),
                               "grids": {"lambda": [1, 10, 100]}, "out": str(tmp_path / "g")}))
    code, out, _ = run(capsys, "grid", "--config", cfg)
    assert code == 0
    rows = _tsv((tmp_path / "g" / "grid.tsv").read_text())
    assert [float(r["lambda"]) for r in rows] == [1.0, 10.0, 100.0]
    best = json.loads((tmp_path / "g" / "best.json").read_text())
    assert best["best"]["lambda"] in (1.0, 10.0, 100.0)
    # A flag overrides the config file.
    code, _, _ = run(capsys, "grid", "--config", cfg, "--grid", "lambda=50",
                     "--out", tmp_path / "h")
    assert code == 0
    assert json.loads((tmp_path / "h" / "best.json").read_text())["best"] == {"lambda": 50.0}
    code, _, _ = run(capsys, "grid", "--config", cfg, "--model", "l3ae", "--out", tmp_path / "l",
                     "--embeddings", syn / "embeddings.bin", "--grid", "lambda=100,500",
                     "--grid", "lambda_f=1,10", "--grid", "lambda_kd=50,100,200")
    assert code == 0
    best = json.loads((tmp_path / "l" / "best.json").read_text())
    assert best["best"]["lambda_kd"] + best["best"]["lambda_x"] == best["lambda_star"]


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(capsys, "grid", "--config", bad)[0] == 1
    assert run(capsys, "grid", "--config", tmp_path / "missing.json")[0] == 1
    bad.write_text("[1, 2]")
    assert run(capsys, "grid", "--config", bad)[0] == 1
    assert run(capsys, "fit", "--model", "ease", "--data", tmp_path, "--lambda", "1",
               "--out", tmp_path)[0] == 2


def test_usage_errors_exit_one(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["fit", "--model", "nope"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["grid", "--grid", "gamma=1"])
    assert exc.value.code == 1


def test_memory_cap_is_a_solver_error(workspace, tmp_path, capsys):
    code, _, err = run(capsys, "fit", "--data", workspace / "data", "--model", "ease",
                       "--lambda", "1", "--memory-cap", "1K", "--out", tmp_path)
    assert code == 3 and "memory cap" in err


def test_bytes_parsing():
    assert cli._bytes("16G") == 16 * 2**30
    assert cli._bytes("512MiB") == 512 * 2**20
    assert cli._bytes("1000") == 1000.0


def test_spectrum_command(workspace, tmp_path, capsys):
    code, out, _ = run(capsys, "spectrum", "--data", workspace / "data",
                       "--embeddings", workspace / "syn" / "embeddings.bin", "--out", tmp_path)
    assert code == 0
    rows = _tsv((tmp_path / "spectrum.tsv").read_text())
    assert list(rows[0]) == ["index", "interactions", "embeddings"]
    x = [float(r["interactions"]) for r in rows if r["interactions"]]
    f = [float(r["embeddings"]) for r in rows if r["embeddings"]]
    assert x[0] == f[0] == 1.0
    assert x == sorted(x, reverse=True) and f == sorted(f, reverse=True)
    assert f[8] < 0.1 < x[8]


def test_spectrum_table_fixtures():
    from l3ae import linalg
    rows = _tsv(cli.spectrum_table(linalg.spectrum(np.eye(3))))
    assert [r["interactions"] for r in rows] == ["1.00000000"] * 3
    rows = _tsv(cli.spectrum_table(linalg.spectrum(np.ones((3, 3)))))
    assert [float(r["interactions"]) for r in rows] == [1.0, 0.0, 0.0]


def test_audit_command(capsys):
    code, out, _ = run(capsys, "audit", "--instances", "3", "--metric-cases", "50")
    assert code == 0
    rows = _tsv(out)
    assert len(rows) == 7 and all(r["status"] == "PASS" for r in rows)


def _digest(folder):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(folder.rglob("*")) if p.is_file()}


def test_commands_are_deterministic(workspace, tmp_path, capsys):
    syn = workspace / "syn"
    for run_dir in ("a", "b"):
        out = tmp_path / run_dir
        assert run(capsys, "prepare", "--interactions", syn / "interactions.tsv",
                   "--out", out / "data", "--seed", "3")[0] == 0
        assert run(capsys, "fit", "--data", out / "data", "--model", "l3ae", "--lambda-x", "80",
                   "--lambda-kd", "20", "--lambda-f", "10", "--embeddings", syn / "embeddings.bin",
                   "--out", out / "fit")[0] == 0
        assert run(capsys, "eval", "--data", out / "data", "--weights", out / "fit" / "weights.bin",
                   "--out", out / "eval")[0] == 0
        assert run(capsys, "synth", "--out", out / "syn", "--users", "60", "--items", "20",
                   "--clusters", "2", "--dim", "4", "--min-activity", "3",
                   "--max-activity", "6")[0] == 0
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
