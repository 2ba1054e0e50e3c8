import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from spectra.cli import fnv1a64, main
from spectra.graph import load_edge_list, serialize
from spectra.spectral import LaplacianKind, laplacian_dense
from spectra.tasks import read_labels

from conftest import random_signed_digraph


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


def test_laplacian_negative_edge(tmp_path):
    src = write(tmp_path / "g.txt", "0 1 -1\n")
    out = tmp_path / "L.csv"
    assert main(["laplacian", "--input", src, "--undirected", "--kind", "signed", "--out", str(out)]) == 0
    assert out.read_text().splitlines() == ["i,j,re", "0,0,1", "0,1,1", "1,0,1", "1,1,1"]
    assert b"\r" not in out.read_bytes()


def test_laplacian_directed_reading_is_symmetrized(tmp_path):
    src = write(tmp_path / "g.txt", "0 1 -1\n")
    out = tmp_path / "L.csv"
    assert main(["laplacian", "--input", src, "--kind", "signed", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[1:] == ["0,0,0.5", "0,1,0.5", "1,0,0.5", "1,1,0.5"]


def test_laplacian_complex_matches_library(tmp_path, rng):
    g = random_signed_digraph(rng, 7, 0.3)
    src = write(tmp_path / "g.txt", serialize(g))
    out = tmp_path / "L.csv"
    assert main(["laplacian", "--input", src, "--kind", "signed-magnetic", "--normalized",
                 "--q", "0.1", "--drop-isolated", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows[0] == ["i", "j", "re", "im"]
    g2 = load_edge_list(src)
    from spectra.graph import drop_isolated
    g2, _ = drop_isolated(g2)
    dense = np.zeros((g2.n_nodes, g2.n_nodes), complex)
    for i, j, re, im in rows[1:]:
        dense[int(i), int(j)] = float(re) + 1j * float(im)
    oracle = laplacian_dense(g2, LaplacianKind("signed_magnetic", True, 0.1))
    np.testing.assert_array_equal(dense, oracle)


def test_laplacian_q_out_of_range(tmp_path, capsys):
    src = write(tmp_path / "g.txt", "0 1 -1\n1 2 1\n")
    code = main(["laplacian", "--input", src, "--kind", "signed-magnetic", "--q", "0.3",
                 "--out", str(tmp_path / "L.csv")])
    assert code == 3
    assert "0.25" in capsys.readouterr().err


def test_laplacian_isolated_node(tmp_path, capsys):
    src = write(tmp_path / "g.txt", "# comment\n0 1 1\n2 2 1\n")
    code = main(["laplacian", "--input", src, "--kind", "signed", "--normalized",
                 "--out", str(tmp_path / "L.csv")])
    err = capsys.readouterr().err
    assert code == 3 and "node 2" in err and "--drop-isolated" in err


def test_parse_error_exit_2(tmp_path, capsys):
    src = write(tmp_path / "g.txt", "0 1 abc\n")
    assert main(["laplacian", "--input", src, "--kind", "signed", "--out", str(tmp_path / "L")]) == 2
    assert "line 1" in capsys.readouterr().err
    assert main(["laplacian", "--input", str(tmp_path / "missing"), "--kind", "signed",
                 "--out", str(tmp_path / "L")]) == 2


def test_eig_examples(tmp_path):
    src = write(tmp_path / "tri.txt", "1 2 1\n1 3 -1\n2 3 -1\n")
    out = tmp_path / "eig"
    assert main(["eig", "--input", src, "--undirected", "--kind", "signed", "--out", str(out)]) == 0
    vals = [float(r[1]) for r in read_csv(out / "eigenvalues.csv")[1:]]
    np.testing.assert_allclose(vals, [0, 3, 3], atol=1e-12)
    src = write(tmp_path / "neg.txt", "0 1 -1\n")
    assert main(["eig", "--input", src, "--undirected", "--kind", "signed", "--out", str(out)]) == 0
    vals = [float(r[1]) for r in read_csv(out / "eigenvalues.csv")[1:]]
    np.testing.assert_allclose(vals, [0, 2], atol=1e-12)
    vec = read_csv(out / "eigenvectors.csv")
    assert vec[0] == ["node", "re_0", "re_1"]
    v0 = np.array([float(r[1]) for r in vec[1:]])
    assert abs(v0[0] + v0[1]) < 1e-12


def test_eig_lanczos_matches_dense(tmp_path, rng):
    g = random_signed_digraph(rng, 30, 0.2)
    src = write(tmp_path / "g.txt", serialize(g))
    out = tmp_path / "eig"
    assert main(["eig", "--input", src, "--kind", "signed-magnetic", "--q", "0.2", "--k", "4",
                 "--which", "largest", "--out", str(out)]) == 0
    rows = read_csv(out / "eigenvectors.csv")
    assert rows[0][1:3] == ["re_0", "im_0"]
    vals = np.array([float(r[1]) for r in read_csv(out / "eigenvalues.csv")[1:]])
    dense = np.linalg.eigvalsh(laplacian_dense(load_edge_list(src), LaplacianKind("signed_magnetic", False, 0.2)))
    np.testing.assert_allclose(np.sort(vals), np.sort(dense)[-4:], atol=1e-8)


def test_ssbm_and_cluster(tmp_path, capsys):
    g = tmp_path / "ssbm.txt"
    args = ["ssbm", "--nodes-per-cluster", "100", "--p-intra", "0.05", "--p-inter", "0.05",
            "--directed", "--seed", "4", "--out", str(g)]
    assert main(args) == 0
    first = g.read_bytes()
    assert main(args) == 0
    assert g.read_bytes() == first
    labels = str(g) + ".labels.csv"
    assert read_csv(labels)[0] == ["node", "label"]
    capsys.readouterr()
    out = tmp_path / "cl.csv"
    assert main(["cluster", "--input", str(g), "--q", "0.125", "--k", "2", "--seed", "0",
                 "--labels", labels, "--out", str(out)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["ari"] >= 0.9
    emb = read_csv(tmp_path / "cl.embedding.csv")
    assert emb[0] == ["node", "re", "im"] and len(emb) == 201
    graph = load_edge_list(str(g))
    assert len(read_labels(labels, graph)) == 200


def test_cluster_k1_and_no_labels(tmp_path, capsys):
    src = write(tmp_path / "g.txt", "0 1 1\n1 2 -1\n2 3 1\n")
    out = tmp_path / "cl.csv"
    assert main(["cluster", "--input", src, "--k", "1", "--out", str(out)]) == 0
    assert {r[1] for r in read_csv(out)[1:]} == {"0"}
    assert "ari" not in json.loads(capsys.readouterr().out)


def test_ssbm_invalid_probability(tmp_path):
    assert main(["ssbm", "--nodes-per-cluster", "10", "--p-intra", "1.5", "--p-inter", "0.1",
                 "--out", str(tmp_path / "s.txt")]) == 3


def test_verify(tmp_path, rng, capsys):
    g = random_signed_digraph(rng, 12, 0.3)
    src = write(tmp_path / "g.txt", serialize(g))
    assert main(["verify", "--input", src, "--trials", "3"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["checks"] > 0 and rep["failed"] == 0
    assert main(["verify", "--input", src, "--trials", "2", "--inject-fault", "negated-degree"]) == 1
    assert "FAIL" in capsys.readouterr().err
    assert main(["verify", "--input", src, "--trials", "0"]) == 0
    captured = capsys.readouterr()
    assert json.loads(captured.out)["checks"] == 0 and "warning" in captured.err


def train_config(tmp_path, **extra):
    cfg = {"model": "sgcn1", "task": "nodeclass",
           "data": {"kind": "ssbm", "nodes_per_cluster": 60, "p_intra": 0.1, "p_inter": 0.05},
           "epochs": 15, "n_repeats": 2, "hidden_dim": 8, "feature_dim": 8, "known_per_class": 3}
    cfg.update(extra)
    return write(tmp_path / "cfg.json", json.dumps(cfg))


def test_train_outputs_and_determinism(tmp_path, capsys):
    cfg = train_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--config", cfg, "--out", str(a), "--workers", "1"]) == 0
    assert main(["train", "--config", cfg, "--out", str(b), "--workers", "2"]) == 0
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()
    summary = json.loads((a / "summary.json").read_text())
    assert set(summary["metrics"]["accuracy"]) == {"mean", "std"}
    lines = (a / "epochs.jsonl").read_text().splitlines()
    assert len(lines) == 30
    rec = json.loads(lines[0])
    assert {"epoch", "loss", "val_acc"} <= set(rec)
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["inputs"][cfg] == fnv1a64(open(cfg, "rb").read())
    assert manifest["finished"] >= manifest["started"]
    assert (a / "checkpoint.bin").exists()
    assert read_csv(a / "repeats.csv")[0][:3] == ["repeat", "seed", "best_epoch"]


def test_train_override_warns(tmp_path, capsys):
    cfg = train_config(tmp_path, n_repeats=1)
    assert main(["train", "--config", cfg, "--override", "lr=0.5", "--out", str(tmp_path / "o")]) == 0
    assert "lr=0.5" in capsys.readouterr().err
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["config"]["lr"] == 0.5


def test_train_unknown_key(tmp_path, capsys):
    cfg = train_config(tmp_path, learning_rate=0.1)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    assert "learning_rate" in capsys.readouterr().err


def test_train_bad_json(tmp_path):
    cfg = write(tmp_path / "bad.json", "{ nope")
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_train_divergence_exit_5(tmp_path, capsys):
    cfg = train_config(tmp_path, n_repeats=1, lr=1e300, epochs=50)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 5


def test_train_sweep(tmp_path):
    cfg = train_config(tmp_path, n_repeats=1)
    out = tmp_path / "sw"
    assert main(["train", "--config", cfg, "--sweep", "feature_dim=4,8", "--out", str(out)]) == 0
    rows = read_csv(out / "sweep.csv")
    assert [r[0] for r in rows[1:]] == ["4", "8"]
    assert (out / "feature_dim=4" / "summary.json").exists()


def test_console_script(tmp_path):
    src = write(tmp_path / "g.txt", "0 1 -1\n")
    r = subprocess.run([sys.executable, "-m", "spectra.cli", "laplacian", "--input", src,
                        "--kind", "magnetic", "--q", "0.3", "--out", str(tmp_path / "L")],
                       capture_output=True, text=True)
    assert r.returncode == 3 and "0.25" in r.stderr
    pos = write(tmp_path / "p.txt", "0 1 1\n")
    r = subprocess.run([sys.executable, "-m", "spectra.cli", "laplacian", "--input", pos,
                        "--kind", "magnetic", "--q", "0.3", "--out", str(tmp_path / "L")],
                       capture_output=True, text=True)
    assert r.returncode == 0
    r = subprocess.run([sys.executable, "-m", "spectra.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "spectra" in r.stdout
