"""`spectra` command-line front end.

Exit codes: 0 ok, 1 property violation, 2 parse error, 3 domain error,
4 solver non-convergence, 5 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DomainError, ParseError, SpectraError
from .graph import SsbmParams, drop_isolated, load_edge_list, serialize, ssbm_generate
from .models import ModelConfig, save_checkpoint
from .rng import make_rng
from .spectral import (
    LaplacianKind,
    build_laplacian,
    eigendecompose,
    magnetic_cluster,
    verify_eig_range,
    verify_psd,
)

EXIT_OK, EXIT_VIOLATION = 0, 1


def fmt(x):
    """Locale-free shortest-safe float text ('1' for 1.0, 17 significant digits otherwise)."""
    return "%.17g" % float(x)


def fnv1a64(data: bytes) -> str:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return f"{h:016x}"


def file_digest(path):
    with open(path, "rb") as f:
        return fnv1a64(f.read())


def _open_csv(path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    f = open(path, "w", newline="", encoding="utf-8")
    return f, csv.writer(f, lineterminator="\n")


def _kind_from_args(args, g):
    q = args.q if args.kind in ("magnetic", "signed-magnetic") else None
    if args.q is not None and q is None:
        raise DomainError(f"--q is only meaningful for magnetic kinds, not {args.kind}")
    if q is not None and q >= 0.25 and np.any(g.sign < 0):
        raise DomainError(f"input has negative edges; signed graphs require q < 0.25, got {q}")
    return LaplacianKind(args.kind, args.normalized, q)


def _load_graph(args):
    g = load_edge_list(args.input, directed=not args.undirected)
    if getattr(args, "drop_isolated", False):
        n0 = g.n_nodes
        g, _ = drop_isolated(g)
        if g.n_nodes < n0:
            print(f"warning: dropped {n0 - g.n_nodes} isolated node(s)", file=sys.stderr)
    return g


# ---------------------------------------------------------------- laplacian


def cmd_laplacian(args):
    g = _load_graph(args)
    kind = _kind_from_args(args, g)
    lap = build_laplacian(g, kind).tocoo()
    cplx = np.iscomplexobj(lap.data)
    f, w = _open_csv(args.out)
    with f:
        w.writerow(["i", "j", "re", "im"] if cplx else ["i", "j", "re"])
        order = np.lexsort((lap.col, lap.row))
        for e in order:
            v = lap.data[e]
            row = [int(lap.row[e]), int(lap.col[e]), fmt(np.real(v))]
            if cplx:
                row.append(fmt(np.imag(v)))
            w.writerow(row)
    return EXIT_OK


# ---------------------------------------------------------------- eig


def cmd_eig(args):
    g = _load_graph(args)
    lap = build_laplacian(g, _kind_from_args(args, g))
    spec = eigendecompose(lap, args.k, args.which, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    f, w = _open_csv(out / "eigenvalues.csv")
    with f:
        w.writerow(["index", "eigenvalue"])
        for i, lam in enumerate(spec.eigenvalues):
            w.writerow([i, fmt(lam)])
    vecs = spec.eigenvectors
    cplx = np.iscomplexobj(vecs)
    f, w = _open_csv(out / "eigenvectors.csv")
    with f:
        header = ["node"]
        for k in range(vecs.shape[1]):
            header += [f"re_{k}", f"im_{k}"] if cplx else [f"re_{k}"]
        w.writerow(header)
        for i in range(vecs.shape[0]):
            row = [g.label(i)]
            for k in range(vecs.shape[1]):
                row.append(fmt(np.real(vecs[i, k])))
                if cplx:
                    row.append(fmt(np.imag(vecs[i, k])))
            w.writerow(row)
    print(json.dumps({"n": int(lap.shape[0]), "count": len(spec),
                      "residual_norm": float(spec.residual_norm)}))
    return EXIT_OK


# ---------------------------------------------------------------- ssbm


def cmd_ssbm(args):
    p = SsbmParams(nodes_per_cluster=args.nodes_per_cluster, p_intra=args.p_intra,
                   p_inter=args.p_inter, flip_prob=args.flip, n_clusters=args.clusters,
                   directed=args.directed, seed=args.seed)
    g, labels = ssbm_generate(p)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(serialize(g), encoding="utf-8", newline="\n")
    labels_path = args.labels_out or str(out) + ".labels.csv"
    f, w = _open_csv(labels_path)
    with f:
        w.writerow(["node", "label"])
        for i, lab in enumerate(labels):
            w.writerow([i, int(lab)])
    print(json.dumps({"nodes": g.n_nodes, "edges": g.n_edges, "labels": labels_path}))
    return EXIT_OK


# ---------------------------------------------------------------- cluster


def cmd_cluster(args):
    from .tasks import adjusted_rand, read_labels

    g = _load_graph(args)
    pred, emb = magnetic_cluster(g, args.q, args.k, seed=args.seed, return_embedding=True)
    f, w = _open_csv(args.out)
    with f:
        w.writerow(["node", "label"])
        for i, lab in enumerate(pred):
            w.writerow([g.label(i), int(lab)])
    emb_path = args.embedding_out or str(Path(args.out).with_suffix("")) + ".embedding.csv"
    f, w = _open_csv(emb_path)
    with f:
        w.writerow(["node", "re", "im"])
        for i in range(g.n_nodes):
            w.writerow([g.label(i), fmt(emb[i, 0]), fmt(emb[i, 1])])
    report = {"nodes": g.n_nodes, "k": args.k, "q": args.q}
    if args.labels:
        report["ari"] = adjusted_rand(read_labels(args.labels, g), pred)
    print(json.dumps(report))
    return EXIT_OK


# ---------------------------------------------------------------- verify


def verify_kinds(g, rng):
    """Kinds whose positivity/range claims hold for this graph, with fresh q draws."""
    q = float(rng.uniform(0.0, 0.25))
    kinds = [LaplacianKind("signed", n) for n in (False, True)]
    kinds += [LaplacianKind("signed_magnetic", n, q) for n in (False, True)]
    if not np.any(g.sign < 0):
        qm = float(rng.uniform(0.0, 0.5))
        kinds += [LaplacianKind("combinatorial", n) for n in (False, True)]
        kinds += [LaplacianKind("magnetic", n, qm) for n in (False, True)]
    return kinds


def cmd_verify(args):
    g = _load_graph(args)
    if args.trials <= 0:
        print("warning: --trials 0, no checks run", file=sys.stderr)
        print(json.dumps({"checks": 0, "failed": 0}))
        return EXIT_OK
    hook = {"_negate_degree": True} if args.inject_fault == "negated-degree" else {}
    rng = make_rng(args.seed)
    checks = failed = 0
    for t in range(args.trials):
        for kind in verify_kinds(g, rng):
            reports = [verify_psd(g, kind, **hook)]
            if kind.normalized:
                reports.append(verify_eig_range(g, kind, **hook))
            for r in reports:
                checks += 1
                if not r.passed:
                    failed += 1
                    print(f"FAIL trial={t} {r.detail} family={kind.family} "
                          f"normalized={kind.normalized} q={kind.q} "
                          f"min={r.min_eigenvalue:.3e} max={r.max_eigenvalue:.6g}", file=sys.stderr)
    print(json.dumps({"checks": checks, "failed": failed}))
    return EXIT_VIOLATION if failed else EXIT_OK


# ---------------------------------------------------------------- train


MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)} - {"model"}


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(raw: dict, item: str):
    if "=" not in item:
        raise DomainError(f"override {item!r} is not of the form key=value")
    key, value = item.split("=", 1)
    parts = key.strip().split(".")
    node = raw
    for p in parts[:-1]:
        cur = node.get(p)
        if isinstance(cur, str) and p in ("model", "data"):
            cur = {"model": cur} if p == "model" else {"kind": cur}
        node[p] = dict(cur) if isinstance(cur, dict) else {}
        node = node[p]
    node[parts[-1]] = _parse_value(value)
    return raw


def config_from_dict(raw: dict):
    """ExperimentConfig from parsed JSON. `model` may be a name or an object;
    model fields may also appear at top level. Unknown keys are rejected."""
    from .tasks import ExperimentConfig

    raw = dict(raw)
    model = raw.pop("model", "sgcn1")
    model = {"model": model} if isinstance(model, str) else dict(model)
    for k in list(raw):
        if k in MODEL_KEYS:
            model[k] = raw.pop(k)
    bad = set(model) - MODEL_KEYS - {"model"}
    if bad:
        raise DomainError(f"unknown model config key(s): {sorted(bad)}")
    data = raw.get("data", {"kind": "ssbm"})
    if isinstance(data, str):
        raw["data"] = {"kind": data}
    allowed = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"model"}
    bad = set(raw) - allowed
    if bad:
        raise DomainError(f"unknown config key(s): {sorted(bad)}")
    try:
        return ExperimentConfig(model=ModelConfig(**model), **raw)
    except TypeError as e:
        raise DomainError(f"invalid config: {e}") from None


def _read_config(path):
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON ({e.msg})", e.lineno) from None
    if not isinstance(raw, dict):
        raise DomainError(f"{path}: top-level JSON value must be an object")
    return raw


def _workers(requested):
    from .tasks import default_workers

    cap = default_workers()
    return max(1, min(cap, requested)) if requested else cap


def run_train(cfg, out: Path, workers, inputs: dict):
    from .tasks import run_experiment

    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    report = run_experiment(cfg, workers=workers)
    with open(out / "epochs.jsonl", "w", encoding="utf-8", newline="\n") as f:
        for r_i, run in enumerate(report.runs):
            for rec in run.history:
                f.write(json.dumps({**rec, "repeat": r_i}) + "\n")
    keys = sorted({k for r in report.runs for k in r.metrics})
    f, w = _open_csv(out / "repeats.csv")
    with f:
        w.writerow(["repeat", "seed", "best_epoch", *keys])
        for i, r in enumerate(report.runs):
            w.writerow([i, r.seed, r.best_epoch, *(fmt(r.metrics.get(k, float("nan"))) for k in keys)])
    summary = {
        "task": cfg.task,
        "model": cfg.model.model,
        "seed": cfg.seed,
        "n_repeats": len(report.runs),
        "metrics": report.summary(),
        "config": cfg.to_dict(),
    }
    text = json.dumps(summary, sort_keys=True, indent=2) + "\n"
    (out / "summary.json").write_text(text, encoding="utf-8", newline="\n")
    state = report.runs[0].state if report.runs else {}
    if state:
        meta = {"model": cfg.model.model, "task": cfg.task, "q": cfg.model.q,
                "hidden_dim": cfg.model.hidden_dim, "n_layers": cfg.model.n_layers,
                "seed": int(report.runs[0].seed),
                "shapes": {k: list(np.shape(v)) for k, v in state.items()}}
        save_checkpoint(out / "checkpoint.bin", state, meta)
    manifest = {
        "config": cfg.to_dict(),
        "inputs": inputs,
        "version": __version__,
        "seed": cfg.seed,
        "started": started,
        "finished": time.time(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n",
                                       encoding="utf-8", newline="\n")
    return summary


def cmd_train(args):
    raw = _read_config(args.config)
    for item in args.override or []:
        apply_override(raw, item)
    if args.report:
        raw["report"] = args.report
    inputs = {str(args.config): file_digest(args.config)}
    cfg = config_from_dict(raw)
    for key in ("path", "labels"):
        p = cfg.data.get(key)
        if p:
            if not os.path.exists(p):
                raise DomainError(f"data file not found: {p}")
            inputs[str(p)] = file_digest(p)
    for msg in cfg.out_of_range():
        print(f"warning: {msg}", file=sys.stderr)
    workers = _workers(args.workers)
    out = Path(args.out)
    if not args.sweep:
        summary = run_train(cfg, out, workers, inputs)
        print(json.dumps(summary["metrics"], sort_keys=True))
        return EXIT_OK
    key, _, values = args.sweep.partition("=")
    if not values:
        raise DomainError("--sweep expects key=v1,v2,...")
    rows = []
    for v in values.split(","):
        trial = apply_override(json.loads(json.dumps(raw)), f"{key}={v}")
        sub = config_from_dict(trial)
        summary = run_train(sub, out / f"{key}={v}", workers, inputs)
        rows.append((v, summary["metrics"]))
    metric_keys = sorted({k for _, m in rows for k in m})
    f, w = _open_csv(out / "sweep.csv")
    with f:
        w.writerow([key] + [f"{k}_{s}" for k in metric_keys for s in ("mean", "std")])
        for v, m in rows:
            cells = []
            for k in metric_keys:
                for s in ("mean", "std"):
                    x = m.get(k, {}).get(s)
                    cells.append("" if x is None else fmt(x))
            w.writerow([v] + cells)
    print(json.dumps({"sweep": key, "values": [v for v, _ in rows]}))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_graph_input(p, drop=True):
    p.add_argument("--input", required=True, help="edge list: src dst sign per line")
    p.add_argument("--undirected", action="store_true", help="treat edges as undirected")
    if drop:
        p.add_argument("--drop-isolated", action="store_true",
                       help="remove zero-degree nodes before building operators")


def _add_kind(p):
    p.add_argument("--kind", required=True,
                   choices=["combinatorial", "signed", "magnetic", "signed-magnetic"])
    p.add_argument("--normalized", action="store_true")
    p.add_argument("--q", type=float, default=None, help="phase parameter of magnetic kinds")


def build_parser():
    ap = argparse.ArgumentParser(prog="spectra", description="Spectral tools for signed directed graphs.")
    ap.add_argument("--version", action="version", version=f"spectra {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("laplacian", help="write a Laplacian as i,j,re[,im] text")
    _add_graph_input(p)
    _add_kind(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_laplacian)

    p = sub.add_parser("eig", help="eigendecomposition of a Laplacian")
    _add_graph_input(p)
    _add_kind(p)
    p.add_argument("--k", type=int, default=None, help="number of extremal pairs (Lanczos)")
    p.add_argument("--which", choices=["smallest", "largest"], default="smallest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eig)

    p = sub.add_parser("ssbm", help="sample a signed stochastic block model")
    p.add_argument("--nodes-per-cluster", type=int, required=True)
    p.add_argument("--p-intra", type=float, required=True)
    p.add_argument("--p-inter", type=float, required=True)
    p.add_argument("--flip", type=float, default=0.0)
    p.add_argument("--clusters", type=int, default=2)
    p.add_argument("--directed", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="edge list path")
    p.add_argument("--labels-out", default=None, help="labels CSV (default: OUT.labels.csv)")
    p.set_defaults(func=cmd_ssbm)

    p = sub.add_parser("train", help="run a training experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--override", action="append", metavar="KEY=VALUE",
                   help="set a config value (dotted keys reach nested objects)")
    p.add_argument("--sweep", default=None, metavar="KEY=V1,V2",
                   help="run once per value and write sweep.csv")
    p.add_argument("--report", choices=["best-val", "best-test", "final"], default=None,
                   help="which epoch's test metrics to report")
    p.add_argument("--out", default="spectra-run", help="output directory")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel repeats (capped by SPECTRA_THREADS)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cluster", help="magnetic spectral clustering")
    _add_graph_input(p, drop=False)
    p.add_argument("--q", type=float, default=0.125)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--labels", default=None, help="ground-truth node,label CSV for ARI")
    p.add_argument("--out", required=True, help="labels CSV")
    p.add_argument("--embedding-out", default=None, help="node,re,im CSV (default: OUT.embedding.csv)")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("verify", help="check positivity and spectral range of the Laplacians")
    _add_graph_input(p, drop=False)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", choices=["negated-degree"], default=None,
                   help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        try:
            return args.func(args)
        except SpectraError as e:
            print(f"error: {e}", file=sys.stderr)
            return e.exit_code
        except FileNotFoundError as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
        except UnicodeDecodeError as e:
            print(f"error: input is not UTF-8 text ({e.reason})", file=sys.stderr)
            return 2


if __name__ == "__main__":
    sys.exit(main())
