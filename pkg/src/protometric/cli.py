"""Command-line interface: cost matrices, prototype embedding, training,
evaluation, batch inference, and synthetic data generation.

Exit codes: 0 success, 1 runtime/numeric failure, 2 usage/validation failure.
Heavy imports happen inside the command handlers so that --threads can pin
the BLAS thread pools before numpy loads.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .model import TrainConfig

OUTPUT_ROOT_ENV = "PROTOMETRIC_OUTPUT_ROOT"
SCHEMES = ("max-prob", "min-ec", "any-node")
AGGREGATES = ("median", "mean")


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration of a training run (JSON on disk)."""

    train: "TrainConfig"
    taxonomy_path: str
    dataset_path: str
    output_dir: str
    scheme: str = "max-prob"
    aggregate: str = "median"
    seeds: tuple[int, ...] = (0,)
    test_fraction: float = 0.25
    label_column: str = "label"
    taxonomy_format: str = "edge-list"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme '{self.scheme}'")
        if self.aggregate not in AGGREGATES:
            raise ValueError(f"unknown aggregation '{self.aggregate}'")
        if not self.seeds:
            raise ValueError("seed list must not be empty")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def to_dict(self) -> dict:
        return {
            "train": self.train.to_dict(),
            "taxonomy_path": self.taxonomy_path,
            "dataset_path": self.dataset_path,
            "output_dir": self.output_dir,
            "scheme": self.scheme,
            "aggregate": self.aggregate,
            "seeds": list(self.seeds),
            "test_fraction": self.test_fraction,
            "label_column": self.label_column,
            "taxonomy_format": self.taxonomy_format,
        }

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        from .model import TrainConfig

        return RunConfig(
            train=TrainConfig.from_dict(d.get("train", {})),
            taxonomy_path=d["taxonomy_path"],
            dataset_path=d["dataset_path"],
            output_dir=d.get("output_dir", ""),
            scheme=d.get("scheme", "max-prob"),
            aggregate=d.get("aggregate", "median"),
            seeds=tuple(d.get("seeds", [0])),
            test_fraction=float(d.get("test_fraction", 0.25)),
            label_column=d.get("label_column", "label"),
            taxonomy_format=d.get("taxonomy_format", "edge-list"),
        )


def _write_text(path: str, text: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _write_json(path: str, payload) -> None:
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _read_taxonomy(path: str, fmt: str):
    from .taxonomy import parse_taxonomy

    with open(path, "r", encoding="utf-8") as fh:
        return parse_taxonomy(fh.read(), format=fmt)


def _prototypes_csv(pi, tax) -> str:
    buf = io.StringIO()
    m = pi.dim
    buf.write("class_name,node_id," + ",".join(f"x{j}" for j in range(m)) + "\n")
    for row, node_id in zip(pi.coords, pi.class_map):
        buf.write(tax.nodes[node_id].name + f",{node_id},"
                  + ",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def _posterior_matrix(ckpt, tax, X):
    """Leaf posterior rows for a feature batch under any checkpoint head."""
    import numpy as np

    from .model import forward, head_logits, leaf_prototype_rows, posterior

    E = forward(ckpt.model, X)
    if ckpt.head is not None:
        logits = head_logits(ckpt.head, E)
        logits = logits - logits.max(axis=1, keepdims=True)
        P = np.exp(logits)
        P /= P.sum(axis=1, keepdims=True)
        return P, E
    rows = leaf_prototype_rows(tax, ckpt.prototypes.class_map)
    return posterior(E, ckpt.prototypes.coords[rows], ckpt.distance), E


def _scheme_predictions(ckpt, tax, X, scheme: str):
    """(pred_indices, eval_metric, leaf_label_map, leaf_mask, posterior, EC table)."""
    import numpy as np

    from .taxonomy import cost_matrix

    P, _ = _posterior_matrix(ckpt, tax, X)
    metric_leaves = cost_matrix(tax, "leaves-only")
    if scheme == "max-prob":
        preds = np.argmax(P, axis=1)
        ec = P @ metric_leaves.costs.T  # informational: EC of each leaf
        return preds, metric_leaves, None, None, P, ec
    if scheme == "min-ec":
        ec = P @ metric_leaves.costs.T
        preds = np.argmin(ec, axis=1)
        return preds, metric_leaves, None, None, P, ec
    metric_all = cost_matrix(tax, "all-nodes")
    leaf_cols = [metric_all.class_names.index(n) for n in tax.leaf_names]
    ec = P @ metric_all.costs[:, leaf_cols].T
    preds = np.argmin(ec, axis=1)
    label_map = np.array(tax.leaf_ids, dtype=np.intp)
    leaf_mask = np.array([tax.is_leaf(i) for i in range(tax.n_nodes)])
    return preds, metric_all, label_map, leaf_mask, P, ec


def _leaf_prototype_set(ckpt, tax):
    from .model import leaf_prototype_rows

    rows = leaf_prototype_rows(tax, ckpt.prototypes.class_map)
    if len(rows) == ckpt.prototypes.size:
        return ckpt.prototypes
    return ckpt.prototypes.subset(rows)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_cost(args) -> int:
    from .taxonomy import cost_matrix, metric_to_csv

    tax = _read_taxonomy(args.taxonomy, args.format)
    metric = cost_matrix(tax, "all-nodes" if args.nodes == "all" else "leaves-only")
    _write_text(args.out, metric_to_csv(metric))
    print(f"wrote {metric.size}x{metric.size} cost matrix to {args.out}")
    return 0


def _lm_refine(coords, costs, iters: int = 200):
    """Levenberg-Marquardt polish of a Euclidean embedding fit.

    Minimizes the relative pair residuals (d - D/s)/D with the scale folded
    into the targets; first-order steps stall in the flat valleys of
    exactly-embeddable metrics, LM does not.
    """
    import numpy as np

    from .distortion import l2_scale

    K, m = coords.shape
    iu, ju = np.triu_indices(K, k=1)
    t = costs[iu, ju]

    def distances(c):
        diff = c[iu] - c[ju]
        return np.sqrt(np.einsum("ij,ij->i", diff, diff)), diff

    d0, _ = distances(coords)
    target = t / l2_scale(d0, t)

    def loss(c):
        d, _ = distances(c)
        r = (d - target) / t
        return 0.5 * float(r @ r), r, d

    val, r, d = loss(coords)
    lam = 1e-3
    for _ in range(iters):
        _, diff = distances(coords)
        unit = diff / np.maximum(d[:, None], 1e-300)
        J = np.zeros((t.size, K * m))
        for p in range(t.size):
            J[p, iu[p] * m:(iu[p] + 1) * m] = unit[p] / t[p]
            J[p, ju[p] * m:(ju[p] + 1) * m] = -unit[p] / t[p]
        g = J.T @ r
        H = J.T @ J
        accepted = False
        while lam <= 1e14:
            try:
                delta = np.linalg.solve(H + lam * np.eye(K * m), -g)
            except np.linalg.LinAlgError:
                lam *= 3.0
                continue
            cand = coords + delta.reshape(K, m)
            v2, r2, d2 = loss(cand)
            if v2 < val:
                coords, val, r, d = cand, v2, r2, d2
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                break
            lam *= 3.0
        if not accepted or val < 1e-30:
            break
    return coords


def cmd_embed(args) -> int:
    import numpy as np

    from .distortion import (PrototypeSet, disto_loss, distortion_report,
                             rank_loss, sample_triplets)
    from .geometry import DistanceSpec
    from .optim import Adam
    from .taxonomy import cost_matrix

    tax = _read_taxonomy(args.taxonomy, args.format)
    metric = cost_matrix(tax, "all-nodes" if args.nodes == "all" else "leaves-only")
    node_ids = (tuple(range(tax.n_nodes)) if args.nodes == "all"
                else tax.leaf_ids)
    spec = DistanceSpec(kind=args.distance, delta=args.delta)
    rng = np.random.default_rng(args.seed)
    coords = rng.standard_normal((metric.size, args.dim))

    K = metric.size
    exhaustive = K * (K - 1) * (K - 2) <= 2000
    opt = Adam(lr=args.lr)
    for step in range(args.steps):
        opt.lr = args.lr * (1.0 - step / args.steps)  # decay to 0 for a tight fit
        pi = PrototypeSet(coords, node_ids)
        if args.regularizer == "rank":
            batch = sample_triplets(K, args.triplets, rng, exhaustive=exhaustive)
            _, grads = rank_loss(pi, metric, spec, batch)
        else:
            _, _, grads = disto_loss(pi, metric, spec)
        opt.step({"proto": coords}, {"proto": grads})
    if args.regularizer == "disto" and spec.kind == "euclidean":
        coords = _lm_refine(coords, metric.costs)

    pi = PrototypeSet(coords, node_ids)
    report = distortion_report(pi, metric, spec)
    out = args.out
    _write_text(os.path.join(out, "prototypes.csv"), _prototypes_csv(pi, tax))
    _write_json(os.path.join(out, "distortion.json"), report.to_dict())
    _write_json(os.path.join(out, "embed_config.json"), {
        "taxonomy": args.taxonomy, "format": args.format, "nodes": args.nodes,
        "dim": args.dim, "regularizer": args.regularizer, "steps": args.steps,
        "seed": args.seed, "lr": args.lr, "distance": spec.to_dict(),
        "triplets": args.triplets,
    })
    print(f"scale-free distortion {report.scale_free_distortion:.3e} "
          f"-> {out}")
    return 0


def _load_run_config(args) -> RunConfig:
    with open(args.config, "r", encoding="utf-8") as fh:
        cfg = RunConfig.from_dict(json.load(fh))
    train = cfg.train
    if args.lam is not None:
        train = replace(train, lam=args.lam)
    if args.epochs is not None:
        train = replace(train, epochs=args.epochs)
    if args.head is not None:
        train = replace(train, head=args.head)
    if args.regularizer is not None:
        train = replace(train, regularizer=args.regularizer)
    cfg = replace(cfg, train=train)
    if args.seeds is not None:
        cfg = replace(cfg, seeds=tuple(int(s) for s in args.seeds.split(",")))
    if args.scheme is not None:
        cfg = replace(cfg, scheme=args.scheme)
    if args.aggregate is not None:
        cfg = replace(cfg, aggregate=args.aggregate)
    out = args.output_dir or cfg.output_dir
    if not out:
        root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
        out = os.path.join(root, os.path.splitext(os.path.basename(args.config))[0])
    cfg = replace(cfg, output_dir=out)
    for path in (cfg.taxonomy_path, cfg.dataset_path):
        if not os.path.exists(path):
            raise FileNotFoundError(f"referenced path does not exist: {path}")
    return cfg


def cmd_train(args) -> int:
    import numpy as np

    from .data import load_csv, split
    from .model import Checkpoint, save_checkpoint, train
    from .taxonomy import cost_matrix

    cfg = _load_run_config(args)
    tax = _read_taxonomy(cfg.taxonomy_path, cfg.taxonomy_format)
    metric = cost_matrix(tax, "leaves-only")
    dataset = load_csv(cfg.dataset_path, cfg.label_column, tax)
    out = cfg.output_dir
    _write_json(os.path.join(out, "config.json"), cfg.to_dict())

    per_seed = []
    for seed in cfg.seeds:
        rng = np.random.default_rng(seed)
        train_set, test_set = split(dataset, cfg.test_fraction, rng)
        result = train(train_set, tax, metric, replace(cfg.train, seed=seed), rng)

        tag = f"seed{seed}"
        save_checkpoint(os.path.join(out, f"checkpoint_{tag}.json"),
                        result.model, result.prototypes, cfg.train.distance,
                        tax, head=result.head)
        _write_text(os.path.join(out, f"history_{tag}.csv"), result.history.to_csv())
        _write_text(os.path.join(out, f"history_{tag}.json"),
                    result.history.to_json() + "\n")
        _write_text(os.path.join(out, f"prototypes_{tag}.csv"),
                    _prototypes_csv(result.prototypes, tax))

        ckpt = Checkpoint(model=result.model, prototypes=result.prototypes,
                          distance=cfg.train.distance, taxonomy=tax,
                          head=result.head)
        report = _evaluate_checkpoint(ckpt, tax, test_set, cfg.scheme)
        _write_json(os.path.join(out, f"eval_{tag}.json"), report.to_dict())
        _write_text(os.path.join(out, f"confusion_{tag}.csv"),
                    report.confusion_to_csv())
        _write_text(os.path.join(out, f"embeddings_test_{tag}.csv"),
                    _embeddings_csv(ckpt, test_set))
        per_seed.append(report.to_dict())

    agg = _aggregate_reports(per_seed, cfg.aggregate)
    _write_json(os.path.join(out, "aggregate_eval.json"),
                {"aggregate": cfg.aggregate, "seeds": list(cfg.seeds),
                 "metrics": agg, "per_seed": per_seed})
    print(f"trained {len(cfg.seeds)} seed(s) -> {out}")
    return 0


def _embeddings_csv(ckpt, dataset) -> str:
    from .model import forward

    E = forward(ckpt.model, dataset.features)
    buf = io.StringIO()
    buf.write("index,label," + ",".join(f"e{j}" for j in range(E.shape[1])) + "\n")
    for i, (row, z) in enumerate(zip(E, dataset.labels)):
        buf.write(f"{i},{dataset.class_names[z]},"
                  + ",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def _stand_in_prototypes(ckpt, tax, dataset):
    """Prototype set used for distortion diagnostics.

    Prototype heads report on their actual prototypes. Baseline heads have
    none, so class means of the evaluated embeddings stand in; if some class
    is absent from the data, the checkpointed training means are kept.
    """
    import numpy as np

    from .distortion import PrototypeSet
    from .model import forward

    if ckpt.head is None:
        return _leaf_prototype_set(ckpt, tax)
    labels = dataset.labels
    if set(np.unique(labels)) != set(range(len(tax.leaf_ids))):
        return _leaf_prototype_set(ckpt, tax)
    E = forward(ckpt.model, dataset.features)
    means = np.stack([E[labels == k].mean(axis=0)
                      for k in range(len(tax.leaf_ids))])
    return PrototypeSet(means, tax.leaf_ids)


def _evaluate_checkpoint(ckpt, tax, dataset, scheme: str):
    import dataclasses

    from .distortion import distortion_report
    from .evaluation import evaluate
    from .taxonomy import cost_matrix

    preds, metric, label_map, leaf_mask, _, _ = _scheme_predictions(
        ckpt, tax, dataset.features, scheme)
    labels = dataset.labels if label_map is None else label_map[dataset.labels]
    leaf_pi = _stand_in_prototypes(ckpt, tax, dataset)
    metric_leaves = cost_matrix(tax, "leaves-only")
    if scheme == "any-node":
        report = evaluate(preds, labels, metric, leaf_mask=leaf_mask)
        disto = distortion_report(leaf_pi, metric_leaves, ckpt.distance)
        return dataclasses.replace(report, distortion=disto)
    return evaluate(preds, labels, metric, pi=leaf_pi, spec=ckpt.distance)


def _aggregate_reports(per_seed: list[dict], how: str) -> dict:
    import numpy as np

    out = {}
    keys = ["er", "ac", "l_er", "r_er"]
    for key in keys:
        vals = [r[key] for r in per_seed if r.get(key) is not None]
        if vals:
            out[key] = float(np.median(vals) if how == "median" else np.mean(vals))
        else:
            out[key] = None
    disto_vals = [r["distortion"]["scale_free_distortion"] for r in per_seed
                  if r.get("distortion")]
    out["scale_free_distortion"] = (
        float(np.median(disto_vals) if how == "median" else np.mean(disto_vals))
        if disto_vals else None)
    return out


def cmd_eval(args) -> int:
    from .data import load_csv
    from .model import load_checkpoint

    ckpt = load_checkpoint(args.checkpoint)
    tax = _read_taxonomy(args.taxonomy, args.format)
    if tax.leaf_names != ckpt.taxonomy.leaf_names:
        raise ValueError("taxonomy leaves do not match the checkpoint's classes")
    dataset = load_csv(args.dataset, args.label_column, tax)
    report = _evaluate_checkpoint(ckpt, tax, dataset, args.scheme)
    out = args.out
    _write_json(os.path.join(out, "eval.json"), report.to_dict())
    _write_text(os.path.join(out, "confusion.csv"), report.confusion_to_csv())
    _write_json(os.path.join(out, "eval_config.json"), {
        "checkpoint": args.checkpoint, "dataset": args.dataset,
        "taxonomy": args.taxonomy, "format": args.format,
        "scheme": args.scheme, "label_column": args.label_column,
    })
    extra = "" if report.l_er is None else f" l_er={report.l_er:.4f} r_er={report.r_er}"
    print(f"er={report.er:.4f} ac={report.ac:.4f}{extra} -> {out}")
    return 0


def _read_features_csv(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if len(rows) < 2:
        raise ValueError("features file needs a header and at least one row")
    header = [h.strip() for h in rows[0]]
    id_pos = header.index("id") if "id" in header else None
    feat_pos = [i for i in range(len(header)) if i != id_pos]
    ids = []
    feats = []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValueError(f"row {r}: expected {len(header)} cells")
        ids.append(row[id_pos] if id_pos is not None else str(r - 2))
        try:
            feats.append([float(row[i]) for i in feat_pos])
        except ValueError:
            raise ValueError(f"row {r}: non-numeric feature cell") from None
    return ids, feats


def cmd_infer(args) -> int:
    import numpy as np

    from .inference import PrototypeIndex
    from .model import forward, load_checkpoint

    ckpt = load_checkpoint(args.checkpoint)
    tax = ckpt.taxonomy
    ids, feats = _read_features_csv(args.features)
    X = np.asarray(feats, dtype=np.float64)
    if X.shape[1] != ckpt.model.input_dim:
        raise ValueError(f"feature dimension {X.shape[1]} does not match the "
                         f"model input dimension {ckpt.model.input_dim}")

    preds, metric, label_map, _, P, ec_table = _scheme_predictions(
        ckpt, tax, X, args.scheme)
    if args.scheme == "max-prob" and args.index is not None:
        # Same answer by construction; the flag only selects the search path.
        leaf_pi = _leaf_prototype_set(ckpt, tax)
        index = PrototypeIndex(leaf_pi.coords)
        E = forward(ckpt.model, X)
        query = index.query if args.index == "kd" else index.query_exhaustive
        preds = np.array([query(e)[0] for e in E], dtype=np.intp)

    names = metric.class_names
    leaf_names = tax.leaf_names
    buf = io.StringIO()
    buf.write("sample_id,scheme,predicted_class,p1_class,p1_prob,p2_class,p2_prob,"
              "p3_class,p3_prob,ec\n")
    for i, sample_id in enumerate(ids):
        top = np.argsort(-P[i], kind="stable")[:3]
        cells = []
        for t in range(3):
            if t < top.size:
                cells += [leaf_names[top[t]], repr(float(P[i, top[t]]))]
            else:
                cells += ["", ""]
        ec = float(ec_table[i, preds[i]])
        buf.write(f"{sample_id},{args.scheme},{names[preds[i]]},"
                  + ",".join(cells) + f",{ec!r}\n")
    _write_text(args.out, buf.getvalue())
    print(f"wrote {len(ids)} predictions to {args.out}")
    return 0


def cmd_synth(args) -> int:
    import numpy as np

    from .data import dataset_to_csv, gen_hierarchical_gaussians

    tax = _read_taxonomy(args.taxonomy, args.format)
    rng = np.random.default_rng(args.seed)
    dataset = gen_hierarchical_gaussians(tax, per_class=args.per_class,
                                         dims=args.dims,
                                         root_spread=args.root_spread,
                                         decay=args.decay, noise=args.noise,
                                         rng=rng)
    _write_text(args.out, dataset_to_csv(dataset))
    meta = os.path.splitext(args.out)[0] + ".meta.json"
    _write_json(meta, {
        "taxonomy": args.taxonomy, "format": args.format,
        "per_class": args.per_class, "dims": args.dims,
        "root_spread": args.root_spread, "decay": args.decay,
        "noise": args.noise, "seed": args.seed, "n": dataset.n,
    })
    print(f"wrote {dataset.n} samples to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser / entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protometric",
        description="Metric-guided prototype learning toolkit")
    parser.add_argument("--threads", type=int, default=None,
                        help="pin BLAS/OpenMP thread pools (1 = deterministic)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cost", help="derive a cost matrix from a taxonomy")
    p.add_argument("taxonomy")
    p.add_argument("--format", choices=("edge-list", "json-tree"), default="edge-list")
    p.add_argument("--nodes", choices=("leaves", "all"), default="leaves")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("embed", help="fit prototypes to the taxonomy metric alone")
    p.add_argument("taxonomy")
    p.add_argument("--format", choices=("edge-list", "json-tree"), default="edge-list")
    p.add_argument("--nodes", choices=("leaves", "all"), default="leaves")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--regularizer", choices=("disto", "rank"), default="disto")
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--distance", choices=("euclidean", "squared-euclidean", "huber"),
                   default="euclidean")
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--triplets", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="train from a JSON run config")
    p.add_argument("config")
    p.add_argument("--output-dir", default=None,
                   help=f"overrides the config; default root from ${OUTPUT_ROOT_ENV}")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seeds", default=None, help="comma-separated seed list")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--head", choices=("prototypes", "cross-entropy", "soft-labels"),
                   default=None)
    p.add_argument("--regularizer",
                   choices=("disto", "disto-fixed-scale", "rank", "none"),
                   default=None)
    p.add_argument("--scheme", choices=SCHEMES, default=None)
    p.add_argument("--aggregate", choices=AGGREGATES, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labeled CSV")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("taxonomy")
    p.add_argument("--format", choices=("edge-list", "json-tree"), default="edge-list")
    p.add_argument("--scheme", choices=SCHEMES, default="max-prob")
    p.add_argument("--label-column", default="label")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="batch inference over a feature CSV")
    p.add_argument("checkpoint")
    p.add_argument("features")
    p.add_argument("--scheme", choices=SCHEMES, default="max-prob")
    p.add_argument("--index", choices=("kd", "scan"), default=None,
                   help="nearest-prototype search path for max-prob")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("synth", help="generate hierarchy-aligned Gaussian data")
    p.add_argument("taxonomy")
    p.add_argument("--format", choices=("edge-list", "json-tree"), default="edge-list")
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--dims", type=int, default=2)
    p.add_argument("--root-spread", type=float, default=4.0)
    p.add_argument("--decay", type=float, default=0.5)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def _pin_threads(argv: list[str]) -> None:
    """Set BLAS thread env vars before numpy is imported anywhere."""
    threads = None
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif arg.startswith("--threads="):
            threads = arg.split("=", 1)[1]
    if threads is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(threads)


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    _pin_threads(argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ArithmeticError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
