"""Benchmark harness, brute-force oracle and the command-line interface.

The bench sweep mirrors the intended experiment: train once, pick the first
R rejected test instances, and for every (instance, formulation, N) solve
the counterfactual MILP against an N-point reference set, recording solver
status, objective, the exact Mahalanobis distance and 10-LOF of the decoded
counterfactual, constraint counts, node count and solve-only wall time.
Reference sets are nested (the N-point set is a prefix of the largest one)
so the scaling curves compare like against like.

Exit codes: 0 success, 1 usage, 2 bad data or violated precondition,
3 no recourse exists for the requested instance.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .actionspace import ActionConfig, ActionConfigError, ActionSpace, build_action_space
from .classifiers import (Forest, classification_metrics, load_model, predict,
                          predict_many, save_model, train_forest, train_linear_svm,
                          train_logistic)
from .data import (DatasetSchema, EncodedDataset, ParseError, SchemaError, encode,
                   fit_scaler, load_csv, split, synthetic_credit)
from .formulations import PreconditionError, build_model, explain
from .milpcore import ModelError, export_lp
from .solver import SolverParams
from .stats import (DeltaMetric, LofContext, build_lof_context, build_mahalanobis,
                    lof, mahalanobis_distance, q1_surrogate, sample_reference_set)

RECORD_HEADER = ["instance", "formulation", "N", "status", "objective", "md",
                 "lof10", "nearest_rows", "total_rows", "nodes", "time_s"]


class ConfigError(ValueError):
    pass


def _default_time_limit(n: int) -> float:
    return 1200.0 if n <= 50 else 3600.0


@dataclass
class RunConfig:
    dataset: dict
    classifier: dict = field(default_factory=lambda: {"kind": "logistic"})
    split_ratio: float = 0.75
    split_seed: int = 1
    lam: float = 0.01
    n_values: tuple = (20, 50, 100, 200)
    n_reference: int = 20
    formulations: tuple = ("original", "reduced")
    actions: ActionConfig = field(default_factory=ActionConfig)
    n_explained: int = 10
    reference_seed: int = 5
    time_limits: dict = field(default_factory=dict)   # str(N) -> seconds
    lof_eval_k: int = 10
    parallelism: int = 1
    svg_plot: bool = True
    out_dir: str = "results"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if "dataset" not in d:
            raise ConfigError("config needs a 'dataset' section")
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        kw = dict(d)
        if "actions" in kw:
            kw["actions"] = ActionConfig.from_dict(kw["actions"])
        if "n_values" in kw:
            kw["n_values"] = tuple(int(v) for v in kw["n_values"])
        if "formulations" in kw:
            kw["formulations"] = tuple(kw["formulations"])
        return cls(**kw)

    @classmethod
    def from_json(cls, path: str | Path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def time_limit(self, n: int) -> float:
        return float(self.time_limits.get(str(n), _default_time_limit(n)))

    def override_seed(self, seed: int) -> None:
        self.split_seed = seed
        self.reference_seed = seed
        if self.dataset.get("kind") == "synthetic":
            self.dataset["seed"] = seed
        self.classifier["seed"] = seed


@dataclass
class Prepared:
    """Everything the per-instance pipeline needs, built once per config."""

    train: EncodedDataset
    test: EncodedDataset
    classifier: object
    metric: DeltaMetric
    mahal: object
    rejected: list          # indices into the test split, prediction -1, first R


def load_dataset(cfg: dict) -> EncodedDataset:
    kind = cfg.get("kind")
    if kind == "synthetic":
        raw = synthetic_credit(int(cfg.get("n_rows", 800)), int(cfg.get("seed", 11)))
    elif kind == "csv":
        schema = DatasetSchema.from_json(cfg["schema"])
        raw = load_csv(cfg["path"], schema)
    else:
        raise ConfigError(f"dataset kind must be 'synthetic' or 'csv', got {kind!r}")
    return encode(raw)


def train_classifier(cfg: dict, train: EncodedDataset):
    kind = cfg.get("kind", "logistic")
    seed = int(cfg.get("seed", 0))
    if kind == "logistic":
        return train_logistic(train.x, train.y, c=float(cfg.get("c", 1.0)))
    if kind == "svm":
        numeric = [train.encoding.spans[i][0]
                   for i, f in enumerate(train.schema.features) if f.kind == "numeric"]
        scaler = fit_scaler(train.x, numeric)
        return train_linear_svm(train.x, train.y, scaler,
                                c=float(cfg.get("c", 1.0)), seed=seed)
    if kind == "forest":
        return train_forest(train.x, train.y, n_trees=int(cfg.get("n_trees", 100)),
                            max_depth=int(cfg.get("max_depth", 6)), seed=seed)
    raise ConfigError(f"unknown classifier kind {kind!r}")


def prepare(config: RunConfig, model_path: str | None = None) -> Prepared:
    dataset = load_dataset(config.dataset)
    train, test = split(dataset, config.split_ratio, config.split_seed)
    clf = load_model(model_path) if model_path else train_classifier(config.classifier, train)
    metric = DeltaMetric.from_matrix(train.x)
    mahal = build_mahalanobis(train.x)
    preds = predict_many(clf, test.x)
    rejected = [int(i) for i in np.nonzero(preds == -1)[0][:config.n_explained]]
    return Prepared(train=train, test=test, classifier=clf, metric=metric,
                    mahal=mahal, rejected=rejected)


# -- brute-force oracle --------------------------------------------------------

@dataclass
class OracleResult:
    indices: list
    objective: float
    md_term: float
    q1: float
    counterfactual: np.ndarray


def brute_force_oracle(x_enc: np.ndarray, classifier, space: ActionSpace,
                       mahal_ctx, lof_ctx: LofContext, lam: float,
                       cap: int = 1_000_000) -> OracleResult | None:
    """Exhaustive search over the action grid; ties keep the first candidate
    in lexicographic candidate-index order.  Returns None when no admissible
    action is valid."""
    total = 1
    for dim in space.dims:
        total *= dim.n_candidates
    if total > cap:
        raise ValueError(f"grid has {total} actions, above the cap of {cap}")
    u = mahal_ctx.chol_u
    best = None
    for combo in itertools.product(*(range(d.n_candidates) for d in space.dims)):
        if space.n_changes(combo) > space.max_changes:
            continue
        disp = space.displacement(combo)
        cf = x_enc + disp
        if predict(classifier, cf) != 1:
            continue
        md = float(np.abs(u @ disp).sum())
        q1 = q1_surrogate(lof_ctx, cf)
        obj = md + lam * q1
        if best is None or obj < best.objective:
            best = OracleResult(indices=list(combo), objective=obj, md_term=md,
                                q1=q1, counterfactual=cf)
    return best


# -- benchmark sweep -----------------------------------------------------------

@dataclass
class BenchRecord:
    instance: int
    formulation: str
    n: int
    status: str
    objective: float | None
    md: float | None
    lof10: float | None
    nearest_rows: int
    total_rows: int
    nodes: int
    time_s: float
    build_s: float = 0.0

    def row(self) -> list:
        fmt = lambda v: "" if v is None else repr(float(v))
        return [self.instance, self.formulation, self.n, self.status,
                fmt(self.objective), fmt(self.md), fmt(self.lof10),
                self.nearest_rows, self.total_rows, self.nodes, repr(float(self.time_s))]


def _solve_one(prep: Prepared, config: RunConfig, lof_ctx: LofContext,
               test_idx: int, n: int, form: str) -> BenchRecord:
    x = prep.test.x[test_idx]
    space = build_action_space(x, prep.train, config.actions)
    params = SolverParams(time_limit_s=config.time_limit(n))
    t0 = time.perf_counter()
    expl = explain(x, prep.classifier, prep.mahal, lof_ctx, space,
                   config.lam, formulation=form, params=params)
    total_t = time.perf_counter() - t0
    if expl.counterfactual is not None:
        md = mahalanobis_distance(prep.mahal, x, expl.counterfactual)
        k = min(config.lof_eval_k, len(lof_ctx) - 1)
        lof10 = lof(lof_ctx, expl.counterfactual, k)
    else:
        md = lof10 = None
    return BenchRecord(
        instance=test_idx, formulation=form, n=n, status=expl.status,
        objective=expl.objective, md=md, lof10=lof10,
        nearest_rows=expl.counts.get("nearest", 0),
        total_rows=sum(expl.counts.values()),
        nodes=expl.nodes, time_s=expl.time_s,
        build_s=max(total_t - expl.time_s, 0.0),
    )


def run_benchmark(config: RunConfig, quiet: bool = False) -> list[BenchRecord]:
    prep = prepare(config)
    if not prep.rejected:
        raise ConfigError("no rejected test instances to explain")
    n_max = max(config.n_values)
    ref_all = sample_reference_set(prep.train.x, prep.train.y, n_max, config.reference_seed)
    contexts = {n: build_lof_context(ref_all[:n], prep.metric) for n in config.n_values}

    tasks = [(idx, n, form)
             for idx in prep.rejected
             for n in config.n_values
             for form in config.formulations]

    def run(task):
        idx, n, form = task
        rec = _solve_one(prep, config, contexts[n], idx, n, form)
        if not quiet:
            print(f"  instance={idx} form={form} N={n} status={rec.status} "
                  f"time={rec.time_s:.3f}s nodes={rec.nodes}", file=sys.stderr)
        return rec

    if config.parallelism > 1:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            records = list(pool.map(run, tasks))
    else:
        records = [run(t) for t in tasks]
    records.sort(key=lambda r: (r.instance, r.formulation, r.n))
    return records


def write_records_csv(records: list[BenchRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_HEADER)
        for rec in records:
            w.writerow(rec.row())


def summarize(records: list[BenchRecord]) -> list[dict]:
    """Per (formulation, N) means over rows solved to optimality."""
    keys = sorted({(r.formulation, r.n) for r in records})
    out = []
    for form, n in keys:
        rows = [r for r in records if r.formulation == form and r.n == n]
        opt = [r for r in rows if r.status == "optimal"]
        mean = lambda xs: float(np.mean(xs)) if xs else None
        med = lambda xs: float(np.median(xs)) if xs else None
        out.append({
            "formulation": form,
            "N": n,
            "n_runs": len(rows),
            "n_optimal": len(opt),
            "mean_objective": mean([r.objective for r in opt]),
            "mean_md": mean([r.md for r in opt]),
            "mean_lof10": mean([r.lof10 for r in opt]),
            "mean_nodes": mean([r.nodes for r in opt]),
            "median_time_s": med([r.time_s for r in opt]),
            "mean_time_s": mean([r.time_s for r in opt]),
            "mean_build_s": mean([r.build_s for r in rows]),
            "nearest_rows": rows[0].nearest_rows if rows else 0,
        })
    return out


def write_summary_csv(summary: list[dict], path: str | Path) -> None:
    cols = ["formulation", "N", "n_runs", "n_optimal", "mean_objective", "mean_md",
            "mean_lof10", "mean_nodes", "median_time_s", "mean_time_s",
            "mean_build_s", "nearest_rows"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in summary:
            w.writerow(["" if row[c] is None else
                        (repr(float(row[c])) if isinstance(row[c], float) else row[c])
                        for c in cols])


def svg_time_plot(summary: list[dict]) -> str:
    """Median solve time against N, one polyline per formulation."""
    series: dict[str, list] = {}
    for row in summary:
        if row["median_time_s"] is not None:
            series.setdefault(row["formulation"], []).append((row["N"], row["median_time_s"]))
    width, height, m = 480, 320, 50
    xs = [n for pts in series.values() for n, _ in pts] or [1]
    ys = [t for pts in series.values() for _, t in pts] or [1.0]
    x_max, y_max = max(xs), max(ys) or 1.0
    sx = lambda v: m + (width - 2 * m) * v / x_max
    sy = lambda v: height - m - (height - 2 * m) * v / y_max
    colors = {"original": "#c0392b", "reduced": "#2980b9"}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{m}" y1="{height - m}" x2="{width - m}" y2="{height - m}" stroke="black"/>',
        f'<line x1="{m}" y1="{m}" x2="{m}" y2="{height - m}" stroke="black"/>',
        f'<text x="{width // 2}" y="{height - 12}" font-size="12" text-anchor="middle">N</text>',
        f'<text x="14" y="{height // 2}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {height // 2})">median solve time (s)</text>',
    ]
    for i, (form, pts) in enumerate(sorted(series.items())):
        color = colors.get(form, "#555")
        path = " ".join(f"{sx(n):.1f},{sy(t):.1f}" for n, t in sorted(pts))
        parts.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
        for n, t in pts:
            parts.append(f'<circle cx="{sx(n):.1f}" cy="{sy(t):.1f}" r="3" fill="{color}"/>')
        parts.append(f'<text x="{width - m - 110}" y="{m + 16 * i}" font-size="12" '
                     f'fill="{color}">{form}</text>')
    for n in sorted(set(xs)):
        parts.append(f'<text x="{sx(n):.1f}" y="{height - m + 16}" font-size="10" '
                     f'text-anchor="middle">{n}</text>')
    parts.append(f'<text x="{m - 6}" y="{sy(y_max):.1f}" font-size="10" '
                 f'text-anchor="end">{y_max:.3g}</text>')
    parts.append(f'<text x="{m - 6}" y="{sy(0) + 4:.1f}" font-size="10" text-anchor="end">0</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# -- CLI -----------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfmilp",
                                description="Plausible counterfactual explanations via MILP")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_index=False):
        sp.add_argument("--config", required=True, help="run configuration JSON")
        sp.add_argument("--seed", type=int, default=None,
                        help="override every seed in the config")
        if needs_index:
            sp.add_argument("--index", type=int, required=True,
                            help="row index into the test split (must be rejected)")
            sp.add_argument("--model", default=None, help="load model JSON instead of training")
            sp.add_argument("--formulation", choices=["original", "reduced"],
                            default="reduced")

    sp = sub.add_parser("train", help="train a classifier and write it as JSON")
    common(sp)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("explain", help="explain one rejected test instance")
    common(sp, needs_index=True)
    sp.add_argument("--out", default=None, help="write explanation JSON here (default stdout)")

    sp = sub.add_parser("bench", help="run the benchmark sweep")
    common(sp)
    sp.add_argument("--out", default=None, help="output directory (default from config)")
    sp.add_argument("--quiet", action="store_true")

    sp = sub.add_parser("export-lp", help="write the instance's model in LP format")
    common(sp, needs_index=True)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("oracle", help="brute-force the instance's optimal action")
    common(sp, needs_index=True)
    sp.add_argument("--out", default=None)

    return p


def _instance_setup(config: RunConfig, args):
    prep = prepare(config, model_path=getattr(args, "model", None))
    idx = args.index
    if not 0 <= idx < len(prep.test):
        raise ConfigError(f"index {idx} out of range for test split of {len(prep.test)}")
    x = prep.test.x[idx]
    if predict(prep.classifier, x) == 1:
        raise PreconditionError(
            f"test instance {idx} is already accepted; rejected indices start with "
            f"{prep.rejected[:8]}")
    n = config.n_reference
    refs = sample_reference_set(prep.train.x, prep.train.y, n, config.reference_seed)
    lof_ctx = build_lof_context(refs, prep.metric)
    space = build_action_space(x, prep.train, config.actions)
    return prep, x, lof_ctx, space


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1

    try:
        config = RunConfig.from_json(args.config)
        if args.seed is not None:
            config.override_seed(args.seed)

        if args.command == "train":
            dataset = load_dataset(config.dataset)
            train, test = split(dataset, config.split_ratio, config.split_seed)
            clf = train_classifier(config.classifier, train)
            save_model(clf, args.out)
            metrics = classification_metrics(test.y, predict_many(clf, test.x))
            print(json.dumps({"model": args.out, "test_metrics": metrics}, indent=2))
            return 0

        if args.command == "bench":
            if args.out:
                config.out_dir = args.out
            out_dir = Path(config.out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            records = run_benchmark(config, quiet=args.quiet)
            write_records_csv(records, out_dir / "records.csv")
            summary = summarize(records)
            write_summary_csv(summary, out_dir / "summary.csv")
            if config.svg_plot:
                (out_dir / "times.svg").write_text(svg_time_plot(summary), encoding="utf-8")
            print(json.dumps({"records": str(out_dir / "records.csv"),
                              "summary": str(out_dir / "summary.csv"),
                              "n_records": len(records)}, indent=2))
            return 0

        prep, x, lof_ctx, space = _instance_setup(config, args)

        if args.command == "export-lp":
            model, handles, _ = build_model(x, prep.classifier, prep.mahal, lof_ctx,
                                            space, config.lam, args.formulation)
            Path(args.out).write_text(export_lp(model), encoding="utf-8")
            print(json.dumps({"lp": args.out, "rows": model.n_constraints,
                              "nearest_rows": handles.nearest_rows}, indent=2))
            return 0

        if args.command == "oracle":
            res = brute_force_oracle(x, prep.classifier, space, prep.mahal,
                                     lof_ctx, config.lam)
            if res is None:
                print("no recourse: no admissible action is valid", file=sys.stderr)
                return 3
            doc = {"indices": res.indices, "objective": res.objective,
                   "md_term": res.md_term, "q1": res.q1,
                   "counterfactual": [float(v) for v in res.counterfactual]}
            text = json.dumps(doc, indent=2)
            if args.out:
                Path(args.out).write_text(text + "\n", encoding="utf-8")
            else:
                print(text)
            return 0

        # explain
        n = config.n_reference
        expl = explain(x, prep.classifier, prep.mahal, lof_ctx, space, config.lam,
                       formulation=args.formulation,
                       params=SolverParams(time_limit_s=config.time_limit(n)))
        text = json.dumps(expl.to_json_dict(), indent=2)
        if expl.status == "no-recourse":
            print(text)
            return 3
        if args.out:
            Path(args.out).write_text(text + "\n", encoding="utf-8")
        else:
            print(text)
        return 0

    except (ConfigError, SchemaError, ParseError, ActionConfigError, ModelError,
            PreconditionError, FileNotFoundError, json.JSONDecodeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
