"""Pipeline orchestration: build -> metrics/risk/partition -> classify -> report.

Artifacts are JSON/CSV under the run directory, every JSON embedding the
config hash and seed; re-running with the same config and seed reproduces
byte-identical files. Exit codes: 0 ok, 2 config error, 3 missing upstream
stage, 4 data error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import classify as cls
from . import ingest, metrics, partition, riskstats, synth
from .graph import PaymentGraph, bow_tie, components, degrees, density, diameter, read_graph, write_graph

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEPENDENCY = 3
EXIT_DATA = 4


class ConfigError(Exception):
    exit_code = EXIT_CONFIG


class DependencyError(Exception):
    exit_code = EXIT_DEPENDENCY


class DataError(Exception):
    exit_code = EXIT_DATA


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n"


def _write_json(path: Path, obj, cfg: dict) -> None:
    payload = {"config_hash": cfg["_hash"], "seed": cfg["seed"], **obj}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(payload))


def _write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def load_config(args) -> dict:
    cfg: dict = {
        "subgraph": "all", "p_s": 0.01, "min_rated": 500, "k_max": 13,
        "seed": 0, "window": None,
    }
    if args.config:
        try:
            cfg.update(json.loads(Path(args.config).read_text()))
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {args.config}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "window", None):
        cfg["window"] = {"granularity": args.window, "index": 0, **(cfg.get("window") or {})}
        cfg["window"]["granularity"] = args.window
    if getattr(args, "subgraph", None):
        cfg["subgraph"] = args.subgraph
    if getattr(args, "out", None):
        cfg["out"] = args.out
    if "out" not in cfg:
        raise ConfigError("an output directory is required (--out or config key 'out')")
    if cfg["subgraph"] not in ("customers", "rated", "all"):
        raise ConfigError(f"unknown subgraph selector {cfg['subgraph']!r}")
    hashable = {k: v for k, v in cfg.items() if not k.startswith("_")}
    cfg["_hash"] = hashlib.sha256(json.dumps(hashable, sort_keys=True).encode()).hexdigest()[:16]
    return cfg


def _out(cfg: dict) -> Path:
    return Path(cfg["out"])


def _load_analysis_graph(cfg: dict) -> PaymentGraph:
    gdir = _out(cfg) / "graph"
    if not (gdir / "edges.csv").exists():
        raise DependencyError("missing graph artifact: run `build` or `synth` first")
    g = read_graph(gdir / "edges.csv", gdir / "nodes.csv")
    sel = cfg["subgraph"]
    if sel == "customers":
        g = g.subgraph(g.status == "customer")
    elif sel == "rated":
        g = g.subgraph(np.isin(g.rating, riskstats.RISK_CLASSES))
    if g.n == 0:
        raise DataError(f"subgraph {sel!r} selected no nodes")
    return g


# -- summarize -------------------------------------------------------------------------


def summarize(graphs: dict[str, PaymentGraph], seed: int = 0) -> list[dict]:
    """Basic-metrics table: one row per window with size, degrees under both
    conventions, density, diameter bound, component sizes and SCC volume share."""
    rows = []
    for label in sorted(graphs):
        g = graphs[label]
        row: dict = {"window": label, "n": g.n, "m": g.m}
        if g.n >= 2 and g.m >= 1:
            deg = degrees(g)
            weak = components(g, "weak")
            gc = np.bincount(weak).max()
            gc_nodes = weak == np.argmax(np.bincount(weak))
            strong = components(g, "strong")
            scc_sizes = np.bincount(strong)
            scc_label = int(np.argmax(scc_sizes))
            scc_nodes = strong == scc_label
            scc_m = int((scc_nodes[g.src] & scc_nodes[g.dst]).sum())
            scc_w = float(g.weight[scc_nodes[g.src] & scc_nodes[g.dst]].sum())
            gc_m = int((gc_nodes[g.src] & gc_nodes[g.dst]).sum())
            dia = diameter(g, "double_sweep_bound", seed=seed)
            row.update({
                "mean_degree": g.m / g.n,
                "mean_in_degree_nonzero": g.m / max(int((deg.in_degree > 0).sum()), 1),
                "mean_out_degree_nonzero": g.m / max(int((deg.out_degree > 0).sum()), 1),
                "density": density(g.n, g.m),
                "diameter_lower": dia.lower,
                "diameter_upper": dia.upper,
                "gc_share": gc / g.n,
                "gc_density": density(int(gc), gc_m) if gc >= 2 else 0.0,
                "scc_share": int(scc_sizes.max()) / g.n,
                "scc_density": density(int(scc_sizes.max()), scc_m) if scc_sizes.max() >= 2 else 0.0,
                "scc_volume_share": scc_w / g.total_volume if g.total_volume else 0.0,
            })
        rows.append(row)
    return rows


# -- subcommands -----------------------------------------------------------------------


def cmd_build(cfg: dict) -> None:
    for key in ("transactions", "firms"):
        if key not in cfg:
            raise ConfigError(f"build requires config key {key!r}")
        if not Path(cfg[key]).exists():
            raise DataError(f"input file not found: {cfg[key]}")
    with open(cfg["transactions"]) as f:
        parsed = ingest.parse_transactions(f)
    with open(cfg["firms"]) as f:
        firms = ingest.parse_firms(f)
    if not parsed.records:
        raise DataError("no valid transaction rows")
    wcfg = cfg.get("window") or {"granularity": "monthly"}
    gran = wcfg.get("granularity", "monthly")
    labels = ingest.span_labels([r.date for r in parsed.records], gran)
    graphs: dict[str, PaymentGraph] = {}
    out = _out(cfg)
    for label in labels:
        g = ingest.build_network(parsed.records, firms, ingest.TimeWindow(gran, label=label))
        graphs[label] = g
        wdir = out / "windows" / label
        wdir.mkdir(parents=True, exist_ok=True)
        write_graph(g, wdir / "edges.csv", wdir / "nodes.csv")
    target = wcfg.get("label")
    if target is None:
        idx = wcfg.get("index", 0)
        target = labels[idx] if 0 <= idx < len(labels) else labels[0]
    if target not in graphs:
        raise DataError(f"window {target!r} has no data (available: {labels})")
    gdir = out / "graph"
    gdir.mkdir(parents=True, exist_ok=True)
    write_graph(graphs[target], gdir / "edges.csv", gdir / "nodes.csv")
    act = ingest.activity_summary(parsed.records, gran)
    _write_json(out / "summary.json", {
        "windows": summarize(graphs, seed=cfg["seed"]),
        "analysis_window": target,
        "activity": {
            "labels": act.labels, "node_counts": act.node_counts, "edge_counts": act.edge_counts,
            "node_persistence": {str(k): v for k, v in sorted(act.node_persistence.items())},
            "edge_persistence": {str(k): v for k, v in sorted(act.edge_persistence.items())},
        },
    }, cfg)
    _write_json(out / "diagnostics.json", {
        "rows_read": parsed.rows_read,
        "rows_rejected": len(parsed.errors),
        "rejected_lines": [[e.line, e.message] for e in parsed.errors],
        "self_loops_dropped": graphs[target].meta.get("self_loops_dropped", 0),
    }, cfg)


def cmd_synth(cfg: dict) -> None:
    scfg = dict(cfg.get("synth") or {})
    kind = scfg.pop("kind", "modular")
    seed = scfg.pop("seed", cfg["seed"])
    out = _out(cfg)
    gdir = out / "graph"
    gdir.mkdir(parents=True, exist_ok=True)
    planted: dict = {"kind": kind}
    try:
        if kind == "powerlaw":
            g = synth.gen_powerlaw_digraph(
                scfg.get("n", 10000), scfg.get("degree_alpha_in", 2.5),
                scfg.get("degree_alpha_out", 2.8), seed=seed)
        elif kind == "hierarchy":
            g, ranks = synth.gen_hierarchy_graph(
                scfg.get("n", 2000), scfg.get("n_ranks", 10),
                noise=1.0 - scfg.get("forward_edge_prob", 0.9),
                m=scfg.get("m"), seed=seed)
            _write_csv(out / "planted_ranks.csv", ["node", "rank"],
                       zip(g.node_ids, ranks.tolist()))
            planted["n_ranks"] = int(ranks.max())
        elif kind == "modular":
            g, modules, ratings = synth.gen_modular_graph(
                scfg.get("n", 2000), scfg.get("n_modules", 4),
                scfg.get("p_in", 0.05), scfg.get("p_out", 0.002),
                per_module_rating_bias=scfg.get("module_enrichment"), seed=seed)
            _write_csv(out / "planted_modules.csv", ["node", "module"],
                       zip(g.node_ids, modules.tolist()))
            planted["n_modules"] = int(modules.max())
        else:
            raise ConfigError(f"unknown synth kind {kind!r}")
    except synth.SynthError as e:
        raise DataError(str(e)) from e
    write_graph(g, gdir / "edges.csv", gdir / "nodes.csv")
    _write_json(out / "synth_meta.json", {"planted": planted, "n": g.n, "m": g.m}, cfg)


def cmd_metrics(cfg: dict) -> None:
    g = _load_analysis_graph(cfg)
    out = _out(cfg) / "metrics"
    deg = degrees(g)
    result: dict = {"n": g.n, "m": g.m, "density": density(g.n, g.m)}
    for name, values, discrete in (
        ("in_degree", deg.in_degree, True), ("out_degree", deg.out_degree, True),
        ("in_strength", deg.in_strength, False), ("out_strength", deg.out_strength, False),
    ):
        samples = values[values > 0]
        _write_csv(out / f"ccdf_{name}.csv", ["x", "p_ge_x"],
                   ((repr(float(a)), repr(float(b))) for a, b in metrics.ccdf(samples)))
        try:
            fit = metrics.powerlaw_fit(samples, discrete=discrete)
            result[f"fit_{name}"] = {
                "alpha": fit.alpha, "xmin": fit.xmin, "ks": fit.ks,
                "n_tail": fit.n_tail, "tail_quantile": float((samples >= fit.xmin).mean()),
            }
        except metrics.FitError as e:
            result[f"fit_{name}"] = {"error": str(e)}
    for attribute in ("degree", "strength"):
        try:
            result[f"assortativity_{attribute}"] = metrics.degree_class_assortativity(g, attribute)
        except metrics.FitError as e:
            result[f"assortativity_{attribute}"] = None
    rated_mask = np.isin(g.rating, riskstats.RISK_CLASSES)
    if rated_mask.any():
        for weighted in (False, True):
            mix = metrics.mixing_matrix(g, g.rating, weighted=weighted)
            try:
                r = metrics.assortativity(mix).r
            except metrics.FitError:
                r = None
            result[f"risk_assortativity_{'weighted' if weighted else 'standard'}"] = r
    bt = bow_tie(g)
    result["bow_tie"] = {
        "scc": len(bt.scc), "in_comp": len(bt.in_comp), "out_comp": len(bt.out_comp),
        "tendrils_other": len(bt.tendrils_other), "payers_only": len(bt.payers_only),
        "degenerate": bt.degenerate,
    }
    _write_json(out / "metrics.json", result, cfg)


def cmd_risk(cfg: dict) -> None:
    g = _load_analysis_graph(cfg)
    if not np.isin(g.rating, riskstats.RISK_CLASSES).any():
        raise DataError("risk stage needs rated nodes")
    out = _out(cfg) / "risk"
    table = riskstats.rating_given_degree(g, "out")
    _write_csv(out / "rating_given_out_degree.csv", ["degree", "p_L", "p_M", "p_H"],
               ((k, *(repr(p) for p in v)) for k, v in sorted(table.items())))
    deg = degrees(g)
    rated = np.isin(g.rating, riskstats.RISK_CLASSES)
    X = np.column_stack([deg.out_degree, metrics.size_proxy_tertiles(g)])[rated]
    model = riskstats.fit_cumulative_logit(X, g.rating[rated])
    result = {
        "logit": {
            "a_L": model.a_L, "b_L": model.b_L.tolist(), "se_L": model.se_L.tolist(),
            "a_M": model.a_M, "b_M": model.b_M.tolist(), "se_M": model.se_M.tolist(),
            "converged": model.converged, "separation": model.separation_flag,
            "ordering_violations": model.ordering_violations,
        },
    }
    rows = []
    for src_rating in riskstats.RISK_CLASSES:
        shells = riskstats.distance_conditional_ratings(g, src_rating, k_max=cfg["k_max"])
        # shells are pair-subsets; the null population pools the pairs of all shells
        pair_counts = {k: {c: int(round(share * tot)) for c, share in
                           zip(riskstats.RISK_CLASSES, (pl, pm, ph))}
                       for k, (pl, pm, ph, tot) in shells.items()}
        n_pop = sum(tot for *_, tot in shells.values())
        pop_by_rating = {c: sum(pc[c] for pc in pair_counts.values()) for c in riskstats.RISK_CLASSES}
        n_tests = max(3 * len(shells), 1)
        for k, (pl, pm, ph, tot) in sorted(shells.items()):
            for cls_name, share in zip(riskstats.RISK_CLASSES, (pl, pm, ph)):
                t = riskstats.hypergeom_test(
                    pair_counts[k][cls_name], tot, pop_by_rating[cls_name], n_pop,
                    n_tests=n_tests, p_s=cfg["p_s"], group=k, rating=cls_name)
                rows.append([src_rating, k, cls_name, repr(share), tot,
                             repr(pop_by_rating[cls_name] / n_pop), t.significant])
    _write_csv(out / "distance_shares.csv",
               ["source_rating", "k", "rating", "share", "pairs", "null_share", "significant"], rows)
    try:
        deltas = riskstats.excess_volume_samples(g)
        tests = []
        for r in riskstats.RISK_CLASSES:
            for target in riskstats.RISK_CLASSES:
                a = deltas[(r, "out", target)]
                b = deltas[(r, "in", target)]
                if len(a) and len(b):
                    mw = riskstats.mann_whitney_u(a, b, "two_sided")
                    tests.append({"rating": r, "target": target, "U": mw.U, "p": mw.p,
                                  "method": mw.method})
        result["excess_volume_tests"] = tests
        result["excess_volume_sizes"] = {f"{k[0]}_{k[1]}_{k[2]}": len(v) for k, v in sorted(deltas.items())}
    except riskstats.StatsError as e:
        result["excess_volume_tests"] = {"error": str(e)}
    _write_json(out / "risk.json", result, cfg)


def cmd_partition(cfg: dict) -> None:
    g = _load_analysis_graph(cfg)
    out = _out(cfg) / "partition"
    seed = cfg["seed"]
    modules = partition.louvain(g, seed=seed)
    hierarchy = partition.minimize_agony(g, "heuristic", seed=seed)
    _write_csv(out / "modules.csv", ["node", "group"],
               zip(g.node_ids, modules.assignment.tolist()))
    _write_csv(out / "hierarchy.csv", ["node", "rank"],
               zip(g.node_ids, hierarchy.assignment.tolist()))
    summary: dict = {
        "modularity": {"Q": modules.score, "n_groups": modules.n_groups},
        "hierarchy": {"h": hierarchy.score, "agony": hierarchy.agony,
                      "n_groups": hierarchy.n_groups, "ordered": True},
    }
    rows = []
    for name, part in (("modules", modules), ("hierarchy", hierarchy)):
        results, skipped = partition.group_risk_profiles(
            part, g.rating, min_rated=cfg["min_rated"], p_s=cfg["p_s"])
        sizes = {int(gid): int((part.assignment == gid).sum()) for gid in np.unique(part.assignment)}
        for r in results:
            rows.append([name, r.group, sizes[r.group], r.rating, r.k, r.n, r.K, r.N,
                         repr(r.p_value), r.direction, r.significant])
        counts = {c: {"over": 0, "under": 0} for c in riskstats.RISK_CLASSES}
        for r in results:
            if r.significant:
                counts[r.rating][r.direction] += 1
        summary[name + "_tests"] = {
            "per_rating": counts,
            "tested_groups": len(set(r.group for r in results)),
            "total_groups": int(part.n_groups),
            "skipped_groups": len(skipped),
        }
    _write_csv(out / "enrichment.csv",
               ["partition", "group", "group_size", "rating", "k", "n", "K", "N",
                "p_value", "direction", "significant"], rows)
    _write_json(out / "summary.json", summary, cfg)


def cmd_classify(cfg: dict, base: str | None = None, strategy: str | None = None,
                 grid_file: str | None = None) -> None:
    g = _load_analysis_graph(cfg)
    out = _out(cfg)
    pdir = out / "partition"
    if not (pdir / "modules.csv").exists():
        raise DependencyError("missing partition artifacts: run `partition` first")
    ccfg = dict(cfg.get("classify") or {})
    base = base or ccfg.get("base", "tree")
    strategy = (strategy or ccfg.get("strategy", "two-step")).replace("_", "-")
    seed = cfg["seed"]

    modules = _read_assignment(pdir / "modules.csv", g, "group")
    ranks = _read_assignment(pdir / "hierarchy.csv", g, "rank")
    rated = np.isin(g.rating, riskstats.RISK_CLASSES)
    if rated.sum() < 30:
        raise DataError("too few rated nodes to train")
    rated_idx = np.flatnonzero(rated)
    tr, te = cls.stratified_split(g.rating[rated_idx], test_frac=0.25, seed=seed)
    train_nodes, test_nodes = rated_idx[tr], rated_idx[te]
    visible = g.rating.copy()
    visible[test_nodes] = "NA"  # held-out labels must not leak into features

    min_mod = ccfg.get("min_module_size", max(5, min(500, g.n // 20)))
    pipe = cls.FeaturePipeline.fit(g, modules, ranks, min_module_size=min_mod)
    X_all, _ = pipe.transform(g, modules, ranks, visible)
    y_all = g.rating

    hyper = ccfg.get("hyper", {})
    if grid_file:
        grid = json.loads(Path(grid_file).read_text())
        hyper, table = cls.grid_search(
            X_all[train_nodes], y_all[train_nodes], base, grid,
            objective=ccfg.get("objective", "accuracy"), seed=seed,
            strategy=strategy.replace("-", "_"))
        _write_json(out / "classify" / "grid.json", {"best": hyper, "table": table}, cfg)
    if strategy == "two-step":
        model = cls.train_two_step(X_all[train_nodes], y_all[train_nodes], base=base,
                                   hyper=hyper, seed=seed)
        pred = cls.predict_two_step(model, X_all[test_nodes])
        model_dict = model.to_dict()
    else:
        model = cls.train_one_step(X_all[train_nodes], y_all[train_nodes], base=base,
                                   hyper=hyper, seed=seed)
        pred = cls.predict_one_step(model, X_all[test_nodes])
        model_dict = model.to_dict()
    C = cls.confusion_matrix(y_all[test_nodes], pred)
    scores = cls.evaluate(C)
    q = tuple(float((y_all[train_nodes] == c).mean()) for c in cls.ORDER)
    report = {
        "method": f"{base}/{strategy}",
        "confusion": C.tolist(),
        **scores,
        "random_one_step": cls.random_baseline(q, "one_step"),
        "random_two_step": cls.random_baseline(q, "two_step"),
        "train_size": int(len(train_nodes)), "test_size": int(len(test_nodes)),
    }
    _write_json(out / "classify" / "report.json", report, cfg)
    (out / "classify").mkdir(parents=True, exist_ok=True)
    (out / "classify" / "model.json").write_text(canonical_json(
        {"config_hash": cfg["_hash"], "seed": seed, "model": model_dict,
         "preprocessing": pipe.to_dict()}))
    na_nodes = np.flatnonzero(~rated)
    if len(na_nodes):
        if strategy == "two-step":
            na_pred = cls.predict_two_step(model, X_all[na_nodes])
        else:
            na_pred = cls.predict_one_step(model, X_all[na_nodes])
        _write_csv(out / "classify" / "predictions.csv", ["node", "predicted_rating"],
                   zip((g.node_ids[i] for i in na_nodes), na_pred.tolist()))


def _read_assignment(path: Path, g: PaymentGraph, column: str) -> np.ndarray:
    values: dict[str, int] = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            values[row["node"]] = int(row[column])
    try:
        return np.array([values[nid] for nid in g.node_ids], dtype=np.int64)
    except KeyError as e:
        raise DependencyError(f"partition artifact misses node {e}; re-run `partition`") from e


def cmd_report(cfg: dict) -> None:
    out = _out(cfg)
    found = []
    rows = []
    for stage, path in (("summary", out / "summary.json"),
                        ("metrics", out / "metrics" / "metrics.json"),
                        ("risk", out / "risk" / "risk.json"),
                        ("partition", out / "partition" / "summary.json"),
                        ("classify", out / "classify" / "report.json")):
        if path.exists():
            found.append(stage)
            payload = json.loads(path.read_text())
            rows.extend(_flatten(stage, payload))
    if not found:
        raise DependencyError("nothing to report: run some pipeline stage first")
    _write_csv(out / "report" / "report.csv", ["stage", "key", "value"], rows)
    _write_json(out / "report" / "report.json", {"stages": found}, cfg)


def _flatten(prefix: str, obj) -> list[list]:
    rows = []
    if isinstance(obj, dict):
        for k in sorted(obj):
            rows.extend(_flatten(f"{prefix}.{k}", obj[k]))
    elif isinstance(obj, (list, tuple)):
        rows.append([prefix.split(".", 1)[0], prefix.split(".", 1)[-1], json.dumps(obj)])
    else:
        rows.append([prefix.split(".", 1)[0], prefix.split(".", 1)[-1], obj])
    return rows


# -- entry point ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="paynet", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("build", "synth", "metrics", "risk", "partition", "classify", "report"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--window", choices=("monthly", "weekly", "daily"), default=None)
        sp.add_argument("--subgraph", choices=("customers", "rated", "all"), default=None)
        sp.add_argument("--out", default=None)
        if name == "classify":
            sp.add_argument("--base", choices=("softmax", "tree", "mlp"), default=None)
            sp.add_argument("--strategy", choices=("one-step", "two-step"), default=None)
            sp.add_argument("--grid", default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "build":
            cmd_build(cfg)
        elif args.command == "synth":
            cmd_synth(cfg)
        elif args.command == "metrics":
            cmd_metrics(cfg)
        elif args.command == "risk":
            cmd_risk(cfg)
        elif args.command == "partition":
            cmd_partition(cfg)
        elif args.command == "classify":
            cmd_classify(cfg, base=args.base, strategy=args.strategy, grid_file=args.grid)
        elif args.command == "report":
            cmd_report(cfg)
    except (ConfigError, DependencyError, DataError) as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except ingest.IngestError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
