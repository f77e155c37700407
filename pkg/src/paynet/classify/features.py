"""Network-only predictor construction and preprocessing.

Feature layout per node: quantile-of-log in/out degree, 8 volume-weighted
neighbor-rating fractions, standardized hierarchy rank, module one-hots
(largest groups plus residual), quantile-of-log size proxy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..graph import RATINGS, PaymentGraph, degrees


class FeatureError(ValueError):
    pass


def _quantile_table(values: np.ndarray) -> np.ndarray:
    return np.sort(values)


def _quantile_transform(table: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Midrank empirical CDF position in [0, 1]; the median maps near 0.5."""
    lo = np.searchsorted(table, values, side="left")
    hi = np.searchsorted(table, values, side="right")
    return (lo + hi) / (2.0 * len(table))


@dataclass
class FeaturePipeline:
    """Fitted preprocessing state: quantile tables, rank scaling, module map."""

    indeg_table: np.ndarray
    outdeg_table: np.ndarray
    size_table: np.ndarray
    rank_mean: float
    rank_std: float
    kept_modules: list[int]
    feature_names: list[str] = field(default_factory=list)

    @classmethod
    def fit(
        cls,
        graph: PaymentGraph,
        modules: Sequence[int],
        ranks: Sequence[int],
        min_module_size: int = 500,
        max_modules: int = 12,
    ) -> "FeaturePipeline":
        deg = degrees(graph)
        modules = np.asarray(modules)
        ranks = np.asarray(ranks, dtype=np.float64)
        if modules.shape != (graph.n,) or ranks.shape != (graph.n,):
            raise FeatureError("modules and ranks must cover every node")
        ids, counts = np.unique(modules, return_counts=True)
        big = ids[counts >= min_module_size]
        big = big[np.argsort(-counts[counts >= min_module_size], kind="stable")][:max_modules]
        kept = sorted(int(g) for g in big)
        std = float(ranks.std())
        pipe = cls(
            indeg_table=_quantile_table(np.log1p(deg.in_degree)),
            outdeg_table=_quantile_table(np.log1p(deg.out_degree)),
            size_table=_quantile_table(np.log1p(deg.size_proxy)),
            rank_mean=float(ranks.mean()),
            rank_std=std if std > 0 else 1.0,
            kept_modules=kept,
        )
        pipe.feature_names = (
            ["in_degree_q", "out_degree_q"]
            + [f"in_frac_{c}" for c in RATINGS]
            + [f"out_frac_{c}" for c in RATINGS]
            + ["rank_std"]
            + [f"module_{g}" for g in kept]
            + ["module_residual", "size_q"]
        )
        return pipe

    def transform(
        self,
        graph: PaymentGraph,
        modules: Sequence[int],
        ranks: Sequence[int],
        visible_ratings: Sequence[str],
        nodes: Sequence[int] | None = None,
    ) -> tuple[np.ndarray, dict]:
        """Feature matrix for `nodes` (default: all).

        `visible_ratings` are the ratings observable at feature time (held-out
        labels must already be masked to NA by the caller). Nodes with zero
        volume in a direction get all-zero fractions there and are flagged.
        """
        modules = np.asarray(modules)
        ranks = np.asarray(ranks, dtype=np.float64)
        visible = np.asarray(visible_ratings)
        if visible.shape != (graph.n,):
            raise FeatureError("visible_ratings must cover every node")
        nodes = np.arange(graph.n) if nodes is None else np.asarray(nodes, dtype=np.int64)
        if len(nodes) and (nodes.min() < 0 or nodes.max() >= graph.n):
            raise FeatureError("node index outside the graph")

        deg = degrees(graph)
        code = np.array([RATINGS.index(r) for r in visible])
        in_vol = np.zeros((graph.n, len(RATINGS)))
        out_vol = np.zeros((graph.n, len(RATINGS)))
        np.add.at(out_vol, (graph.src, code[graph.dst]), graph.weight)
        np.add.at(in_vol, (graph.dst, code[graph.src]), graph.weight)
        in_tot = in_vol.sum(axis=1)
        out_tot = out_vol.sum(axis=1)
        in_frac = np.divide(in_vol, in_tot[:, None], out=np.zeros_like(in_vol), where=in_tot[:, None] > 0)
        out_frac = np.divide(out_vol, out_tot[:, None], out=np.zeros_like(out_vol), where=out_tot[:, None] > 0)

        module_cols = np.zeros((graph.n, len(self.kept_modules) + 1))
        residual = np.ones(graph.n, dtype=bool)
        for j, g in enumerate(self.kept_modules):
            sel = modules == g
            module_cols[sel, j] = 1.0
            residual &= ~sel
        module_cols[residual, -1] = 1.0

        X = np.column_stack([
            _quantile_transform(self.indeg_table, np.log1p(deg.in_degree[nodes])),
            _quantile_transform(self.outdeg_table, np.log1p(deg.out_degree[nodes])),
            in_frac[nodes],
            out_frac[nodes],
            (ranks[nodes] - self.rank_mean) / self.rank_std,
            module_cols[nodes],
            _quantile_transform(self.size_table, np.log1p(deg.size_proxy[nodes])),
        ])
        info = {
            "zero_in_volume": nodes[in_tot[nodes] == 0],
            "zero_out_volume": nodes[out_tot[nodes] == 0],
        }
        return X, info

    def to_dict(self) -> dict:
        return {
            "indeg_table": self.indeg_table.tolist(),
            "outdeg_table": self.outdeg_table.tolist(),
            "size_table": self.size_table.tolist(),
            "rank_mean": self.rank_mean,
            "rank_std": self.rank_std,
            "kept_modules": self.kept_modules,
            "feature_names": self.feature_names,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeaturePipeline":
        return cls(
            indeg_table=np.asarray(d["indeg_table"]),
            outdeg_table=np.asarray(d["outdeg_table"]),
            size_table=np.asarray(d["size_table"]),
            rank_mean=d["rank_mean"],
            rank_std=d["rank_std"],
            kept_modules=list(d["kept_modules"]),
            feature_names=list(d["feature_names"]),
        )


def build_features(
    graph: PaymentGraph,
    modules: Sequence[int],
    ranks: Sequence[int],
    visible_ratings: Sequence[str],
    targets: Sequence[int] | None = None,
    min_module_size: int = 500,
    max_modules: int = 12,
) -> tuple[np.ndarray, np.ndarray, FeaturePipeline, dict]:
    """Convenience wrapper: fit the pipeline and return (X, y, pipeline, info).

    y holds the visible rating of each target row (may be "NA" for inference
    rows); filter on it for training.
    """
    pipe = FeaturePipeline.fit(graph, modules, ranks, min_module_size, max_modules)
    X, info = pipe.transform(graph, modules, ranks, visible_ratings, targets)
    nodes = np.arange(graph.n) if targets is None else np.asarray(targets, dtype=np.int64)
    y = np.asarray(visible_ratings)[nodes]
    return X, y, pipe, info
