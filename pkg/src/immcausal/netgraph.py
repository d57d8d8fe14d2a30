"""Influential network, pair ids, pair cross-correlations and the pair network."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import networkx as nx
import numpy as np

from .errors import ConfigError, DataError, DomainError, ImmCausalError, InsufficientDataError
from .market_data import MarketMeta, Zone
from .metrics import ActivityStats
from .te import TEMatrixSeries

CANONICAL_ORDER = ("DJI", "NASD", "NIKK", "HSI", "SHI", "SZI", "TWII", "DAX", "FTSE", "CAC")
EXPORT_FORMATS = ("dot", "graphml", "json")
LINK_KINDS = ("mutual", "europe-america", "shared-market", "other")
PAIR_MODES = ("band", "upper")
WIDTH_SCALE = 10.0


@dataclass(frozen=True)
class PairId:
    id: int
    source: int
    target: int


def pair_id(m: int, n: int, n_markets: int) -> PairId:
    """Row-major id of the ordered pair ``m -> n`` with the diagonal skipped (1-based)."""
    if not (1 <= m <= n_markets and 1 <= n <= n_markets):
        raise DomainError(f"market indices must be in 1..{n_markets}, got {m}, {n}")
    if m == n:
        raise DomainError(f"a market cannot be paired with itself ({m})")
    return PairId((m - 1) * (n_markets - 1) + (n if n < m else n - 1), m, n)


def decode_pair_id(pid: int, n_markets: int) -> PairId:
    if not 1 <= pid <= n_markets * (n_markets - 1):
        raise DomainError(f"pair id must be in 1..{n_markets * (n_markets - 1)}, got {pid}")
    m, r = divmod(pid - 1, n_markets - 1)
    m += 1
    n = r + 1
    if n >= m:
        n += 1
    return PairId(pid, m, n)


def all_pairs(n_markets: int) -> list[PairId]:
    return [decode_pair_id(k, n_markets) for k in range(1, n_markets * (n_markets - 1) + 1)]


@dataclass(eq=True)
class Graph:
    """Nodes ``{id, label, zone}`` and edges ``{source, target, weight, tags}``, kept sorted."""

    kind: str
    directed: bool
    nodes: list[dict] = field(default_factory=list)
    edges: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def edge_set(self) -> set[tuple]:
        return {(e["source"], e["target"]) for e in self.edges}


class InfluenceGraph(Graph):
    pass


class PairGraph(Graph):
    pass


def _node_key(node_id):
    return (0, node_id, "") if isinstance(node_id, int) else (1, 0, str(node_id))


def _market_node(m: MarketMeta) -> dict:
    return {"id": m.market_id, "label": m.display_name, "zone": m.zone.value}


def influential_network(
    act: ActivityStats,
    markets: Sequence[MarketMeta],
    threshold: float | None = None,
) -> InfluenceGraph:
    """Directed edge ``m -> n`` for every pair whose mean TE is strictly above ``threshold``.

    The threshold defaults to the grand mean of all pair means.
    """
    thr = act.grand_mean if threshold is None else float(threshold)
    a = act.a_str
    edges = []
    for i, src in enumerate(markets):
        for j, tgt in enumerate(markets):
            if i != j and np.isfinite(a[i, j]) and a[i, j] > thr:
                tags = ["europe-america"] if (src.zone, tgt.zone) == (Zone.EUROPE, Zone.AMERICA) else []
                edges.append({"source": src.market_id, "target": tgt.market_id, "weight": float(a[i, j]), "tags": tags})
    return InfluenceGraph(
        kind="influence",
        directed=True,
        nodes=[_market_node(m) for m in markets],
        edges=edges,
        meta={"threshold": thr},
    )


@dataclass(frozen=True, eq=False)
class PairCorrMatrix:
    markets: tuple[MarketMeta, ...]
    pairs: list[PairId]
    values: np.ndarray
    valid: np.ndarray
    mean: float
    std: float

    @property
    def size(self) -> int:
        return len(self.pairs)


def pair_correlations(series: TEMatrixSeries) -> PairCorrMatrix:
    """Pearson correlation between the TE time series of every two ordered pairs.

    A pair whose series has an invalid segment or zero variance is flagged; its
    correlations are NaN and it is left out of the mean and standard deviation.
    The standard deviation is the population one.
    """
    if len(series) < 3:
        raise InsufficientDataError(f"pair correlations need at least 3 segments, got {len(series)}")
    m = len(series.markets)
    pairs = all_pairs(m)
    stack = series.stack()
    rows = np.stack([stack[:, p.source - 1, p.target - 1] for p in pairs])
    centered = rows - rows.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.sum(centered * centered, axis=1))
    finite_rows = np.all(np.isfinite(rows), axis=1)
    # exact constancy test; centring a constant row can leave rounding residue
    spread = np.zeros(len(rows))
    spread[finite_rows] = np.ptp(rows[finite_rows], axis=1)
    valid = finite_rows & (spread > 0) & (norms > 0)

    p = len(pairs)
    values = np.full((p, p), np.nan)
    z = np.zeros_like(centered)
    z[valid] = centered[valid] / norms[valid, None]
    full = np.clip(z @ z.T, -1.0, 1.0)
    iu = np.triu_indices(p, k=1)
    both = valid[iu[0]] & valid[iu[1]]
    upper = np.where(both, full[iu], np.nan)
    values[iu] = upper
    values[(iu[1], iu[0])] = upper
    np.fill_diagonal(values, 1.0)

    finite = upper[both]
    if finite.size == 0:
        raise InsufficientDataError("no pair of pair-series has a defined correlation")
    return PairCorrMatrix(
        markets=tuple(series.markets),
        pairs=pairs,
        values=values,
        valid=valid,
        mean=float(finite.mean()),
        std=float(finite.std()),
    )


def classify_link(a: PairId, b: PairId, markets: Sequence[MarketMeta]) -> str:
    """Kind of a pair-network link: reversed pair, two Europe->America pairs, or one shared market."""
    if (a.source, a.target) == (b.target, b.source):
        return "mutual"

    def eu_us(p: PairId) -> bool:
        return (markets[p.source - 1].zone, markets[p.target - 1].zone) == (Zone.EUROPE, Zone.AMERICA)

    if eu_us(a) and eu_us(b):
        return "europe-america"
    if len({a.source, a.target} & {b.source, b.target}) == 1:
        return "shared-market"
    return "other"


def _pair_label(p: PairId, markets: Sequence[MarketMeta]) -> str:
    return f"{markets[p.source - 1].market_id}->{markets[p.target - 1].market_id}"


def influential_pair_network(
    corr: PairCorrMatrix,
    band: tuple[float, float] | None = None,
    mode: str = "band",
    k: float = 1.0,
) -> PairGraph:
    """Link two pairs when the magnitude of their correlation falls outside a discard band.

    ``mode="band"`` keeps ``|C|`` outside ``[lo, hi]`` (default ``mean -/+ std``);
    links below ``lo`` are tagged ``low-band``. ``mode="upper"`` keeps only
    ``|C| >= mean + k * std``.
    """
    if mode not in PAIR_MODES:
        raise ConfigError(f"unknown pair-network mode {mode!r}; expected one of {PAIR_MODES}")
    markets = corr.markets
    if mode == "band":
        lo, hi = (corr.mean - corr.std, corr.mean + corr.std) if band is None else (float(band[0]), float(band[1]))
        if lo > hi:
            raise ConfigError(f"discard band [{lo}, {hi}] is empty")
        meta = {"mode": "band", "band": [lo, hi], "mean": corr.mean, "std": corr.std}
    else:
        lo = hi = corr.mean + k * corr.std
        meta = {"mode": "upper", "k": float(k), "cut": hi, "mean": corr.mean, "std": corr.std}

    edges = []
    p = corr.size
    for i in range(p):
        for j in range(i + 1, p):
            c = corr.values[i, j]
            if not np.isfinite(c):
                continue
            w = abs(float(c))
            if mode == "band":
                keep, low = (w < lo or w > hi), w < lo
            else:
                keep, low = w >= hi, False
            if not keep:
                continue
            a, b = corr.pairs[i], corr.pairs[j]
            kind = classify_link(a, b, markets)
            tags = [kind] + (["low-band"] if low else [])
            edges.append({"source": a.id, "target": b.id, "weight": w, "correlation": float(c), "tags": tags})

    nodes = [
        {
            "id": pr.id,
            "label": _pair_label(pr, markets),
            "zone": f"{markets[pr.source - 1].zone.value}->{markets[pr.target - 1].zone.value}",
        }
        for pr in corr.pairs
    ]
    return PairGraph(kind="pair", directed=False, nodes=nodes, edges=edges, meta=meta)


def link_kind_counts(g: Graph) -> dict[str, int]:
    counts = {k: 0 for k in LINK_KINDS}
    for e in g.edges:
        kind = next((t for t in e.get("tags", []) if t in LINK_KINDS), "other")
        counts[kind] += 1
    return counts


def _sorted(g: Graph) -> tuple[list[dict], list[dict]]:
    order = {n["id"]: k for k, n in enumerate(g.nodes)}
    if all(isinstance(n["id"], int) for n in g.nodes):
        order = {n["id"]: n["id"] for n in g.nodes}
    nodes = sorted(g.nodes, key=lambda n: order[n["id"]])
    edges = sorted(g.edges, key=lambda e: (order[e["source"]], order[e["target"]]))
    return nodes, edges


def _dot_id(x) -> str:
    return '"' + str(x).replace("\\", "\\\\").replace('"', '\\"') + '"'


def _num(x: float) -> str:
    return repr(float(x))


def _to_dot(g: Graph) -> str:
    nodes, edges = _sorted(g)
    head = "digraph" if g.directed else "graph"
    arrow = "->" if g.directed else "--"
    lines = [f"{head} {g.kind}_network {{"]
    for key in sorted(g.meta):
        val = g.meta[key]
        lines.append(f"  // {key} = {json.dumps(val)}")
    for n in nodes:
        lines.append(f"  {_dot_id(n['id'])} [label={_dot_id(n['label'])}, zone={_dot_id(n['zone'])}];")
    for e in edges:
        attrs = [
            f"weight={_num(e['weight'])}",
            f"penwidth={_num(WIDTH_SCALE * e['weight'])}",
            f"tags={_dot_id(','.join(e.get('tags', [])))}",
        ]
        lines.append(f"  {_dot_id(e['source'])} {arrow} {_dot_id(e['target'])} [{', '.join(attrs)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _to_nx(g: Graph) -> nx.Graph:
    nodes, edges = _sorted(g)
    G = nx.DiGraph() if g.directed else nx.Graph()
    G.graph["kind"] = g.kind
    for n in nodes:
        G.add_node(str(n["id"]), label=n["label"], zone=n["zone"])
    for e in edges:
        G.add_edge(
            str(e["source"]),
            str(e["target"]),
            weight=float(e["weight"]),
            width=WIDTH_SCALE * float(e["weight"]),
            tags=",".join(e.get("tags", [])),
        )
    return G


def graph_to_dict(g: Graph) -> dict:
    nodes, edges = _sorted(g)
    return {"kind": g.kind, "directed": g.directed, "meta": g.meta, "nodes": nodes, "edges": edges}


def graph_from_dict(d: dict) -> Graph:
    cls = {"influence": InfluenceGraph, "pair": PairGraph}.get(d.get("kind"), Graph)
    return cls(kind=d["kind"], directed=bool(d["directed"]), nodes=list(d["nodes"]), edges=list(d["edges"]), meta=dict(d.get("meta", {})))


def export_graph(g: Graph, path: str | Path, fmt: str = "json") -> Path:
    if fmt not in EXPORT_FORMATS:
        raise ConfigError(f"unknown graph format {fmt!r}; expected one of {EXPORT_FORMATS}")
    path = Path(path)
    try:
        if fmt == "json":
            path.write_text(json.dumps(graph_to_dict(g), indent=2, sort_keys=True) + "\n")
        elif fmt == "dot":
            path.write_text(_to_dot(g))
        else:
            nx.write_graphml(_to_nx(g), path)
    except OSError as exc:
        raise ImmCausalError(f"cannot write graph to {path}: {exc}") from exc
    return path


def read_graph_json(path: str | Path) -> Graph:
    try:
        return graph_from_dict(json.loads(Path(path).read_text()))
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read graph {path}: {exc}") from exc
