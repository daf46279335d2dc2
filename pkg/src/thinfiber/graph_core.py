"""Metric graphs with finite and infinite edges.

Every edge carries a local coordinate ``t``.  On a finite edge ``t`` runs from
0 at the first listed endpoint to ``length`` at the second one; on an infinite
edge ``t = 0`` sits at its only finite endpoint.  Each vertex keeps the ordered
list of edge ends attached to it, and that order fixes the component order of
the trace vectors used by the gluing conditions.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import ValidationError
from . import vertex_conditions as vc

INF = math.inf
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class EdgeEnd:
    edge: str
    end: int  # 0: t = 0 at the vertex, 1: t = length at the vertex


@dataclass(frozen=True)
class EdgeRecord:
    id: str
    a: str
    b: str | None
    length: float

    @property
    def finite(self) -> bool:
        return math.isfinite(self.length)


@dataclass(frozen=True)
class VertexRecord:
    id: str
    adjacency: tuple[EdgeEnd, ...]
    condition: vc.VertexCondition | None = None

    @property
    def degree(self) -> int:
        return len(self.adjacency)

    @property
    def kind(self) -> str:
        return "V1" if self.degree == 1 else "V2"


@dataclass(frozen=True)
class MetricGraph:
    vertices: tuple[VertexRecord, ...]
    edges: tuple[EdgeRecord, ...]
    _vindex: dict = field(default_factory=dict, repr=False, compare=False)
    _eindex: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self._vindex.update({v.id: i for i, v in enumerate(self.vertices)})
        self._eindex.update({e.id: i for i, e in enumerate(self.edges)})

    def vertex(self, vid: str) -> VertexRecord:
        return self.vertices[self._vindex[vid]]

    def edge(self, eid: str) -> EdgeRecord:
        return self.edges[self._eindex[eid]]

    def edge_index(self, eid: str) -> int:
        return self._eindex[eid]

    @property
    def finite_edges(self) -> list[EdgeRecord]:
        return [e for e in self.edges if e.finite]

    @property
    def infinite_edges(self) -> list[EdgeRecord]:
        return [e for e in self.edges if not e.finite]

    @property
    def is_compact(self) -> bool:
        return all(e.finite for e in self.edges)

    @property
    def V1(self) -> list[VertexRecord]:
        return [v for v in self.vertices if v.kind == "V1"]

    @property
    def V2(self) -> list[VertexRecord]:
        return [v for v in self.vertices if v.kind == "V2"]

    def with_conditions(self, conditions: Mapping[str, Any]) -> "MetricGraph":
        """Return a new graph with some vertex conditions replaced."""
        desc = self.to_description()
        for vid, cond in conditions.items():
            desc["conditions"][str(vid)] = cond
        return build_graph(desc)

    def to_description(self) -> dict:
        vertices = [{"id": v.id, "edges": [ee.edge for ee in v.adjacency]} for v in self.vertices]
        edges = [
            {
                "id": e.id,
                "vertices": [e.a, e.b],
                "length": e.length if e.finite else "inf",
            }
            for e in self.edges
        ]
        conditions = {
            v.id: vc.condition_to_spec(v.condition) for v in self.vertices if v.condition is not None
        }
        return {
            "thinfiber_schema": SCHEMA_VERSION,
            "vertices": vertices,
            "edges": edges,
            "conditions": conditions,
        }


def _parse_length(raw) -> float:
    if isinstance(raw, str):
        if raw.strip().lower() in ("inf", "infinity", "+inf"):
            return INF
        raise ValidationError(f"edge length string must be 'inf', got {raw!r}")
    try:
        value = float(raw)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad edge length {raw!r}") from exc
    if math.isnan(value):
        raise ValidationError("edge length is NaN")
    return value


def build_graph(description: Mapping[str, Any]) -> MetricGraph:
    """Validate a structured description and return the graph.

    ``description`` has keys ``vertices`` (ids, or dicts with ``id`` and an
    optional ordered ``edges`` list), ``edges`` (dicts with ``id``,
    ``vertices: [a, b]`` where ``b`` is ``None`` for an infinite edge, and
    ``length``) and an optional ``conditions`` mapping vertex id to a
    condition object or JSON spec.
    """
    if not isinstance(description, Mapping):
        raise ValidationError("graph description must be a mapping")
    schema = description.get("thinfiber_schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ValidationError(f"unsupported thinfiber_schema {schema!r}")
    for key in ("vertices", "edges"):
        if key not in description:
            raise ValidationError(f"graph description lacks {key!r}")

    vorder: list[str] = []
    explicit_order: dict[str, list[str]] = {}
    for raw in description["vertices"]:
        if isinstance(raw, Mapping):
            vid = str(raw["id"])
            if "edges" in raw and raw["edges"] is not None:
                explicit_order[vid] = [str(x) for x in raw["edges"]]
        else:
            vid = str(raw)
        if vid in vorder:
            raise ValidationError(f"duplicate vertex id {vid!r}")
        vorder.append(vid)
    known = set(vorder)

    edges: list[EdgeRecord] = []
    adjacency: dict[str, list[EdgeEnd]] = {vid: [] for vid in vorder}
    seen_edges: set[str] = set()
    for raw in description["edges"]:
        eid = str(raw["id"])
        if eid in seen_edges:
            raise ValidationError(f"duplicate edge id {eid!r}")
        seen_edges.add(eid)
        ends = raw.get("vertices")
        if ends is None or len(ends) != 2:
            raise ValidationError(f"edge {eid!r} needs two endpoints [a, b]")
        a = None if ends[0] is None else str(ends[0])
        b = None if ends[1] is None or str(ends[1]).lower() in ("inf", "infinity") else str(ends[1])
        if a is None:
            raise ValidationError(f"edge {eid!r}: the first endpoint must be a vertex")
        length = _parse_length(raw.get("length"))
        if length <= 0:
            raise ValidationError(f"edge {eid!r} has non-positive length {length}")
        for end in (a, b):
            if end is not None and end not in known:
                raise ValidationError(f"edge {eid!r} references unknown vertex {end!r}")
        if math.isinf(length) and b is not None:
            raise ValidationError(f"infinite edge {eid!r} has two finite endpoints")
        if math.isfinite(length) and b is None:
            raise ValidationError(f"finite edge {eid!r} is dangling (no second endpoint)")
        edges.append(EdgeRecord(eid, a, b, length))
        adjacency[a].append(EdgeEnd(eid, 0))
        if b is not None:
            adjacency[b].append(EdgeEnd(eid, 1))

    for vid, order in explicit_order.items():
        current = adjacency[vid]
        if sorted(order) != sorted(ee.edge for ee in current):
            raise ValidationError(f"vertex {vid!r}: edge order {order} does not match its incident edges")
        if len(set(order)) == len(order):
            by_edge = {ee.edge: ee for ee in current}
            adjacency[vid] = [by_edge[e] for e in order]

    raw_conditions = description.get("conditions") or {}
    for vid in raw_conditions:
        if str(vid) not in known:
            raise ValidationError(f"condition given for unknown vertex {vid!r}")

    vertices: list[VertexRecord] = []
    for vid in vorder:
        adj = tuple(adjacency[vid])
        if not adj:
            raise ValidationError(f"vertex {vid!r} has degree 0")
        spec = raw_conditions.get(vid)
        cond = None if spec is None else vc.condition_from_spec(spec)
        if cond is not None:
            if len(adj) == 1 and not isinstance(cond, (vc.Dirichlet, vc.Neumann)):
                raise ValidationError(
                    f"degree-1 vertex {vid!r} must carry a Dirichlet or Neumann condition, "
                    f"got {cond.kind}"
                )
            dim = cond.dimension
            if dim is not None and dim != len(adj):
                raise ValidationError(
                    f"vertex {vid!r} has degree {len(adj)} but its {cond.kind} condition has dimension {dim}"
                )
        vertices.append(VertexRecord(vid, adj, cond))
    return MetricGraph(tuple(vertices), tuple(edges))


def load_graph(path: str | Path) -> MetricGraph:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    if "thinfiber_schema" not in data:
        raise ValidationError(f"{path}: missing 'thinfiber_schema' field")
    return build_graph(data)


def star_graph(
    d: int,
    lengths: Iterable[float],
    center=None,
    ends=None,
) -> MetricGraph:
    """Star with one junction ``c`` and ``d`` edges ``e1..ed`` (t = 0 at ``c``).

    Finite edges end in leaves ``v1..vd``; ``ends`` is the condition put on
    every leaf (a single condition or a list aligned with the edges).
    """
    if int(d) != d or d < 2:
        raise ValidationError(f"star graph needs d >= 2, got {d}")
    lengths = [_parse_length(x) for x in lengths]
    if len(lengths) != d:
        raise ValidationError(f"expected {d} lengths, got {len(lengths)}")
    if not isinstance(ends, (list, tuple)):
        ends = [ends] * d
    vertices = [{"id": "c"}]
    edges = []
    conditions = {}
    if center is not None:
        conditions["c"] = center
    for j, length in enumerate(lengths, start=1):
        if math.isfinite(length):
            leaf = f"v{j}"
            vertices.append({"id": leaf})
            edges.append({"id": f"e{j}", "vertices": ["c", leaf], "length": length})
            if ends[j - 1] is not None:
                conditions[leaf] = ends[j - 1]
        else:
            edges.append({"id": f"e{j}", "vertices": ["c", None], "length": "inf"})
    return build_graph({"vertices": vertices, "edges": edges, "conditions": conditions})
