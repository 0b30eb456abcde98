"""Cumulative stride and theoretical receptive field over a layer DAG.

A network is an ordered list of layer records (``.netcfg``, YAML)::

    layers:
      - {name: input, kind: input}
      - {name: conv_1, kind: conv, kernel: 3, stride: 2, inputs: [input], report: true}
      - {name: conv_3, kind: conv, kernel: 3, stride: 1, padding: same, inputs: [conv_2]}

``padding`` is ``valid`` (default), ``same`` or an explicit integer per side.
``report`` marks the rows printed by ``rf --table``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import yaml

KINDS = ("input", "conv", "pool", "concat")


class ConfigError(ValueError):
    """Schema or graph violation, with an optional source line and field."""

    def __init__(self, message, line=None, field_name=None):
        self.line = line
        self.field = field_name
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field_name is not None:
            where.append(f"field '{field_name}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass(frozen=True)
class LayerNode:
    name: str
    kind: str
    kernel: int | None = None
    stride: int | None = None
    padding: str | int = "valid"
    inputs: tuple[str, ...] = ()
    report: bool = False
    line: int | None = field(default=None, compare=False)

    def validate(self):
        err = lambda msg, f=None: ConfigError(f"layer '{self.name}': {msg}", self.line, f)  # noqa: E731
        if self.kind not in KINDS:
            raise err(f"unknown kind '{self.kind}'", "kind")
        if self.kind == "input":
            if self.inputs:
                raise err("input nodes take no predecessors", "inputs")
            if self.kernel is not None or self.stride is not None:
                raise err("input nodes carry no kernel/stride", "kernel")
        elif self.kind in ("conv", "pool"):
            if len(self.inputs) != 1:
                raise err(f"{self.kind} needs exactly one predecessor", "inputs")
            if not isinstance(self.kernel, int) or self.kernel < 1:
                raise err("kernel must be an integer >= 1", "kernel")
            if not isinstance(self.stride, int) or self.stride < 1:
                raise err("stride must be an integer >= 1", "stride")
            if not (self.padding in ("valid", "same")
                    or (isinstance(self.padding, int) and self.padding >= 0)):
                raise err(f"bad padding {self.padding!r}", "padding")
        else:
            if len(self.inputs) < 2:
                raise err("concat needs at least two predecessors", "inputs")
            if self.kernel is not None or self.stride is not None:
                raise err("concat carries no kernel/stride", "kernel")


@dataclass(frozen=True)
class NetGraph:
    layers: tuple[LayerNode, ...]

    def __post_init__(self):
        seen = set()
        for node in self.layers:
            if node.name in seen:
                raise ConfigError(f"duplicate layer name '{node.name}'", node.line, "name")
            seen.add(node.name)
            node.validate()
        inputs = [n for n in self.layers if n.kind == "input"]
        if not inputs:
            raise ConfigError("no input node")
        if len(inputs) > 1:
            raise ConfigError("more than one input node", inputs[1].line, "kind")
        for node in self.layers:
            for pred in node.inputs:
                if pred not in seen:
                    raise ConfigError(f"unknown predecessor '{pred}' of '{node.name}'",
                                      node.line, "inputs")

    def __getitem__(self, name) -> LayerNode:
        for node in self.layers:
            if node.name == name:
                return node
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [n.name for n in self.layers]

    def with_layers(self, *extra: LayerNode) -> "NetGraph":
        return NetGraph(self.layers + tuple(extra))


@dataclass(frozen=True)
class NodeStats:
    name: str
    kind: str
    stride: int
    rf_min: int
    rf_max: int
    height: int
    width: int
    report: bool = False


@dataclass
class NetAnalysis:
    input_size: tuple[int, int]
    nodes: dict[str, NodeStats]

    def __getitem__(self, name) -> NodeStats:
        return self.nodes[name]

    def rows(self, report_only=False) -> list[NodeStats]:
        return [s for s in self.nodes.values() if s.report or not report_only]

    def to_text(self, report_only=False) -> str:
        lines = [f"{'layer':<16}{'height':>8}{'width':>8}{'stride':>8}  receptive field (min/max)"]
        for s in self.rows(report_only):
            rf = f"{s.rf_min}x{s.rf_min}"
            if s.rf_max != s.rf_min:
                rf += f" / {s.rf_max}x{s.rf_max}"
            lines.append(f"{s.name:<16}{s.height:>8}{s.width:>8}{s.stride:>8}  {rf}")
        return "\n".join(lines) + "\n"

    def to_csv(self, report_only=False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "kind", "height", "width", "stride", "rf_min", "rf_max"])
        for s in self.rows(report_only):
            w.writerow([s.name, s.kind, s.height, s.width, s.stride, s.rf_min, s.rf_max])
        return buf.getvalue()

    def to_json(self, report_only=False) -> str:
        payload = {"input_size": list(self.input_size),
                   "layers": [asdict(s) for s in self.rows(report_only)]}
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _out_size(n: int, node: LayerNode) -> int:
    k, s, pad = node.kernel, node.stride, node.padding
    if pad == "same":
        return math.ceil(n / s)
    p = 0 if pad == "valid" else pad
    if n + 2 * p < k:
        raise ConfigError(f"layer '{node.name}': input extent {n} smaller than kernel {k}",
                          node.line)
    return (n + 2 * p - k) // s + 1


def topological_order(graph: NetGraph) -> list[LayerNode]:
    """Kahn's algorithm, breaking ties by config order."""
    indeg = {n.name: len(n.inputs) for n in graph.layers}
    succ: dict[str, list[str]] = {n.name: [] for n in graph.layers}
    for n in graph.layers:
        for p in n.inputs:
            succ[p].append(n.name)
    position = {n.name: i for i, n in enumerate(graph.layers)}
    ready = sorted((n.name for n in graph.layers if indeg[n.name] == 0), key=position.get)
    order = []
    while ready:
        name = ready.pop(0)
        order.append(graph[name])
        for nxt in succ[name]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
                ready.sort(key=position.get)
    if len(order) != len(graph.layers):
        stuck = [n for n in graph.names if indeg[n] > 0]
        raise ConfigError(f"cycle detected through {', '.join(stuck)}")
    return order


def analyze(graph: NetGraph, input_size) -> NetAnalysis:
    """Per-node cumulative stride, rf_min/rf_max and feature size.

    conv/pool: rf = rf_in + (k - 1) * stride_in, stride = stride_in * s.
    concat: min/max over branches; branch strides and sizes must agree.
    """
    h, w = (int(v) for v in input_size)
    if h < 1 or w < 1:
        raise ValueError(f"input size must be positive, got {input_size}")
    stats: dict[str, NodeStats] = {}
    for node in topological_order(graph):
        if node.kind == "input":
            st = NodeStats(node.name, node.kind, 1, 1, 1, h, w, node.report)
        elif node.kind in ("conv", "pool"):
            src = stats[node.inputs[0]]
            grow = (node.kernel - 1) * src.stride
            st = NodeStats(node.name, node.kind, src.stride * node.stride,
                           src.rf_min + grow, src.rf_max + grow,
                           _out_size(src.height, node), _out_size(src.width, node),
                           node.report)
        else:
            srcs = [stats[p] for p in node.inputs]
            strides = {s.stride for s in srcs}
            if len(strides) > 1:
                detail = ", ".join(f"{s.name}={s.stride}" for s in srcs)
                raise ConfigError(f"stride mismatch at concat '{node.name}' ({detail})",
                                  node.line, "inputs")
            sizes = {(s.height, s.width) for s in srcs}
            if len(sizes) > 1:
                detail = ", ".join(f"{s.name}={s.height}x{s.width}" for s in srcs)
                raise ConfigError(f"feature size mismatch at concat '{node.name}' ({detail})",
                                  node.line, "inputs")
            st = NodeStats(node.name, node.kind, srcs[0].stride,
                           min(s.rf_min for s in srcs), max(s.rf_max for s in srcs),
                           srcs[0].height, srcs[0].width, node.report)
        stats[node.name] = st
    ordered = {name: stats[name] for name in graph.names}
    return NetAnalysis((h, w), ordered)


# libyaml when present; the pure-Python loader is ~50x slower on the shipped config
_Loader = getattr(yaml, "CSafeLoader", yaml.SafeLoader)

_FIELDS = {"name", "kind", "kernel", "stride", "padding", "inputs", "report"}


def load_netconfig(text: str) -> NetGraph:
    """Parse and validate a ``.netcfg`` document."""
    loader = _Loader(text)
    try:
        root = loader.get_single_node()
        data = loader.construct_document(root) if root is not None else None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {exc}", mark.line + 1 if mark else None) from None
    finally:
        loader.dispose()
    if data is None:
        raise ConfigError("no input node")
    if not isinstance(data, dict) or "layers" not in data:
        raise ConfigError("document must be a mapping with a 'layers' list", 1, "layers")
    layers_data = data["layers"] or []
    if not isinstance(layers_data, list):
        raise ConfigError("'layers' must be a list", 1, "layers")
    seq_node = next(v for k, v in root.value if k.value == "layers")
    item_nodes = seq_node.value if isinstance(seq_node, yaml.SequenceNode) else []

    nodes = []
    for i, rec in enumerate(layers_data):
        line = item_nodes[i].start_mark.line + 1 if i < len(item_nodes) else None
        if not isinstance(rec, dict):
            raise ConfigError("layer record must be a mapping", line)
        unknown = set(rec) - _FIELDS
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", line, sorted(unknown)[0])
        for req in ("name", "kind"):
            if req not in rec:
                raise ConfigError("missing required key", line, req)
        inputs = rec.get("inputs", [])
        if isinstance(inputs, str):
            inputs = [inputs]
        nodes.append(LayerNode(
            name=str(rec["name"]),
            kind=str(rec["kind"]),
            kernel=rec.get("kernel"),
            stride=rec.get("stride"),
            padding=rec.get("padding", "valid"),
            inputs=tuple(str(p) for p in inputs),
            report=bool(rec.get("report", False)),
            line=line,
        ))
    return NetGraph(tuple(nodes))


def load_netconfig_file(path) -> NetGraph:
    with open(path, encoding="utf-8") as fh:
        return load_netconfig(fh.read())


def parse_size(text: str) -> tuple[int, int]:
    """``"512x2048"`` -> ``(512, 2048)`` (height x width)."""
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise ValueError(f"expected HxW, got {text!r}") from None
