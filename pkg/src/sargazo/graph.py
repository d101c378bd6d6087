"""Layer DAG with forward/backward traversal, shape inference and fingerprinting."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CompatibilityError, ConfigError, ShapeError
from .layers import EVAL, TRAIN, Layer, SoftmaxCEHead, softmax_ce

INPUT = "input"

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass
class Node:
    name: str
    layer: Layer
    inputs: list[str]


@dataclass
class Trace:
    """Activations and caches of one forward pass."""

    mode: str
    caches: dict = field(default_factory=dict)
    logits: np.ndarray | None = None
    output: np.ndarray | None = None


class NetworkGraph:
    """Ordered, topologically sorted list of nodes ending in a softmax head.

    ``head_start`` is the index of the first node of the classifier block;
    feature-extraction freezing and head replacement act on that boundary.
    """

    def __init__(self, nodes, input_shape, num_classes, head_start, arch=None):
        self.nodes: list[Node] = list(nodes)
        self.input_shape = tuple(input_shape)
        self.num_classes = num_classes
        self.head_start = head_start
        self.arch = arch
        self._validate()
        self.shapes = infer_shapes(self, self.input_shape)

    def _validate(self):
        if not self.nodes:
            raise ConfigError("network has no nodes")
        seen = {INPUT}
        consumed = set()
        for node in self.nodes:
            if node.name in seen:
                raise ConfigError(f"duplicate node name {node.name!r}")
            for src in node.inputs:
                if src not in seen:
                    raise ConfigError(f"node {node.name!r} reads {src!r} before it is defined")
                consumed.add(src)
            if len(node.inputs) > 1 and not node.layer.multi_input:
                raise ConfigError(f"node {node.name!r} ({node.layer.kind}) takes a single input")
            seen.add(node.name)
        last = self.nodes[-1]
        if not isinstance(last.layer, SoftmaxCEHead) or last.layer.num_classes != self.num_classes:
            raise ConfigError(f"final node must be a softmax-ce-head over {self.num_classes} classes")
        dangling = [n.name for n in self.nodes[:-1] if n.name not in consumed]
        if dangling:
            raise ConfigError(f"nodes {dangling} do not reach the output")
        if not 0 <= self.head_start < len(self.nodes):
            raise ConfigError(f"head_start {self.head_start} out of range")

    # --- introspection -------------------------------------------------

    def __iter__(self):
        return iter(self.nodes)

    def node(self, name) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def count(self, kind) -> int:
        return sum(1 for n in self.nodes if n.layer.kind == kind)

    def head_nodes(self):
        return self.nodes[self.head_start:]

    def feature_nodes(self):
        return self.nodes[:self.head_start]

    def state_dict(self) -> dict[str, np.ndarray]:
        """All parameters and batch-norm running statistics, keyed ``node.tensor``."""
        state = {}
        for n in self.nodes:
            for k, v in n.layer.params.items():
                state[f"{n.name}.{k}"] = v
            for k, v in n.layer.buffers.items():
                state[f"{n.name}.{k}"] = v
        return state

    def load_state_dict(self, state, only=None):
        """Copy tensors in; ``only`` restricts loading to a set of node names."""
        own = self.state_dict()
        wanted = {k for k in own if only is None or k.rsplit(".", 1)[0] in only}
        missing = wanted - set(state)
        if missing:
            raise CompatibilityError(f"checkpoint lacks tensors {sorted(missing)[:5]}")
        for key in sorted(wanted):
            if tuple(state[key].shape) != tuple(own[key].shape):
                raise CompatibilityError(f"tensor {key} has shape {tuple(state[key].shape)}, "
                                         f"network expects {tuple(own[key].shape)}")
        for n in self.nodes:
            if only is not None and n.name not in only:
                continue
            for store in (n.layer.params, n.layer.buffers):
                for k in store:
                    store[k] = np.array(state[f"{n.name}.{k}"], dtype=np.float32, copy=True)

    def trainable_layers(self):
        return [n.layer for n in self.nodes if n.layer.trainable]

    def freeze_features(self):
        for n in self.feature_nodes():
            n.layer.frozen = True

    def set_frozen(self, frozen: bool):
        for n in self.nodes:
            n.layer.frozen = frozen

    def fingerprint(self) -> int:
        return fnv1a_64(canonical_text(self).encode("utf-8"))

    # --- execution -----------------------------------------------------

    def forward(self, x, mode=EVAL, rng=None) -> Trace:
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"network expects input (N, {', '.join(map(str, self.input_shape))}), got {x.shape}")
        trace = Trace(mode)
        acts = {INPUT: x}
        remaining = self._consumer_counts()
        for node in self.nodes:
            ins = [acts[s] for s in node.inputs]
            arg = ins if node.layer.multi_input else ins[0]
            out, cache = node.layer.forward(arg, mode, rng)
            if cache is not None:
                trace.caches[node.name] = cache
            acts[node.name] = out
            for s in node.inputs:
                remaining[s] -= 1
                if remaining[s] == 0 and s != self.nodes[-1].inputs[0]:
                    del acts[s]
        trace.logits = acts[self.nodes[-1].inputs[0]]
        trace.output = acts[self.nodes[-1].name]
        return trace

    def _consumer_counts(self):
        counts = {INPUT: 0}
        for n in self.nodes:
            counts[n.name] = 0
            for s in n.inputs:
                counts[s] += 1
        return counts

    def _needs_backward(self):
        """Nodes whose backward influences some trainable parameter."""
        needs = {INPUT: False}
        for n in self.nodes:
            needs[n.name] = n.layer.trainable or any(needs[s] for s in n.inputs)
        return needs

    def backward(self, dlogits, trace: Trace):
        """Backpropagate a gradient w.r.t. the logits; fills each layer's ``grads``."""
        needs = self._needs_backward()
        grads = {self.nodes[-1].inputs[0]: dlogits}
        for node in reversed(self.nodes[:-1]):
            upstream = grads.pop(node.name, None)
            if upstream is None or not needs[node.name]:
                continue
            need_dx = any(needs[s] for s in node.inputs)
            dx, _ = node.layer.backward(upstream, trace.caches[node.name], need_dx=need_dx)
            if not need_dx:
                continue
            parts = dx if node.layer.multi_input else [dx]
            for src, g in zip(node.inputs, parts):
                if src == INPUT or not needs[src]:
                    continue
                if src in grads:
                    grads[src] = grads[src] + g
                else:
                    grads[src] = g

    def train_step(self, x, labels, rng, class_weights=None):
        """Train-mode forward, loss, and backward. Returns ``(loss, logits)``."""
        trace = self.forward(x, TRAIN, rng)
        loss, dlogits = softmax_ce(trace.logits, labels, class_weights)
        if np.isfinite(loss):
            self.backward(dlogits, trace)
        return loss, trace.logits

    def predict_proba(self, x, batch_size=100):
        out = [self.forward(x[i:i + batch_size], EVAL).output for i in range(0, len(x), batch_size)]
        return np.concatenate(out, axis=0)

    def logits(self, x, batch_size=100):
        out = [self.forward(x[i:i + batch_size], EVAL).logits for i in range(0, len(x), batch_size)]
        return np.concatenate(out, axis=0)


def infer_shapes(net: NetworkGraph, input_shape) -> dict[str, tuple]:
    """Per-node output shapes (without batch axis). Raises ShapeError naming the node."""
    input_shape = tuple(input_shape)
    if input_shape != net.input_shape:
        raise ShapeError(f"input shape {input_shape} does not match declared {net.input_shape}")
    shapes = {INPUT: input_shape}
    for node in net.nodes:
        ins = [shapes[s] for s in node.inputs]
        try:
            shapes[node.name] = tuple(node.layer.output_shape(ins if node.layer.multi_input else ins[0]))
        except ShapeError as exc:
            raise ShapeError(f"node {node.name!r} ({node.layer.kind}): {exc}") from None
    del shapes[INPUT]
    return shapes


def param_count(net: NetworkGraph) -> int:
    """Trainable scalars (weights, biases, batch-norm gamma/beta); running stats excluded."""
    return sum(int(np.prod(p.shape)) for n in net.nodes for p in n.layer.params.values())


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def canonical_text(net: NetworkGraph) -> str:
    lines = []
    if net.arch is not None:
        lines.append(net.arch.canonical())
    lines.append(f"input={','.join(map(str, net.input_shape))};classes={net.num_classes};head={net.head_start}")
    for n in net.nodes:
        hyper = ",".join(f"{k}={_fmt(v)}" for k, v in sorted(n.layer.hyper().items()))
        lines.append(f"{n.name}|{n.layer.kind}|{'+'.join(n.inputs)}|{hyper}")
    return "\n".join(lines) + "\n"
