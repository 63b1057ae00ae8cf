"""Layer catalogue and the ModelGraph container that wires layers together."""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .. import ShapeError, StateError, UsageError
from . import ops
from .tensor import Tensor, parameter


class LayerKind(str, enum.Enum):
    CONV3X3 = "conv3x3"
    CONV1X1 = "conv1x1"
    BATCHNORM = "batchnorm"
    RELU = "relu"
    MAXPOOL2X2 = "maxpool2x2"
    AVGPOOL2X2 = "avgpool2x2"
    DECONV2X2 = "deconv2x2"
    CONCAT = "concat"
    DROPOUT = "dropout"
    # resize used by the multi-stage fusion decoder
    UPSAMPLE = "upsample"


PARAMETRIC = {LayerKind.CONV3X3, LayerKind.CONV1X1, LayerKind.BATCHNORM, LayerKind.DECONV2X2}


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    in_channels: int = 0
    out_channels: int = 0
    dropout: float = 0.0
    eps: float = ops.BN_EPS
    momentum: float = ops.BN_MOMENTUM
    factor: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout ratio must lie in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d


@dataclass(frozen=True)
class Node:
    name: str
    spec: LayerSpec
    inputs: Tuple[str, ...]


INPUT = "input"


class ModelGraph:
    """An acyclic network of catalogue layers with its own parameter store.

    Nodes are kept in execution order; every node may only read the graph
    input or earlier nodes, which makes the wiring acyclic by construction.
    """

    def __init__(self, name: str, in_channels: int, spatial: int = 32, meta: Optional[dict] = None):
        self.name = name
        self.in_channels = in_channels
        self.spatial = spatial
        self.meta = dict(meta or {})
        self.nodes: List[Node] = []
        self.params: Dict[str, Tensor] = {}
        self.buffers: Dict[str, np.ndarray] = {}
        self.training = True
        self.update_bn_stats = True
        self._last_output: Optional[Tensor] = None

    # -- construction ------------------------------------------------------
    def add(self, name: str, spec: LayerSpec, *inputs: str) -> str:
        known = {INPUT} | {n.name for n in self.nodes}
        if name in known:
            raise UsageError(f"duplicate node name {name!r}")
        for i in inputs:
            if i not in known:
                raise UsageError(f"node {name!r} reads unknown or later node {i!r}")
        if spec.kind is not LayerKind.CONCAT and len(inputs) != 1:
            raise UsageError(f"{spec.kind.value} takes exactly one input")
        self.nodes.append(Node(name, spec, tuple(inputs)))
        return name

    @property
    def output(self) -> str:
        return self.nodes[-1].name

    def init_params(self, seed: int, dtype=np.float32) -> "ModelGraph":
        """Framework-style default init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
        rng = np.random.default_rng(seed)
        self.params.clear()
        self.buffers.clear()
        for node in self.nodes:
            s = node.spec
            if s.kind in (LayerKind.CONV3X3, LayerKind.CONV1X1):
                k = 3 if s.kind is LayerKind.CONV3X3 else 1
                bound = 1.0 / np.sqrt(s.in_channels * k * k)
                self.params[f"{node.name}.weight"] = parameter(
                    rng.uniform(-bound, bound, (s.out_channels, s.in_channels, k, k)).astype(dtype))
                self.params[f"{node.name}.bias"] = parameter(
                    rng.uniform(-bound, bound, s.out_channels).astype(dtype))
            elif s.kind is LayerKind.DECONV2X2:
                # fan_in taken from dim 1 of the (in, out, 2, 2) weight, as in common frameworks
                bound = 1.0 / np.sqrt(s.out_channels * 4)
                self.params[f"{node.name}.weight"] = parameter(
                    rng.uniform(-bound, bound, (s.in_channels, s.out_channels, 2, 2)).astype(dtype))
                self.params[f"{node.name}.bias"] = parameter(
                    rng.uniform(-bound, bound, s.out_channels).astype(dtype))
            elif s.kind is LayerKind.BATCHNORM:
                self.params[f"{node.name}.gamma"] = parameter(np.ones(s.out_channels, dtype))
                self.params[f"{node.name}.beta"] = parameter(np.zeros(s.out_channels, dtype))
                self.buffers[f"{node.name}.running_mean"] = np.zeros(s.out_channels, np.float64)
                self.buffers[f"{node.name}.running_var"] = np.ones(s.out_channels, np.float64)
        return self

    # -- modes ---------------------------------------------------------------
    def train(self) -> "ModelGraph":
        self.training = True
        return self

    def eval(self) -> "ModelGraph":
        self.training = False
        return self

    def astype(self, dtype) -> "ModelGraph":
        for k, p in self.params.items():
            self.params[k] = parameter(p.data.astype(dtype))
        return self

    @property
    def dtype(self):
        return next(iter(self.params.values())).data.dtype

    # -- execution -----------------------------------------------------------
    def forward(self, x, rng: Optional[np.random.Generator] = None) -> Tensor:
        if not self.params:
            raise StateError("parameters not initialised; call init_params() or load a checkpoint")
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if x.shape[1:] != (self.in_channels, self.spatial, self.spatial):
            raise ShapeError(f"{self.name}: expected (N, {self.in_channels}, {self.spatial}, "
                             f"{self.spatial}) input, got {x.shape}")
        env: Dict[str, Tensor] = {INPUT: x}
        for node in self.nodes:
            args = [env[i] for i in node.inputs]
            env[node.name] = self._apply(node, args, rng)
        out = env[self.output]
        self._last_output = out
        return out

    __call__ = forward

    def _apply(self, node: Node, args: List[Tensor], rng) -> Tensor:
        s, p, name = node.spec, self.params, node.name
        kind = s.kind
        if kind is LayerKind.CONV3X3:
            return ops.conv2d(args[0], p[f"{name}.weight"], p[f"{name}.bias"], 1, 1)
        if kind is LayerKind.CONV1X1:
            return ops.conv2d(args[0], p[f"{name}.weight"], p[f"{name}.bias"], 1, 0)
        if kind is LayerKind.BATCHNORM:
            return ops.batchnorm(args[0], p[f"{name}.gamma"], p[f"{name}.beta"],
                                 self.buffers[f"{name}.running_mean"], self.buffers[f"{name}.running_var"],
                                 self.training, s.eps, s.momentum, update_stats=self.update_bn_stats)
        if kind is LayerKind.RELU:
            return ops.relu(args[0])
        if kind is LayerKind.MAXPOOL2X2:
            return ops.max_pool2x2(args[0])
        if kind is LayerKind.AVGPOOL2X2:
            return ops.avg_pool2x2(args[0])
        if kind is LayerKind.DECONV2X2:
            return ops.deconv2x2(args[0], p[f"{name}.weight"], p[f"{name}.bias"])
        if kind is LayerKind.CONCAT:
            return ops.concat(args, axis=1)
        if kind is LayerKind.DROPOUT:
            return ops.dropout(args[0], s.dropout, self.training, rng)
        if kind is LayerKind.UPSAMPLE:
            return ops.upsample_nearest(args[0], s.factor)
        raise AssertionError(kind)

    def backward(self, upstream: np.ndarray) -> None:
        """Push an upstream gradient of the last forward output into the parameters."""
        out = self._last_output
        if out is None:
            raise StateError("backward() called before forward()")
        self._last_output = None
        if not out.requires_grad:
            raise StateError("last forward did not record a graph")
        out.backward(np.asarray(upstream, dtype=out.dtype))

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    # -- static analysis -------------------------------------------------------
    def infer_shapes(self, input_shape: Sequence[int]) -> Dict[str, Tuple[int, ...]]:
        """Propagate shapes through the graph without touching any data."""
        n, c, h, w = input_shape
        shapes = {INPUT: (n, c, h, w)}
        for node in self.nodes:
            s = node.spec
            ins = [shapes[i] for i in node.inputs]
            n_, c_, h_, w_ = ins[0]
            kind = s.kind
            if kind in (LayerKind.CONV3X3, LayerKind.CONV1X1, LayerKind.DECONV2X2, LayerKind.BATCHNORM):
                if c_ != s.in_channels:
                    raise ShapeError(f"{node.name}: expects {s.in_channels} channels, gets {c_}")
            if kind in (LayerKind.CONV3X3, LayerKind.CONV1X1):
                k = 3 if kind is LayerKind.CONV3X3 else 1
                pad = 1 if k == 3 else 0
                out = (n_, s.out_channels, ops.conv_output_size(h_, k, 1, pad),
                       ops.conv_output_size(w_, k, 1, pad))
            elif kind is LayerKind.DECONV2X2:
                out = (n_, s.out_channels, 2 * h_, 2 * w_)
            elif kind in (LayerKind.MAXPOOL2X2, LayerKind.AVGPOOL2X2):
                if h_ % 2 or w_ % 2:
                    raise ShapeError(f"{node.name}: odd spatial size {h_}x{w_} at a 2x2 pool")
                out = (n_, c_, h_ // 2, w_ // 2)
            elif kind is LayerKind.CONCAT:
                for other in ins[1:]:
                    if other[0] != n_ or other[2:] != (h_, w_):
                        raise ShapeError(f"{node.name}: concat of mismatched shapes {ins}")
                out = (n_, sum(i[1] for i in ins), h_, w_)
            elif kind is LayerKind.UPSAMPLE:
                out = (n_, c_, h_ * s.factor, w_ * s.factor)
            else:
                out = ins[0]
            shapes[node.name] = out
        return shapes

    @property
    def param_count(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))

    # -- serialisation helpers -------------------------------------------------
    def structure(self) -> dict:
        return {
            "name": self.name,
            "in_channels": self.in_channels,
            "spatial": self.spatial,
            "meta": self.meta,
            "nodes": [{"name": n.name, "spec": n.spec.to_dict(), "inputs": list(n.inputs)}
                      for n in self.nodes],
        }

    @classmethod
    def from_structure(cls, d: dict) -> "ModelGraph":
        g = cls(d["name"], d["in_channels"], d["spatial"], d.get("meta"))
        for n in d["nodes"]:
            g.add(n["name"], LayerSpec(**n["spec"]), *n["inputs"])
        return g

    def state_dict(self) -> Dict[str, np.ndarray]:
        out = {f"param/{k}": t.data for k, t in self.params.items()}
        out.update({f"buffer/{k}": v for k, v in self.buffers.items()})
        return out

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params, buffers = {}, {}
        for k, v in state.items():
            kind, name = k.split("/", 1)
            if kind == "param":
                params[name] = parameter(np.array(v))
            elif kind == "buffer":
                buffers[name] = np.array(v)
        expected = self.state_shapes()
        got = {f"param/{k}": v.data.shape for k, v in params.items()}
        got.update({f"buffer/{k}": v.shape for k, v in buffers.items()})
        if got != expected:
            bad = sorted(k for k in set(got) | set(expected) if got.get(k) != expected.get(k))
            raise StateError(f"state does not match graph {self.name!r}: {bad[:5]}")
        self.params, self.buffers = params, buffers

    def state_shapes(self) -> Dict[str, Tuple[int, ...]]:
        out = {}
        for node in self.nodes:
            s, n = node.spec, node.name
            if s.kind in (LayerKind.CONV3X3, LayerKind.CONV1X1):
                k = 3 if s.kind is LayerKind.CONV3X3 else 1
                out[f"param/{n}.weight"] = (s.out_channels, s.in_channels, k, k)
                out[f"param/{n}.bias"] = (s.out_channels,)
            elif s.kind is LayerKind.DECONV2X2:
                out[f"param/{n}.weight"] = (s.in_channels, s.out_channels, 2, 2)
                out[f"param/{n}.bias"] = (s.out_channels,)
            elif s.kind is LayerKind.BATCHNORM:
                out[f"param/{n}.gamma"] = out[f"param/{n}.beta"] = (s.out_channels,)
                out[f"buffer/{n}.running_mean"] = out[f"buffer/{n}.running_var"] = (s.out_channels,)
        return out
