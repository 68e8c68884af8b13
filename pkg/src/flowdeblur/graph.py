"""Declarative layer graph: named nodes, forward pass, exact backward pass.

Nodes are declared in execution order and reference their inputs by
name. The backward pass walks the list in reverse, summing gradients
wherever a value feeds several consumers, and leaves parameter
gradients on the nodes (`grad_w`, `grad_b`).
"""

import numpy as np

from . import layers, svrnn

GATE_LIMIT = 1.0 - 1e-6  # keeps tanh gates strictly inside (-1, 1) in float32


class Node:
    """Base: `name` is also the name of this node's output value."""

    def __init__(self, name, inputs):
        self.name = name
        self.inputs = list(inputs)

    has_params = False

    def init_params(self, rng, dtype):
        pass

    def describe(self):
        return f"{self.name:14s} {type(self).__name__:12s} <- {'+'.join(self.inputs)}"


class ConvNode(Node):
    def __init__(self, name, src, in_c, out_c, kernel, stride=1, act=None):
        super().__init__(name, [src])
        if act not in (None, "lrelu", "tanh"):
            raise ValueError(f"unknown activation {act!r}")
        self.in_c, self.out_c, self.kernel, self.stride = in_c, out_c, kernel, stride
        self.act = act
        self.weight = self.bias = None
        self.grad_w = self.grad_b = None
        self.opt_w = self.opt_b = None

    has_params = True

    def init_params(self, rng, dtype):
        self.weight = layers.xavier_init(
            (self.out_c, self.in_c, self.kernel, self.kernel), rng, dtype)
        self.bias = np.zeros(self.out_c, dtype=dtype)
        self.opt_w = layers.AdamState.like(self.weight)
        self.opt_b = layers.AdamState.like(self.bias)

    def forward(self, vals, caches):
        y, conv_cache = layers.conv2d_forward(vals[self.inputs[0]], self.weight,
                                              self.bias, self.stride)
        act_cache = None
        if self.act == "lrelu":
            y, act_cache = layers.leaky_relu_forward(y)
        elif self.act == "tanh":
            y, act_cache = layers.tanh_forward(y)
            y = np.clip(y, -GATE_LIMIT, GATE_LIMIT)
        caches[self.name] = (conv_cache, act_cache)
        vals[self.name] = y

    def backward(self, grad, grads, caches, skip=frozenset()):
        conv_cache, act_cache = caches[self.name]
        if self.act == "lrelu":
            grad = layers.leaky_relu_backward(grad, act_cache)
        elif self.act == "tanh":
            grad = layers.tanh_backward(grad, act_cache)
        need = self.inputs[0] not in skip
        gx, gw, gb = layers.conv2d_backward(grad, self.weight, conv_cache,
                                            need_input_grad=need)
        self.grad_w = gw
        self.grad_b = gb
        if need:
            _accumulate(grads, self.inputs[0], gx)

    def describe(self):
        return (f"{self.name:14s} conv{'' if self.act is None else '+' + self.act:9s}"
                f" {self.kernel}x{self.kernel} s{self.stride} "
                f"{self.in_c}/{self.out_c} <- {self.inputs[0]}")


class DeconvNode(Node):
    """Transposed conv, kernel 4 / stride 2: exact 2x spatial upsampling."""

    def __init__(self, name, src, in_c, out_c, act=None):
        super().__init__(name, [src])
        self.in_c, self.out_c = in_c, out_c
        self.act = act
        self.weight = self.bias = None
        self.grad_w = self.grad_b = None
        self.opt_w = self.opt_b = None

    has_params = True

    def init_params(self, rng, dtype):
        self.weight = layers.xavier_init(
            (self.in_c, self.out_c, layers.DECONV_K, layers.DECONV_K), rng, dtype)
        self.bias = np.zeros(self.out_c, dtype=dtype)
        self.opt_w = layers.AdamState.like(self.weight)
        self.opt_b = layers.AdamState.like(self.bias)

    def forward(self, vals, caches):
        y, dc_cache = layers.deconv2d_forward(vals[self.inputs[0]], self.weight,
                                              self.bias)
        act_cache = None
        if self.act == "lrelu":
            y, act_cache = layers.leaky_relu_forward(y)
        caches[self.name] = (dc_cache, act_cache)
        vals[self.name] = y

    def backward(self, grad, grads, caches, skip=frozenset()):
        dc_cache, act_cache = caches[self.name]
        if self.act == "lrelu":
            grad = layers.leaky_relu_backward(grad, act_cache)
        gx, gw, gb = layers.deconv2d_backward(grad, self.weight, dc_cache)
        self.grad_w = gw
        self.grad_b = gb
        _accumulate(grads, self.inputs[0], gx)

    def describe(self):
        return (f"{self.name:14s} deconv{'' if self.act is None else '+' + self.act:7s}"
                f" 4x4 s2 {self.in_c}/{self.out_c} <- {self.inputs[0]}")


class ConcatNode(Node):
    def forward(self, vals, caches):
        parts = [vals[k] for k in self.inputs]
        caches[self.name] = [p.shape[1] for p in parts]
        vals[self.name] = layers.concat_channels(parts)

    def backward(self, grad, grads, caches, skip=frozenset()):
        for src, piece in zip(self.inputs, layers.split_channels(grad, caches[self.name])):
            if src not in skip:
                _accumulate(grads, src, piece)


class RnnNode(Node):
    """Four-direction spatially variant RNN; inputs are (features, gate maps)."""

    def __init__(self, name, feat, gates):
        super().__init__(name, [feat, gates])

    def forward(self, vals, caches):
        f = vals[self.inputs[0]]
        w = vals[self.inputs[1]]
        peak = float(np.abs(w).max()) if w.size else 0.0
        if peak >= 1.0:
            raise ValueError(f"{self.name}: gate magnitude {peak} >= 1; gates must "
                             "come through a bounded tanh")
        g, cache = svrnn.svrnn_forward(f, w)
        caches[self.name] = cache
        vals[self.name] = g

    def backward(self, grad, grads, caches, skip=frozenset()):
        cache = caches[self.name]
        gf, gw = svrnn.svrnn_backward(grad, cache.f, cache.w, cache)
        _accumulate(grads, self.inputs[0], gf)
        _accumulate(grads, self.inputs[1], gw)

    def describe(self):
        return f"{self.name:14s} rnn          <- {self.inputs[0]}+{self.inputs[1]}"


def _accumulate(grads, name, g):
    if name in grads:
        grads[name] = grads[name] + g
    else:
        grads[name] = g


class LayerGraph:
    """Ordered node list plus the set of external input names."""

    def __init__(self, input_names):
        self.input_names = list(input_names)
        self.nodes = []
        self.by_name = {}

    def add(self, node):
        known = set(self.input_names) | set(self.by_name)
        for src in node.inputs:
            if src not in known:
                raise ValueError(f"layer {node.name}: unknown input {src!r}")
        if node.name in self.by_name or node.name in self.input_names:
            raise ValueError(f"duplicate layer name {node.name!r}")
        self.nodes.append(node)
        self.by_name[node.name] = node
        return node

    def init_params(self, rng, dtype=np.float32):
        for node in self.nodes:
            node.init_params(rng, dtype)

    def forward(self, inputs):
        """Run all nodes; returns (values, caches) keyed by node name."""
        vals = dict(inputs)
        caches = {}
        for node in self.nodes:
            node.forward(vals, caches)
        return vals, caches

    def backward(self, out_grads, caches, skip_input_grads=()):
        """Reverse sweep from `out_grads` (name -> gradient).

        Parameter gradients land on the nodes; returns gradients with
        respect to the graph's external inputs (missing if no path).
        Names in skip_input_grads must be graph inputs; their gradients
        are not materialized.
        """
        skip = frozenset(skip_input_grads)
        unknown = skip - set(self.input_names)
        if unknown:
            raise ValueError(f"skip_input_grads must name graph inputs; got {unknown}")
        grads = dict(out_grads)
        for node in reversed(self.nodes):
            g = grads.pop(node.name, None)
            if g is None:
                continue
            node.backward(g, grads, caches, skip=skip)
        return {k: v for k, v in grads.items() if k in self.input_names}

    def parameters(self):
        """Yields (qualified_name, node, attr) for every parameter tensor."""
        for node in self.nodes:
            if node.has_params:
                yield f"{node.name}.weight", node, "weight"
                yield f"{node.name}.bias", node, "bias"

    def param_count(self):
        return sum(getattr(node, attr).size for _, node, attr in self.parameters())

    def summary(self):
        return "\n".join(node.describe() for node in self.nodes)
