"""Sequential network with named skip references over a flat parameter buffer."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..core import ParameterVector, RngStream, Segment
from . import layers as L

INPUT = "input"


class Network:
    """Ordered list of named layers.

    Each layer reads from the previous layer unless ``spec.src`` names an
    earlier node (``"input"`` is the network input); ``Add`` and ``ConcatCh``
    read further named nodes. Parameters live in one flat buffer whose
    layout is enumerated from the specs in order: ``<layer>.weight``,
    ``<layer>.bias``.
    """

    def __init__(self, layers: Sequence[tuple[str, L.LayerSpec]], dtype=np.float32):
        self.layers = list(layers)
        self._check_graph()
        segs = []
        offset = 0
        self._shapes = {}
        for name, spec in self.layers:
            for pname, shape in spec.param_shapes():
                size = int(np.prod(shape))
                segs.append(Segment(f"{name}.{pname}", offset, size))
                self._shapes[f"{name}.{pname}"] = shape
                offset += size
        self.layout = tuple(segs)
        self.n_params = offset
        self.dtype = np.dtype(dtype)
        self.params = np.zeros(offset, dtype=self.dtype)
        self.grads = np.zeros(offset, dtype=self.dtype)
        self._cache = None
        # test hook: (segment name, factor) applied to that gradient segment
        self.grad_fault: Optional[tuple[str, float]] = None

    def _check_graph(self):
        seen = {INPUT}
        prev = INPUT
        for name, spec in self.layers:
            if name in seen:
                raise ValueError(f"duplicate layer name {name!r}")
            srcs = [spec.src or prev, *spec.extra_inputs()]
            for s in srcs:
                if s not in seen:
                    raise ValueError(f"layer {name!r} references unknown or later node {s!r}")
            seen.add(name)
            prev = name
        if not self.layers:
            raise ValueError("network needs at least one layer")

    # -- parameters -------------------------------------------------------

    def param_view(self, name: str, buf: Optional[np.ndarray] = None) -> np.ndarray:
        buf = self.params if buf is None else buf
        for seg in self.layout:
            if seg.name == name:
                return buf[seg.offset:seg.offset + seg.length].reshape(self._shapes[name])
        raise KeyError(name)

    def _layer_params(self, name, spec, buf):
        return {p: self.param_view(f"{name}.{p}", buf) for p, _ in spec.param_shapes()}

    def init_params(self, rng: RngStream) -> None:
        """He-uniform weights from the layer fan-in, zero biases."""
        gen = rng.generator()
        for name, spec in self.layers:
            if not spec.param_shapes():
                continue
            bound = np.sqrt(6.0 / spec.fan_in())
            w = self.param_view(f"{name}.weight")
            w[...] = gen.uniform(-bound, bound, size=w.shape)
            self.param_view(f"{name}.bias")[...] = 0

    def get_params(self) -> ParameterVector:
        return ParameterVector(self.params.astype(np.float32), self.layout)

    def set_params(self, pv: ParameterVector) -> None:
        if pv.layout != self.layout:
            raise ValueError("parameter layout does not match network")
        self.params[...] = pv.values

    def grad_vector(self) -> ParameterVector:
        return ParameterVector(self.grads.astype(np.float32), self.layout)

    def to(self, dtype) -> "Network":
        """Copy of this network computing in ``dtype``."""
        other = Network(self.layers, dtype=dtype)
        other.params[...] = self.params
        other.grad_fault = self.grad_fault
        return other

    def copy(self) -> "Network":
        return self.to(self.dtype)

    # -- compute ----------------------------------------------------------

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        acts = {INPUT: x}
        caches = []
        prev = INPUT
        for name, spec in self.layers:
            inputs = [acts[spec.src or prev]] + [acts[s] for s in spec.extra_inputs()]
            out, c = L.forward_layer(spec, self._layer_params(name, spec, self.params), inputs)
            acts[name] = out
            caches.append(c)
            prev = name
        self._cache = (caches, {k: v.shape for k, v in acts.items()}) if cache else None
        return acts[prev]

    def activation_pattern(self) -> np.ndarray:
        """Branch choices of the last cached forward: ReLU on/off and max-pool argmax."""
        if self._cache is None:
            raise RuntimeError("activation_pattern called before forward")
        parts = []
        for (_, spec), c in zip(self.layers, self._cache[0]):
            if isinstance(spec, L.ReLU):
                parts.append(c.reshape(-1).astype(np.int64))
            elif isinstance(spec, L.MaxPool2):
                parts.append(c[0].reshape(-1).astype(np.int64))
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients into ``self.grads`` (overwriting them)
        and return the gradient with respect to the network input."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        caches, shapes = self._cache
        self.grads[...] = 0
        dacts = {self.layers[-1][0]: np.asarray(dout, dtype=self.dtype)}
        names = [INPUT] + [n for n, _ in self.layers]
        for idx in range(len(self.layers) - 1, -1, -1):
            name, spec = self.layers[idx]
            d = dacts.pop(name, None)
            if d is None:
                # node does not reach the output
                continue
            srcs = [spec.src or names[idx]] + list(spec.extra_inputs())
            dins, dparams = L.backward_layer(spec, self._layer_params(name, spec, self.params), caches[idx], d)
            for pname, g in dparams.items():
                self.param_view(f"{name}.{pname}", self.grads)[...] += g
            for s, g in zip(srcs, dins):
                if s in dacts:
                    dacts[s] = dacts[s] + g
                else:
                    dacts[s] = g
        if self.grad_fault is not None:
            seg, factor = self.grad_fault
            view = self.param_view(seg, self.grads)
            view.flat[0] *= factor
        dx = dacts.get(INPUT)
        if dx is None:
            dx = np.zeros(shapes[INPUT], dtype=self.dtype)
        return dx


def param_count(net_or_layers) -> int:
    """Analytic parameter count: conv o*(i*k*k)+o, dense i*o+o, others 0."""
    layers = net_or_layers.layers if isinstance(net_or_layers, Network) else net_or_layers
    total = 0
    for _, spec in layers:
        if isinstance(spec, L.Conv2D):
            total += spec.out_ch * spec.in_ch * spec.k * spec.k + spec.out_ch
        elif isinstance(spec, L.Dense):
            total += spec.n_in * spec.n_out + spec.n_out
    return total


def save_params(net: Network) -> bytes:
    return net.params.astype("<f4").tobytes()


def load_params(net: Network, blob: bytes) -> None:
    if len(blob) != 4 * net.n_params:
        raise ValueError(f"blob has {len(blob)} bytes, network needs {4 * net.n_params}")
    net.params[...] = np.frombuffer(blob, dtype="<f4")
