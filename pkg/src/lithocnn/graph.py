"""Layer-graph representation and executor.

A ``NetworkGraph`` is a topologically ordered list of ``LayerSpec`` nodes over
a fixed (C, 227, 227) input. Layer kinds form a closed set; composite kinds
(``inception``, ``residual``) carry their branch specs nested inside
``params`` so a whole module reads as one node, with nested layers named
``module.branch.layer``.

Every edge shape is statically derivable via ``derive_shapes`` and the
executor produces exactly those shapes at runtime; the final layer must be a
``dense`` over the class count and ``forward`` returns softmax rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import engine as eng
from .engine import BatchNormState, ConvParams, Tensor
from .errors import ParameterError, ShapeError
from .rng import RngHandle

LAYER_KINDS = frozenset(
    {
        "conv",
        "activation",
        "inception",
        "avg_pool",
        "batch_norm",
        "max_pool",
        "zero_pad",
        "residual",
        "dropout",
        "compose",
        "dense",
    }
)

INPUT_NAME = "input"


@dataclass
class LayerSpec:
    kind: str
    name: str
    params: dict = field(default_factory=dict)
    inputs: list = field(default_factory=lambda: [INPUT_NAME])

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ParameterError(f"unknown layer kind '{self.kind}'")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "name": self.name, "params": self.params, "inputs": list(self.inputs)}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(kind=d["kind"], name=d["name"], params=d.get("params", {}), inputs=list(d.get("inputs", [INPUT_NAME])))


@dataclass
class NetworkGraph:
    arch_id: str
    variant: str
    input_shape: tuple
    classes: int
    layers: list

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        seen = {INPUT_NAME}
        for spec in self.layers:
            if spec.name in seen:
                raise ParameterError(f"duplicate layer name '{spec.name}'")
            for src in spec.inputs:
                if src not in seen:
                    raise ParameterError(f"layer '{spec.name}' consumes '{src}' before it is produced")
            seen.add(spec.name)
        if not self.layers or self.layers[-1].kind != "dense":
            raise ParameterError("graph must end with a dense layer over the classes")
        if self.layers[-1].params["units"] != self.classes:
            raise ParameterError("final dense width must equal the class count")

    @property
    def output_name(self) -> str:
        return self.layers[-1].name

    def to_dict(self) -> dict:
        return {
            "arch_id": self.arch_id,
            "variant": self.variant,
            "input_shape": list(self.input_shape),
            "classes": self.classes,
            "layers": [s.to_dict() for s in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkGraph":
        return cls(
            arch_id=d["arch_id"],
            variant=d["variant"],
            input_shape=tuple(d["input_shape"]),
            classes=d["classes"],
            layers=[LayerSpec.from_dict(s) for s in d["layers"]],
        )

    # -- static shape derivation ------------------------------------------------

    def derive_shapes(self) -> dict:
        """Per-sample output shape of every layer, nested module layers included."""
        shapes = {INPUT_NAME: self.input_shape}
        for spec in self.layers:
            in_shapes = [shapes[s] for s in spec.inputs]
            _derive_layer(spec, in_shapes, shapes)
        return shapes

    # -- parameter initialization -----------------------------------------------

    def init_params(self, rng: RngHandle, dtype=np.float32) -> dict:
        """He-normal conv/dense weights, zero biases, identity batch norm."""
        shapes = self.derive_shapes()
        params: dict = {}
        for spec in self.layers:
            _init_layer(spec, [shapes[s] for s in spec.inputs], shapes, params, rng, dtype)
        return params


# ---------------------------------------------------------------------------
# Shape rules
# ---------------------------------------------------------------------------

def _spatial(shape, name):
    if len(shape) != 3:
        raise ShapeError(f"layer '{name}' needs a (C,H,W) input, got {shape}")
    return shape


def _derive_layer(spec: LayerSpec, in_shapes, shapes: dict):
    kind, p = spec.kind, spec.params
    if kind == "conv":
        c, h, w = _spatial(in_shapes[0], spec.name)
        F, S, P = p["kernel_size"], p.get("stride", 1), p.get("padding", 0)
        out = (
            p["out_channels"],
            eng.conv_output_size(h, F, P, S, spec.name),
            eng.conv_output_size(w, F, P, S, spec.name),
        )
    elif kind in ("activation", "dropout", "batch_norm"):
        out = in_shapes[0]
    elif kind in ("max_pool", "avg_pool"):
        c, h, w = _spatial(in_shapes[0], spec.name)
        W, S = p["window"], p.get("stride", p["window"])
        out = (c, eng.conv_output_size(h, W, 0, S, spec.name), eng.conv_output_size(w, W, 0, S, spec.name))
    elif kind == "zero_pad":
        c, h, w = _spatial(in_shapes[0], spec.name)
        out = (c, h + 2 * p["p"], w + 2 * p["p"])
    elif kind == "dense":
        out = (p["units"],)
    elif kind == "compose":
        if p["op"] == "add":
            if len(set(in_shapes)) != 1:
                raise ShapeError(f"compose-add '{spec.name}': mismatched inputs {in_shapes}")
            out = in_shapes[0]
        elif p["op"] == "concat":
            base = in_shapes[0]
            for s in in_shapes[1:]:
                if s[1:] != base[1:]:
                    raise ShapeError(f"compose-concat '{spec.name}': spatial mismatch {in_shapes}")
            out = (sum(s[0] for s in in_shapes),) + base[1:]
        else:
            raise ParameterError(f"compose op '{p['op']}' not supported")
    elif kind == "inception":
        out = _derive_inception(spec, in_shapes[0], shapes)
    elif kind == "residual":
        out = _derive_residual(spec, in_shapes[0], shapes)
    else:  # pragma: no cover - closed set enforced in LayerSpec
        raise ParameterError(f"unhandled kind '{kind}'")
    shapes[spec.name] = out
    return out


def _run_subspecs(dicts, start_shape, shapes):
    cur = start_shape
    for d in dicts:
        sub = LayerSpec.from_dict(d)
        cur = _derive_layer(sub, [cur], shapes)
    return cur


def _derive_inception(spec, in_shape, shapes):
    branch_outs = [_run_subspecs(branch, in_shape, shapes) for branch in spec.params["branches"]]
    base = branch_outs[0]
    for s in branch_outs[1:]:
        if s[1:] != base[1:]:
            raise ShapeError(f"inception '{spec.name}': branch spatial dims differ {branch_outs}")
    return (sum(s[0] for s in branch_outs),) + base[1:]


def _derive_residual(spec, in_shape, shapes):
    main_out = _run_subspecs(spec.params["main"], in_shape, shapes)
    proj = spec.params.get("projection")
    skip_out = _run_subspecs(proj, in_shape, shapes) if proj else in_shape
    if main_out != skip_out:
        raise ShapeError(f"residual '{spec.name}': branch {main_out} vs skip {skip_out}")
    return main_out


# ---------------------------------------------------------------------------
# Parameter initialization
# ---------------------------------------------------------------------------

def _he_normal(rng: RngHandle, shape, fan_in: int, dtype):
    g = rng.generator()
    return (g.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)).astype(dtype)


def _init_layer(spec: LayerSpec, in_shapes, shapes, params: dict, rng: RngHandle, dtype):
    kind, p = spec.kind, spec.params
    if kind == "conv":
        c = in_shapes[0][0]
        F, K = p["kernel_size"], p["out_channels"]
        params[spec.name] = {
            "w": _he_normal(rng.child(spec.name, "w"), (K, c, F, F), c * F * F, dtype),
            "b": np.zeros(K, dtype=dtype),
        }
    elif kind == "dense":
        n = int(np.prod(in_shapes[0]))
        m = p["units"]
        params[spec.name] = {
            "w": _he_normal(rng.child(spec.name, "w"), (m, n), n, dtype),
            "b": np.zeros(m, dtype=dtype),
        }
    elif kind == "batch_norm":
        c = in_shapes[0][0]
        params[spec.name] = {
            "gamma": np.ones(c, dtype=dtype),
            "beta": np.zeros(c, dtype=dtype),
            "running_mean": np.zeros(c, dtype=dtype),
            "running_var": np.ones(c, dtype=dtype),
        }
    elif kind == "inception":
        for branch in p["branches"]:
            cur = in_shapes[0]
            for d in branch:
                sub = LayerSpec.from_dict(d)
                _init_layer(sub, [cur], shapes, params, rng, dtype)
                cur = shapes[sub.name]
    elif kind == "residual":
        for seq in (p["main"], p.get("projection") or []):
            cur = in_shapes[0]
            for d in seq:
                sub = LayerSpec.from_dict(d)
                _init_layer(sub, [cur], shapes, params, rng, dtype)
                cur = shapes[sub.name]


TRAINABLE_SLOTS = ("w", "b", "gamma", "beta")


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

def _as_tensor(v) -> Tensor:
    return v if isinstance(v, Tensor) else Tensor(v)


def _slot(params, name, slot):
    try:
        return _as_tensor(params[name][slot])
    except KeyError as exc:
        raise ShapeError(f"missing parameter '{name}/{slot}'") from exc


def _apply_layer(spec: LayerSpec, xs, params, mode, rng, acts):
    kind, p = spec.kind, spec.params
    x = xs[0]
    training = mode == "train"
    if kind == "conv":
        c_in = x.shape[-3]
        cp = ConvParams(p["kernel_size"], p.get("stride", 1), p.get("padding", 0), c_in, p["out_channels"])
        return eng.conv2d(x, _slot(params, spec.name, "w"), _slot(params, spec.name, "b"), cp)
    if kind == "activation":
        return eng.relu(x)
    if kind == "max_pool":
        return eng.max_pool(x, p["window"], p.get("stride", p["window"]))
    if kind == "avg_pool":
        return eng.avg_pool(x, p["window"], p.get("stride", p["window"]))
    if kind == "zero_pad":
        return eng.pad(x, p["p"])
    if kind == "dropout":
        handle = rng.child(spec.name) if rng is not None else None
        return eng.dropout(x, p["rate"], handle, training)
    if kind == "batch_norm":
        entry = params[spec.name]
        state = BatchNormState(entry["running_mean"], entry["running_var"])
        out = eng.batch_norm(x, _slot(params, spec.name, "gamma"), _slot(params, spec.name, "beta"), state, training)
        entry["running_mean"], entry["running_var"] = state.running_mean, state.running_var
        return out
    if kind == "dense":
        return eng.dense(eng.flatten(x), _slot(params, spec.name, "w"), _slot(params, spec.name, "b"))
    if kind == "compose":
        if p["op"] == "add":
            out = xs[0]
            for other in xs[1:]:
                out = eng.add(out, other)
            return out
        return eng.concat(xs, axis=-3)
    if kind == "inception":
        branch_outs = []
        for branch in p["branches"]:
            cur = x
            for d in branch:
                sub = LayerSpec.from_dict(d)
                cur = _apply_layer(sub, [cur], params, mode, rng, acts)
                acts[sub.name] = cur
            branch_outs.append(cur)
        return eng.concat(branch_outs, axis=-3)
    if kind == "residual":
        cur = x
        for d in p["main"]:
            sub = LayerSpec.from_dict(d)
            cur = _apply_layer(sub, [cur], params, mode, rng, acts)
            acts[sub.name] = cur
        skip = x
        for d in p.get("projection") or []:
            sub = LayerSpec.from_dict(d)
            skip = _apply_layer(sub, [skip], params, mode, rng, acts)
            acts[sub.name] = skip
        return eng.relu(eng.add(cur, skip))
    raise ParameterError(f"unhandled kind '{kind}'")  # pragma: no cover


def forward(
    graph: NetworkGraph,
    params: dict,
    batch,
    mode: str = "infer",
    rng: Optional[RngHandle] = None,
    capture: Optional[Iterable[str]] = None,
):
    """Run the graph on a (B,C,H,W) batch; returns per-sample softmax rows.

    With ``capture`` set (iterable of layer names or ``"all"``) also returns a
    dict of detached activation arrays. Capturing copies data out of the live
    tensors and cannot perturb the prediction.
    """
    if mode not in ("train", "infer"):
        raise ParameterError(f"mode must be 'train' or 'infer', got '{mode}'")
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch))
    squeeze = x.ndim == 3
    if squeeze:
        x = eng.reshape(x, (1,) + x.shape)
    if x.ndim != 4 or tuple(x.shape[1:]) != graph.input_shape:
        raise ShapeError(f"input axis mismatch: expected (B,{','.join(map(str, graph.input_shape))}), got {x.shape}")

    want_all = capture == "all"
    wanted = None if capture is None or want_all else set(capture)
    acts: dict = {}
    values = {INPUT_NAME: x}
    out = x
    for spec in graph.layers:
        xs = [values[s] for s in spec.inputs]
        out = _apply_layer(spec, xs, params, mode, rng, acts)
        values[spec.name] = out
        acts[spec.name] = out
    probs = eng.softmax(out)
    if squeeze:
        probs = eng.reshape(probs, probs.shape[1:])
    if capture is None:
        return probs
    captured = {}
    for name, t in acts.items():
        if want_all or name in wanted:
            captured[name] = np.array(t.data, copy=True)
    if wanted:
        missing = wanted - set(captured)
        if missing:
            raise ParameterError(f"unknown layer name(s) requested: {sorted(missing)}")
    return probs, captured


def node_count(shape) -> int:
    """Number of activation nodes in a layer output: the product of its dims."""
    n = 1
    for d in shape:
        if d <= 0:
            raise ParameterError(f"non-positive dimension in {shape}")
        n *= int(d)
    return n
