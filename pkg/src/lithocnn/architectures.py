"""Builders for the four classic classification networks over 227x227 input.

Canonical published configurations are used (AlexNet 227-input variant,
VGG-16, GoogLeNet with v1 inception widths, ResNet-18), redimensioned where
the 227-pixel input forces it: an odd input size can never pass a 2/2 pool,
so the first two VGG reduction stages and the pools around the GoogLeNet and
ResNet stems use explicitly chosen window/stride pairs that keep every
output size an exact integer. Each builder accepts a width multiplier in
(0, 1] that scales channel and hidden-unit counts for desk-scale training.
"""
from __future__ import annotations

from .errors import ParameterError
from .graph import INPUT_NAME, LayerSpec, NetworkGraph

INPUT_SIZE = 227
DENSE_DROPOUT_RATE = 0.5

VGG_VARIANTS = {
    "vgg11": ((64, 1), (128, 1), (256, 2), (512, 2), (512, 2)),
    "vgg16": ((64, 2), (128, 2), (256, 3), (512, 3), (512, 3)),
}
RESNET_VARIANTS = {
    "resnet10": (1, 1, 1, 1),
    "resnet18": (2, 2, 2, 2),
}

# GoogLeNet v1 inception widths: (1x1, 3x3 reduce, 3x3, 5x5 reduce, 5x5, pool proj)
GOOGLENET_INCEPTION = {
    "inc3a": (64, 96, 128, 16, 32, 32),
    "inc3b": (128, 128, 192, 32, 96, 64),
    "inc4a": (192, 96, 208, 16, 48, 64),
    "inc4b": (160, 112, 224, 24, 64, 64),
    "inc4c": (128, 128, 256, 24, 64, 64),
    "inc4d": (112, 144, 288, 32, 64, 64),
    "inc4e": (256, 160, 320, 32, 128, 128),
    "inc5a": (256, 160, 320, 32, 128, 128),
    "inc5b": (384, 192, 384, 48, 128, 128),
}


def _check_head(classes: int, in_channels: int, width: float):
    if classes < 2:
        raise ParameterError(f"need at least 2 classes, got {classes}")
    if in_channels not in (1, 3):
        raise ParameterError(f"in_channels must be 1 or 3, got {in_channels}")
    if not 0 < width <= 1:
        raise ParameterError(f"width multiplier must lie in (0, 1], got {width}")


def _scaled(channels: int, width: float) -> int:
    return max(1, round(channels * width))


# Builders thread layers linearly; LayerSpec defaults inputs to the graph
# input, so each helper rewires to the previous layer explicitly.
def _chain(layers):
    prev = INPUT_NAME
    for spec in layers:
        spec.inputs = [prev]
        prev = spec.name
    return layers


def build_alexnet(classes: int, in_channels: int = 3, width: float = 1.0) -> NetworkGraph:
    """Five convolution layers, three dense layers, 227-input geometry."""
    _check_head(classes, in_channels, width)
    s = lambda c: _scaled(c, width)
    layers = _chain(
        [
            LayerSpec("conv", "conv1", {"out_channels": s(96), "kernel_size": 11, "stride": 4, "padding": 0}),
            LayerSpec("activation", "act1", {"fn": "relu"}),
            LayerSpec("max_pool", "pool1", {"window": 3, "stride": 2}),
            LayerSpec("conv", "conv2", {"out_channels": s(256), "kernel_size": 5, "stride": 1, "padding": 2}),
            LayerSpec("activation", "act2", {"fn": "relu"}),
            LayerSpec("max_pool", "pool2", {"window": 3, "stride": 2}),
            LayerSpec("conv", "conv3", {"out_channels": s(384), "kernel_size": 3, "stride": 1, "padding": 1}),
            LayerSpec("activation", "act3", {"fn": "relu"}),
            LayerSpec("conv", "conv4", {"out_channels": s(384), "kernel_size": 3, "stride": 1, "padding": 1}),
            LayerSpec("activation", "act4", {"fn": "relu"}),
            LayerSpec("conv", "conv5", {"out_channels": s(256), "kernel_size": 3, "stride": 1, "padding": 1}),
            LayerSpec("activation", "act5", {"fn": "relu"}),
            LayerSpec("max_pool", "pool5", {"window": 3, "stride": 2}),
            LayerSpec("dropout", "drop6", {"rate": DENSE_DROPOUT_RATE}),
            LayerSpec("dense", "fc6", {"units": s(4096)}),
            LayerSpec("activation", "act6", {"fn": "relu"}),
            LayerSpec("dropout", "drop7", {"rate": DENSE_DROPOUT_RATE}),
            LayerSpec("dense", "fc7", {"units": s(4096)}),
            LayerSpec("activation", "act7", {"fn": "relu"}),
            LayerSpec("dense", "fc8", {"units": classes}),
        ]
    )
    return NetworkGraph("alexnet", "base", (in_channels, INPUT_SIZE, INPUT_SIZE), classes, layers)


def build_vgg(classes: int, in_channels: int = 3, depth_variant: str = "vgg16", width: float = 1.0) -> NetworkGraph:
    """Stacked 3x3 same-padded blocks; 227 input forces 3/2 pools in stages 1-2."""
    _check_head(classes, in_channels, width)
    if depth_variant not in VGG_VARIANTS:
        raise ParameterError(f"unknown VGG variant '{depth_variant}' (have {sorted(VGG_VARIANTS)})")
    s = lambda c: _scaled(c, width)
    layers = []
    pools = ((3, 2), (3, 2), (2, 2), (2, 2), (2, 2))
    for stage, ((channels, repeats), (pw, ps)) in enumerate(zip(VGG_VARIANTS[depth_variant], pools), start=1):
        for rep in range(1, repeats + 1):
            layers.append(
                LayerSpec("conv", f"b{stage}c{rep}", {"out_channels": s(channels), "kernel_size": 3, "stride": 1, "padding": 1})
            )
            layers.append(LayerSpec("activation", f"b{stage}a{rep}", {"fn": "relu"}))
        layers.append(LayerSpec("max_pool", f"pool{stage}", {"window": pw, "stride": ps}))
    layers += [
        LayerSpec("dropout", "drop6", {"rate": DENSE_DROPOUT_RATE}),
        LayerSpec("dense", "fc6", {"units": s(4096)}),
        LayerSpec("activation", "act6", {"fn": "relu"}),
        LayerSpec("dropout", "drop7", {"rate": DENSE_DROPOUT_RATE}),
        LayerSpec("dense", "fc7", {"units": s(4096)}),
        LayerSpec("activation", "act7", {"fn": "relu"}),
        LayerSpec("dense", "fc8", {"units": classes}),
    ]
    return NetworkGraph("vgg", depth_variant, (in_channels, INPUT_SIZE, INPUT_SIZE), classes, _chain(layers))


def build_inception_module(in_channels: int, branch_widths, reduce_widths=None, name: str = "inception") -> LayerSpec:
    """Four parallel branches (1x1; 1x1->3x3; 1x1->5x5; pool->1x1) concatenated.

    ``branch_widths`` are the four output widths; output channels are their
    sum. ``reduce_widths`` sets the 1x1 bottlenecks ahead of the 3x3 and 5x5
    convs (defaults to half / quarter of the branch width).
    """
    w1, w3, w5, wp = branch_widths
    if min(w1, w3, w5, wp) < 1:
        raise ParameterError(f"branch widths must be positive, got {branch_widths}")
    r3, r5 = reduce_widths if reduce_widths else (max(1, w3 // 2), max(1, w5 // 4))

    def conv_act(suffix, out_channels, kernel, padding=0):
        return [
            {"kind": "conv", "name": f"{name}.{suffix}", "params": {"out_channels": out_channels, "kernel_size": kernel, "stride": 1, "padding": padding}, "inputs": []},
            {"kind": "activation", "name": f"{name}.{suffix}.act", "params": {"fn": "relu"}, "inputs": []},
        ]

    branches = [
        conv_act("b1", w1, 1),
        conv_act("b2r", r3, 1) + conv_act("b2", w3, 3, padding=1),
        conv_act("b3r", r5, 1) + conv_act("b3", w5, 5, padding=2),
        [
            {"kind": "zero_pad", "name": f"{name}.b4pad", "params": {"p": 1}, "inputs": []},
            {"kind": "max_pool", "name": f"{name}.b4pool", "params": {"window": 3, "stride": 1}, "inputs": []},
        ]
        + conv_act("b4", wp, 1),
    ]
    return LayerSpec("inception", name, {"branches": branches, "out_channels": w1 + w3 + w5 + wp})


def build_googlenet(classes: int, in_channels: int = 3, width: float = 1.0) -> NetworkGraph:
    """Stem convs, nine v1 inception modules, global average pool, one dense."""
    _check_head(classes, in_channels, width)
    s = lambda c: _scaled(c, width)
    layers = [
        LayerSpec("zero_pad", "stem.pad", {"p": 3}),
        LayerSpec("conv", "stem.conv1", {"out_channels": s(64), "kernel_size": 7, "stride": 2, "padding": 0}),
        LayerSpec("activation", "stem.act1", {"fn": "relu"}),
        LayerSpec("max_pool", "stem.pool1", {"window": 2, "stride": 2}),
        LayerSpec("conv", "stem.conv2", {"out_channels": s(64), "kernel_size": 1, "stride": 1, "padding": 0}),
        LayerSpec("activation", "stem.act2", {"fn": "relu"}),
        LayerSpec("conv", "stem.conv3", {"out_channels": s(192), "kernel_size": 3, "stride": 1, "padding": 1}),
        LayerSpec("activation", "stem.act3", {"fn": "relu"}),
        LayerSpec("max_pool", "stem.pool2", {"window": 3, "stride": 2}),
    ]
    pools_after = {"inc3b": ("pool3", 2, 2), "inc4e": ("pool4", 2, 2)}
    chans = s(192)
    for name, (w1, r3, w3, r5, w5, wp) in GOOGLENET_INCEPTION.items():
        module = build_inception_module(chans, (s(w1), s(w3), s(w5), s(wp)), (s(r3), s(r5)), name=name)
        layers.append(module)
        chans = module.params["out_channels"]
        if name in pools_after:
            pname, pw, ps = pools_after[name]
            layers.append(LayerSpec("max_pool", pname, {"window": pw, "stride": ps}))
    layers += [
        LayerSpec("avg_pool", "gap", {"window": 7, "stride": 7}),
        LayerSpec("dropout", "drop", {"rate": 0.4}),
        LayerSpec("dense", "fc", {"units": classes}),
    ]
    return NetworkGraph("googlenet", "v1", (in_channels, INPUT_SIZE, INPUT_SIZE), classes, _chain(layers))


def build_residual_module(in_channels: int, out_channels: int, stride: int, name: str = "res") -> LayerSpec:
    """conv-BN-ReLU-conv-BN plus identity (or 1x1 projection) sum, then ReLU."""
    if stride not in (1, 2):
        raise ParameterError(f"residual stride must be 1 or 2, got {stride}")
    main = [
        {"kind": "conv", "name": f"{name}.conv1", "params": {"out_channels": out_channels, "kernel_size": 3, "stride": stride, "padding": 1}, "inputs": []},
        {"kind": "batch_norm", "name": f"{name}.bn1", "params": {}, "inputs": []},
        {"kind": "activation", "name": f"{name}.act1", "params": {"fn": "relu"}, "inputs": []},
        {"kind": "conv", "name": f"{name}.conv2", "params": {"out_channels": out_channels, "kernel_size": 3, "stride": 1, "padding": 1}, "inputs": []},
        {"kind": "batch_norm", "name": f"{name}.bn2", "params": {}, "inputs": []},
    ]
    projection = None
    if stride != 1 or in_channels != out_channels:
        projection = [
            {"kind": "conv", "name": f"{name}.proj", "params": {"out_channels": out_channels, "kernel_size": 1, "stride": stride, "padding": 0}, "inputs": []},
            {"kind": "batch_norm", "name": f"{name}.projbn", "params": {}, "inputs": []},
        ]
    return LayerSpec("residual", name, {"main": main, "projection": projection, "out_channels": out_channels})


def build_resnet(classes: int, in_channels: int = 3, depth_variant: str = "resnet18", width: float = 1.0) -> NetworkGraph:
    """Stem, four residual stages, global average pool, dense classifier."""
    _check_head(classes, in_channels, width)
    if depth_variant not in RESNET_VARIANTS:
        raise ParameterError(f"unknown ResNet variant '{depth_variant}' (have {sorted(RESNET_VARIANTS)})")
    s = lambda c: _scaled(c, width)
    layers = [
        LayerSpec("zero_pad", "stem.pad", {"p": 3}),
        LayerSpec("conv", "stem.conv", {"out_channels": s(64), "kernel_size": 7, "stride": 2, "padding": 0}),
        LayerSpec("batch_norm", "stem.bn", {}),
        LayerSpec("activation", "stem.act", {"fn": "relu"}),
        LayerSpec("max_pool", "stem.pool", {"window": 2, "stride": 2}),
    ]
    chans = s(64)
    for stage, blocks in enumerate(RESNET_VARIANTS[depth_variant], start=1):
        out_c = s(64 * 2 ** (stage - 1))
        for block in range(1, blocks + 1):
            stride = 2 if stage > 1 and block == 1 else 1
            layers.append(build_residual_module(chans, out_c, stride, name=f"s{stage}b{block}"))
            chans = out_c
    layers += [
        LayerSpec("avg_pool", "gap", {"window": 8, "stride": 8}),
        LayerSpec("dense", "fc", {"units": classes}),
    ]
    return NetworkGraph("resnet", depth_variant, (in_channels, INPUT_SIZE, INPUT_SIZE), classes, _chain(layers))


ARCHITECTURES = {
    "alexnet": build_alexnet,
    "vgg": build_vgg,
    "googlenet": build_googlenet,
    "resnet": build_resnet,
}


def build_architecture(arch_id: str, classes: int, in_channels: int = 3, width: float = 1.0, depth_variant: str | None = None) -> NetworkGraph:
    if arch_id not in ARCHITECTURES:
        raise ParameterError(f"unknown architecture '{arch_id}' (have {sorted(ARCHITECTURES)})")
    if arch_id == "vgg":
        return build_vgg(classes, in_channels, depth_variant or "vgg16", width)
    if arch_id == "resnet":
        return build_resnet(classes, in_channels, depth_variant or "resnet18", width)
    return ARCHITECTURES[arch_id](classes, in_channels, width)
