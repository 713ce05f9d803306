"""C-Net graph: four Outer feature extractors concatenated pairwise into two
Middle networks, concatenated again into one Inner network, then the dense
head.  Also provides shape inference and parameter counting.
"""

import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ConfigInvalid, RangeWarning, ShapeMismatch, SpatialCollapse
from .layers import (
    Conv2D,
    Dense,
    DropoutSpec,
    concat_channels,
    conv2d,
    dense,
    dropout,
    flatten,
    glorot_uniform,
    he_uniform,
    maxpool2x2,
    relu,
    sigmoid,
)
from .rng import stream
from .tensor import Tensor


@dataclass(frozen=True)
class CNetConfig:
    input_size: tuple = (224, 224)
    input_channels: int = 3
    outer_count: int = 4
    outer_convs_per_block: tuple = (2, 2, 4, 4)
    outer_filters: tuple = (64, 128, 256, 256)
    middle_count: int = 2
    middle_convs_per_block: int = 4
    middle_filters: int = 256
    middle_blocks: int = 2
    inner_convs: int = 2
    inner_filters: int = 256
    fc_units: int = 1024
    output_nodes: int = 2
    dropout_middle: float = 0.25
    dropout_fc: float = 0.5
    width_scale: Fraction = Fraction(1)

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(int(d) for d in self.input_size))
        object.__setattr__(self, "outer_convs_per_block", tuple(self.outer_convs_per_block))
        object.__setattr__(self, "outer_filters", tuple(self.outer_filters))
        object.__setattr__(self, "width_scale", Fraction(self.width_scale))

    def scaled(self, count: int) -> int:
        """Width-scaled filter/unit count; output_nodes is never scaled."""
        n = round(count * self.width_scale)
        if n < 1:
            raise ConfigInvalid(
                f"width_scale {self.width_scale} shrinks a width of {count} below 1"
            )
        return n


def validate_config(config: CNetConfig) -> None:
    c = config
    if len(c.outer_convs_per_block) != 4 or len(c.outer_filters) != 4:
        raise ConfigInvalid("outer networks use exactly 4 blocks")
    if any(n < 1 for n in c.outer_convs_per_block):
        raise ConfigInvalid("every outer block needs at least one convolution")
    f = c.outer_filters
    if f[1] != 2 * f[0] or f[2] != 2 * f[1]:
        raise ConfigInvalid(f"outer filters must double through block 3, got {f}")
    if f[3] != f[2]:
        raise ConfigInvalid(f"the final outer block keeps block 3's filter count, got {f}")
    if c.outer_count != 4 or c.middle_count != 2:
        raise ConfigInvalid("the topology is fixed at 4 outer and 2 middle networks")
    if c.width_scale <= 0:
        raise ConfigInvalid(f"width_scale must be positive, got {c.width_scale}")
    for count in (*c.outer_filters, c.middle_filters, c.inner_filters, c.fc_units):
        c.scaled(count)
    for rate in (c.dropout_middle, c.dropout_fc):
        if not (0 <= rate < 1):
            raise ConfigInvalid(f"dropout rate {rate} outside [0, 1)")
    if any(d < 1 for d in c.input_size) or c.input_channels < 1:
        raise ConfigInvalid("input dimensions must be >= 1")
    if c.output_nodes != 2:
        raise ConfigInvalid("binary head requires exactly 2 output nodes")


def _pool_dims(h: int, w: int, stage: str):
    ho, wo = h // 2, w // 2
    if ho < 1 or wo < 1:
        raise SpatialCollapse(f"{stage}: pooling {h}x{w} collapses below 1x1")
    return ho, wo


def infer_shapes(config: CNetConfig) -> dict:
    """Closed-form spatial chain for every stage; raises SpatialCollapse
    when the input is too small for the fixed pooling depth."""
    c = config
    h, w = c.input_size
    shapes = {}
    for b in range(4):
        cout = c.scaled(c.outer_filters[b])
        if b < 3:
            h, w = _pool_dims(h, w, f"outer block {b + 1}")
        shapes[f"outer.block{b + 1}"] = (h, w, cout)
    shapes["concat1"] = (h, w, 2 * c.scaled(c.outer_filters[3]))
    for b in range(c.middle_blocks):
        h, w = _pool_dims(h, w, f"middle block {b + 1}")
        shapes[f"middle.block{b + 1}"] = (h, w, c.scaled(c.middle_filters))
    shapes["concat2"] = (h, w, 2 * c.scaled(c.middle_filters))
    h, w = _pool_dims(h, w, "inner")
    shapes["inner"] = (h, w, c.scaled(c.inner_filters))
    shapes["flatten"] = h * w * c.scaled(c.inner_filters)
    return shapes


@dataclass
class CNetModel:
    config: CNetConfig
    params: dict = field(default_factory=dict)   # name -> Tensor, graph order
    outers: list = field(default_factory=list)   # 4 x [ (convs, pooled) per block ]
    middles: list = field(default_factory=list)  # 2 x [ block dicts ]
    inner: dict = field(default_factory=dict)
    fc1: Dense = None
    fc2: Dense = None
    head: Dense = None


def _new_conv(model, name, kh, cin, cout, rng, head=False):
    shape = (kh, kh, cin, cout)
    fan_in = kh * kh * cin
    if head:
        k = glorot_uniform(shape, fan_in, cout, rng)
    else:
        k = he_uniform(shape, fan_in, rng)
    kernel = Tensor(k, requires_grad=True)
    bias = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True)
    model.params[name + ".kernel"] = kernel
    model.params[name + ".bias"] = bias
    return Conv2D(kernel, bias)


def _new_dense(model, name, n_in, n_out, rng, head=False):
    if head:
        w = glorot_uniform((n_in, n_out), n_in, n_out, rng)
    else:
        w = he_uniform((n_in, n_out), n_in, rng)
    weights = Tensor(w, requires_grad=True)
    bias = Tensor(np.zeros(n_out, dtype=np.float32), requires_grad=True)
    model.params[name + ".weights"] = weights
    model.params[name + ".bias"] = bias
    return Dense(weights, bias)


def build_cnet(config: CNetConfig, seed) -> CNetModel:
    """Instantiate the full graph with seeded initial weights.

    Hidden conv/dense layers use He-uniform initialization (they feed ReLU),
    the sigmoid head uses Glorot-uniform, and all biases start at zero.
    Each parameter draws from its own named substream of ``seed``.
    """
    validate_config(config)
    shapes = infer_shapes(config)  # raises SpatialCollapse early
    c = config
    model = CNetModel(config=c)

    def rng_for(name):
        return stream(seed, "init", name)

    for i in range(1, 5):
        blocks = []
        cin = c.input_channels
        for b in range(4):
            cout = c.scaled(c.outer_filters[b])
            convs = []
            for j in range(c.outer_convs_per_block[b]):
                name = f"outer{i}.block{b + 1}.conv{j + 1}"
                convs.append(_new_conv(model, name, 3, cin, cout, rng_for(name)))
                cin = cout
            blocks.append((convs, b < 3))  # blocks 1-3 pool, block 4 does not
        model.outers.append(blocks)

    mf = c.scaled(c.middle_filters)
    for i in range(1, 3):
        cin = 2 * c.scaled(c.outer_filters[3])
        blocks = []
        for b in range(c.middle_blocks):
            convs = []
            for j in range(c.middle_convs_per_block):
                name = f"middle{i}.block{b + 1}.conv{j + 1}"
                convs.append(_new_conv(model, name, 3, cin, mf, rng_for(name)))
                cin = mf
            name = f"middle{i}.block{b + 1}.nin"
            nin = _new_conv(model, name, 1, cin, mf, rng_for(name))
            blocks.append({"convs": convs, "nin": nin})
        model.middles.append(blocks)

    inf = c.scaled(c.inner_filters)
    cin = 2 * mf
    convs = []
    for j in range(c.inner_convs):
        name = f"inner.conv{j + 1}"
        convs.append(_new_conv(model, name, 3, cin, inf, rng_for(name)))
        cin = inf
    model.inner = {"convs": convs,
                   "nin": _new_conv(model, "inner.nin", 1, inf, inf, rng_for("inner.nin"))}

    fc = c.scaled(c.fc_units)
    model.fc1 = _new_dense(model, "fc1", shapes["flatten"], fc, rng_for("fc1"))
    model.fc2 = _new_dense(model, "fc2", fc, fc, rng_for("fc2"))
    model.head = _new_dense(model, "head", fc, c.output_nodes, rng_for("head"), head=True)
    return model


def _run_block(tape, x, convs, pooled):
    for conv in convs:
        x = relu(tape, conv2d(tape, x, conv))
    return maxpool2x2(tape, x) if pooled else x


def forward(model: CNetModel, batch: Tensor, mode: str = "eval", rng=None, tape=None) -> Tensor:
    """Full-graph forward pass producing per-node sigmoid activations (b, 2).

    Train mode applies dropout from ``rng``; eval mode is deterministic in
    (parameters, input).  Pass a tape to make the result differentiable.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    c = model.config
    if batch.data.ndim != 4 or batch.shape[1:] != (*c.input_size, c.input_channels):
        raise ShapeMismatch(
            f"batch {batch.shape} does not match configured input "
            f"{(*c.input_size, c.input_channels)}"
        )
    lo, hi = float(batch.data.min()), float(batch.data.max())
    if lo < 0.0 or hi > 1.0:
        warnings.warn(f"input pixels outside [0,1]: min {lo}, max {hi}", RangeWarning)

    drop_mid = DropoutSpec(c.dropout_middle, mode)
    drop_fc = DropoutSpec(c.dropout_fc, mode)

    outer_out = []
    for blocks in model.outers:
        x = batch
        for convs, pooled in blocks:
            x = _run_block(tape, x, convs, pooled)
        outer_out.append(x)
    pair1 = concat_channels(tape, outer_out[0], outer_out[1])
    pair2 = concat_channels(tape, outer_out[2], outer_out[3])

    middle_out = []
    for blocks, x in zip(model.middles, (pair1, pair2)):
        for block in blocks:
            for conv in block["convs"]:
                x = relu(tape, conv2d(tape, x, conv))
            x = relu(tape, conv2d(tape, x, block["nin"]))
            x = maxpool2x2(tape, x)
            x = dropout(tape, x, drop_mid, rng)
        middle_out.append(x)
    x = concat_channels(tape, middle_out[0], middle_out[1])

    for conv in model.inner["convs"]:
        x = relu(tape, conv2d(tape, x, conv))
    x = relu(tape, conv2d(tape, x, model.inner["nin"]))
    x = maxpool2x2(tape, x)

    x = flatten(tape, x)
    x = dropout(tape, relu(tape, dense(tape, x, model.fc1)), drop_fc, rng)
    x = dropout(tape, relu(tape, dense(tape, x, model.fc2)), drop_fc, rng)
    return sigmoid(tape, dense(tape, x, model.head))


def parameter_count(model: CNetModel) -> int:
    return sum(p.size for p in model.params.values())


def analytic_parameter_count(config: CNetConfig) -> int:
    """Closed-form count from the config alone (conv: kh*kw*cin*cout + cout;
    dense: n_in*n_out + n_out), never touching model tensors."""
    c = config
    total = 0
    cin0 = c.input_channels
    for _ in range(4):
        cin = cin0
        for b in range(4):
            cout = c.scaled(c.outer_filters[b])
            for _ in range(c.outer_convs_per_block[b]):
                total += 3 * 3 * cin * cout + cout
                cin = cout
    mf = c.scaled(c.middle_filters)
    for _ in range(2):
        cin = 2 * c.scaled(c.outer_filters[3])
        for _ in range(c.middle_blocks):
            for _ in range(c.middle_convs_per_block):
                total += 3 * 3 * cin * mf + mf
                cin = mf
            total += 1 * 1 * cin * mf + mf
    inf = c.scaled(c.inner_filters)
    cin = 2 * mf
    for _ in range(c.inner_convs):
        total += 3 * 3 * cin * inf + inf
        cin = inf
    total += 1 * 1 * inf * inf + inf
    flat = infer_shapes(c)["flatten"]
    fc = c.scaled(c.fc_units)
    total += flat * fc + fc
    total += fc * fc + fc
    total += fc * c.output_nodes + c.output_nodes
    return total
