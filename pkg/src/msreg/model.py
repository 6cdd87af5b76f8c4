"""Multi-scale shared-weight descriptor network.

One U-Net head runs over S voxelizations of the same cloud, with the
voxel side doubling at each scale. The head's parameters are shared
across scales, so adding scales only adds the final fusion layer
(a single linear map from S*d to d). Per-voxel head outputs are copied
back to the original points (every point gets its voxel's row), the S
point-level feature blocks are concatenated, fused, and optionally
L2-normalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autograd as ag
from .autograd import BatchNormState, Node, ParamStore, Tape
from .cloud import PointCloud, VoxelMap, grid_subsample
from .sparseops import (
    KERNEL_OFFSETS,
    SparseTensor,
    conv_kernel_map,
    conv_nodes,
    downsample_coords,
)


@dataclass(frozen=True)
class ModelConfig:
    num_heads: int = 3
    base_voxel_size: float = 0.05
    descriptor_dim: int = 32
    widths: tuple[int, ...] = (16, 32, 64)
    num_down_levels: int = 2
    normalize_output: bool = True
    in_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.num_heads < 1:
            raise ValueError("num_heads must be >= 1")
        if self.descriptor_dim < 1:
            raise ValueError("descriptor_dim must be >= 1")
        if not self.widths:
            raise ValueError("widths must be non-empty")
        if self.num_down_levels != len(self.widths) - 1:
            raise ValueError(
                f"num_down_levels must be len(widths) - 1 "
                f"({len(self.widths) - 1}), got {self.num_down_levels}"
            )
        if self.base_voxel_size <= 0:
            raise ValueError("base_voxel_size must be positive")

    def voxel_size_at(self, s: int) -> float:
        """Voxel side length at scale s (1-based); doubles per scale."""
        if not 1 <= s <= self.num_heads:
            raise ValueError(f"scale {s} outside 1..{self.num_heads}")
        return self.base_voxel_size * (2.0 ** (s - 1))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        if "widths" in d:
            d["widths"] = tuple(d["widths"])
        return ModelConfig(**d)


@dataclass
class Model:
    """Shared head parameters plus the fusion layer and BN states."""

    config: ModelConfig
    params: ParamStore
    bn_states: dict[str, BatchNormState]
    dtype: np.dtype = field(default=np.dtype(np.float32))

    def fusion_param_count(self) -> int:
        return sum(
            p.value.size for name, p in self.params.items() if name.startswith("fusion.")
        )

    def head_param_count(self) -> int:
        return sum(
            p.value.size for name, p in self.params.items() if name.startswith("head.")
        )

    def total_param_count(self) -> int:
        return self.params.total_size()


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def build_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> Model:
    """Deterministic seeded initialization of head and fusion parameters."""
    dtype = np.dtype(dtype)
    rng = np.random.default_rng(seed)
    params = ParamStore()
    bn_states: dict[str, BatchNormState] = {}
    k = KERNEL_OFFSETS.shape[0]

    def conv_p(name: str, c_in: int, c_out: int):
        params.add(f"{name}.kernel", _kaiming_uniform(rng, (k, c_in, c_out), k * c_in, dtype))
        params.add(f"{name}.bias", np.zeros(c_out, dtype=dtype))

    def linear_p(name: str, c_in: int, c_out: int):
        params.add(f"{name}.w", _kaiming_uniform(rng, (c_in, c_out), c_in, dtype))
        params.add(f"{name}.b", np.zeros(c_out, dtype=dtype))

    def bn_p(name: str, c: int):
        params.add(f"{name}.scale", np.ones(c, dtype=dtype))
        params.add(f"{name}.shift", np.zeros(c, dtype=dtype))
        bn_states[name] = BatchNormState(c, dtype=dtype)

    def res_p(name: str, c: int):
        conv_p(f"{name}.conv1", c, c)
        bn_p(f"{name}.bn1", c)
        conv_p(f"{name}.conv2", c, c)
        bn_p(f"{name}.bn2", c)

    w = config.widths
    conv_p("head.stem.conv", config.in_channels, w[0])
    bn_p("head.stem.bn", w[0])
    res_p("head.res0", w[0])
    for lvl in range(1, config.num_down_levels + 1):
        conv_p(f"head.down{lvl}.conv", w[lvl - 1], w[lvl])
        bn_p(f"head.down{lvl}.bn", w[lvl])
        res_p(f"head.res{lvl}", w[lvl])
    for lvl in range(config.num_down_levels, 0, -1):
        conv_p(f"head.up{lvl}.tconv", w[lvl], w[lvl - 1])
        bn_p(f"head.up{lvl}.bn", w[lvl - 1])
        linear_p(f"head.mix{lvl}.linear", 2 * w[lvl - 1], w[lvl - 1])
        bn_p(f"head.mix{lvl}.bn", w[lvl - 1])
    linear_p("head.out", w[0], config.descriptor_dim)

    d = config.descriptor_dim
    linear_p("fusion", config.num_heads * d, d)

    return Model(config=config, params=params, bn_states=bn_states, dtype=dtype)


def voxelize_scale(cloud: PointCloud, config: ModelConfig, s: int) -> tuple[SparseTensor, VoxelMap]:
    """Voxelize at scale s with the constant-one input feature per voxel.

    If the cloud carries feature rows they are averaged per voxel
    instead (their width must match config.in_channels).
    """
    _, vmap = grid_subsample(cloud, config.voxel_size_at(s))
    m = vmap.num_voxels
    if cloud.features is None:
        feats = np.ones((m, config.in_channels), dtype=np.float32)
    else:
        if cloud.features.shape[1] != config.in_channels:
            raise ValueError(
                f"cloud features have width {cloud.features.shape[1]}, "
                f"model expects {config.in_channels}"
            )
        sums = np.zeros((m, config.in_channels), dtype=np.float64)
        np.add.at(sums, vmap.voxel_of, cloud.features.astype(np.float64))
        counts = np.bincount(vmap.voxel_of, minlength=m).astype(np.float64)
        feats = (sums / counts[:, None]).astype(np.float32)
    return SparseTensor(vmap.voxel_coords, feats, stride=1), vmap


def rescale(voxel_feats: np.ndarray, vmap: VoxelMap) -> np.ndarray:
    """Copy each voxel's feature row to all points in that voxel."""
    if vmap.voxel_of.size and int(vmap.voxel_of.max()) >= voxel_feats.shape[0]:
        raise IndexError(
            f"voxel map references voxel {int(vmap.voxel_of.max())} "
            f"but features have {voxel_feats.shape[0]} rows"
        )
    return voxel_feats[vmap.voxel_of]


class _HeadPlan:
    """Per-tensor coordinate pyramid and kernel maps for one head pass."""

    __slots__ = ("coords", "same", "down", "up")

    def __init__(self, base_coords: np.ndarray, num_levels: int):
        self.coords = [np.ascontiguousarray(base_coords, dtype=np.int64)]
        for _ in range(num_levels):
            self.coords.append(downsample_coords(self.coords[-1]))
        self.same = [conv_kernel_map(c, c, "same") for c in self.coords]
        self.down = [
            conv_kernel_map(self.coords[l - 1], self.coords[l], "down")
            for l in range(1, num_levels + 1)
        ]
        self.up = [
            conv_kernel_map(self.coords[l], self.coords[l - 1], "up")
            for l in range(1, num_levels + 1)
        ]


def forward_head_batch(
    model: Model,
    tensors: list[SparseTensor],
    tape: Tape,
    training: bool = False,
    pn: dict[str, Node] | None = None,
) -> list[Node]:
    """Run the shared U-Net head over a batch of sparse tensors.

    Convolutions are evaluated per tensor; batch-norm statistics span the
    voxels of every tensor in the batch.
    """
    cfg = model.config
    if pn is None:
        pn = model.params.nodes(tape)
    plans = [_HeadPlan(st.coords, cfg.num_down_levels) for st in tensors]

    def conv_all(xs, name, kmaps, nouts):
        kern, bias = pn[f"{name}.kernel"], pn[f"{name}.bias"]
        return [
            conv_nodes(tape, x, kern, bias, kmap, nout)
            for x, kmap, nout in zip(xs, kmaps, nouts)
        ]

    def bn_all(xs, name):
        joint = ag.concat_rows(tape, xs)
        out = ag.batch_norm(
            tape, joint, pn[f"{name}.scale"], pn[f"{name}.shift"],
            model.bn_states[name], training,
        )
        return ag.split_rows(tape, out, [x.value.shape[0] for x in xs])

    def relu_all(xs):
        return [ag.relu(tape, x) for x in xs]

    def res_all(xs, name, kmaps, nouts):
        h = conv_all(xs, f"{name}.conv1", kmaps, nouts)
        h = relu_all(bn_all(h, f"{name}.bn1"))
        h = conv_all(h, f"{name}.conv2", kmaps, nouts)
        h = bn_all(h, f"{name}.bn2")
        return relu_all([ag.add(tape, x, z) for x, z in zip(xs, h)])

    def lvl_maps(l, kind):
        if kind == "same":
            return [p.same[l] for p in plans]
        if kind == "down":
            return [p.down[l - 1] for p in plans]
        return [p.up[l - 1] for p in plans]

    def lvl_nouts(l):
        return [p.coords[l].shape[0] for p in plans]

    x = [tape.leaf(st.feats.astype(model.dtype)) for st in tensors]
    x = conv_all(x, "head.stem.conv", lvl_maps(0, "same"), lvl_nouts(0))
    x = relu_all(bn_all(x, "head.stem.bn"))
    x = res_all(x, "head.res0", lvl_maps(0, "same"), lvl_nouts(0))
    skips = [x]
    for lvl in range(1, cfg.num_down_levels + 1):
        x = conv_all(x, f"head.down{lvl}.conv", lvl_maps(lvl, "down"), lvl_nouts(lvl))
        x = relu_all(bn_all(x, f"head.down{lvl}.bn"))
        x = res_all(x, f"head.res{lvl}", lvl_maps(lvl, "same"), lvl_nouts(lvl))
        if lvl < cfg.num_down_levels:
            skips.append(x)
    for lvl in range(cfg.num_down_levels, 0, -1):
        x = conv_all(x, f"head.up{lvl}.tconv", lvl_maps(lvl, "up"), lvl_nouts(lvl - 1))
        x = relu_all(bn_all(x, f"head.up{lvl}.bn"))
        x = [ag.concat_channels(tape, [xi, si]) for xi, si in zip(x, skips[lvl - 1])]
        x = [
            ag.linear(tape, xi, pn[f"head.mix{lvl}.linear.w"], pn[f"head.mix{lvl}.linear.b"])
            for xi in x
        ]
        x = relu_all(bn_all(x, f"head.mix{lvl}.bn"))
    return [ag.linear(tape, xi, pn["head.out.w"], pn["head.out.b"]) for xi in x]


def forward_head(model: Model, tensor: SparseTensor, tape: Tape | None = None,
                 training: bool = False):
    """Per-voxel head features for one tensor (V x d array, or Node)."""
    own = tape is None
    t = Tape() if own else tape
    node = forward_head_batch(model, [tensor], t, training)[0]
    return node.value if own else node


def forward_multiscale_batch(
    model: Model,
    clouds: list[PointCloud],
    tape: Tape,
    training: bool = False,
) -> list[Node]:
    """Per-point descriptors for a batch of clouds (one Node per cloud).

    All S voxelizations of every cloud go through the shared head in a
    single batched pass, so batch-norm statistics span scales the same
    way in training and in the running buffers used at eval time.
    """
    cfg = model.config
    pn = model.params.nodes(tape)
    tensors = []
    vmaps = []
    for s in range(1, cfg.num_heads + 1):
        for cloud in clouds:
            st, vmap = voxelize_scale(cloud, cfg, s)
            tensors.append(st)
            vmaps.append(vmap)
    heads = forward_head_batch(model, tensors, tape, training, pn=pn)
    points = [
        ag.gather_rows(tape, h, vmap.voxel_of) for h, vmap in zip(heads, vmaps)
    ]
    out = []
    for i in range(len(clouds)):
        cat = ag.concat_channels(
            tape, [points[s * len(clouds) + i] for s in range(cfg.num_heads)]
        )
        fused = ag.linear(tape, cat, pn["fusion.w"], pn["fusion.b"])
        if cfg.normalize_output:
            fused = ag.l2_normalize_rows(tape, fused)
        out.append(fused)
    return out


def forward_multiscale(model: Model, cloud: PointCloud, tape: Tape | None = None,
                       training: bool = False):
    """Descriptors for one cloud: (N, d) array, or Node when a tape is given."""
    if len(cloud) < 1:
        raise ValueError("cloud must be non-empty")
    own = tape is None
    t = Tape() if own else tape
    node = forward_multiscale_batch(model, [cloud], t, training)[0]
    return node.value if own else node
