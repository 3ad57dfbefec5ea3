"""Res-CR-Net assembly: STEM block, CONV RES blocks, LSTM RES blocks, softmax head.

Every block keeps the spatial size of its input, so a model built once runs
on images of any rows x cols.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .core import (
    BatchNormState,
    ConvKernel,
    ConvLSTMParams,
    Tensor,
    add,
    batch_norm,
    concat_channels,
    conv_lstm_bidirectional,
    depthwise_conv2d,
    leaky_relu,
    pointwise_conv2d,
    softmax_channels,
    spatial_dropout,
)
from .errors import ConfigError, ShapeError

REFERENCE_PARAM_COUNT = 59_165  # reported total for reference_config(); not reproduced, see README

_NORMALIZATION = ("none", "per-branch")
_STEM_SHORTCUT = ("projection", "branch-only")
_INTERIOR_SHORTCUT = ("identity", "projection")
_DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass
class NetConfig:
    """Architecture hyperparameters.

    ``n_conv_blocks`` counts the STEM block as the first conv-type block, so
    ``n_conv_blocks=5`` means STEM + 4 CONV RES.  ``n_conv_blocks=0`` builds
    the head alone.
    """

    input_channels: int = 1
    n_conv_blocks: int = 5
    m_lstm_blocks: int = 0
    branch_kernels: tuple[tuple[int, int], ...] = ((3, 3), (5, 5), (7, 7))
    branch_dilations: tuple[tuple[int, int], ...] = ((1, 1), (3, 3), (5, 5))
    branch_filters: int = 16
    shortcut_filters: int = 48
    num_classes: int = 2
    leaky_alpha: float = 0.3
    dropout_rate: float = 0.2
    lstm_hidden: int = 8
    lstm_kernel: int = 3
    normalization: str = "none"
    branch_depth: int = 1
    stem_shortcut: str = "projection"
    interior_shortcut: str = "identity"
    depthwise_bias: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        self.branch_kernels = tuple(tuple(int(v) for v in k) for k in self.branch_kernels)
        self.branch_dilations = tuple(tuple(int(v) for v in d) for d in self.branch_dilations)

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]

    @property
    def n_branches(self) -> int:
        return len(self.branch_kernels)

    def validate(self) -> "NetConfig":
        def bad(name, msg):
            raise ConfigError(f"{name}: {msg}", field=name)

        if self.input_channels < 1:
            bad("input_channels", "must be >= 1")
        if self.n_conv_blocks < 0:
            bad("n_conv_blocks", "must be >= 0")
        if self.m_lstm_blocks < 0:
            bad("m_lstm_blocks", "must be >= 0")
        if self.m_lstm_blocks and not self.n_conv_blocks:
            bad("m_lstm_blocks", "LSTM RES blocks need a STEM block before them")
        if len(self.branch_kernels) != len(self.branch_dilations):
            bad("branch_dilations", f"{len(self.branch_dilations)} entries for {len(self.branch_kernels)} kernels")
        if not self.branch_kernels:
            bad("branch_kernels", "need at least one branch")
        for k in self.branch_kernels:
            if len(k) != 2 or k[0] % 2 == 0 or k[1] % 2 == 0 or min(k) < 1:
                bad("branch_kernels", f"kernel sizes must be odd pairs, got {k}")
        for d in self.branch_dilations:
            if len(d) != 2 or min(d) < 1:
                bad("branch_dilations", f"dilations must be positive pairs, got {d}")
        if self.branch_filters < 1:
            bad("branch_filters", "must be >= 1")
        if self.shortcut_filters != self.branch_filters * self.n_branches:
            bad("shortcut_filters",
                f"must equal branch_filters x branches = {self.branch_filters * self.n_branches}")
        if self.num_classes < 2:
            bad("num_classes", "must be >= 2")
        if not 0 <= self.leaky_alpha < 1:
            bad("leaky_alpha", "must be in [0, 1)")
        if not 0 <= self.dropout_rate < 1:
            bad("dropout_rate", "must be in [0, 1)")
        if self.lstm_hidden < 1:
            bad("lstm_hidden", "must be >= 1")
        if self.lstm_kernel < 1 or self.lstm_kernel % 2 == 0:
            bad("lstm_kernel", "must be odd")
        if self.normalization not in _NORMALIZATION:
            bad("normalization", f"one of {_NORMALIZATION}")
        if self.branch_depth not in (1, 2):
            bad("branch_depth", "must be 1 or 2")
        if self.stem_shortcut not in _STEM_SHORTCUT:
            bad("stem_shortcut", f"one of {_STEM_SHORTCUT}")
        if self.interior_shortcut not in _INTERIOR_SHORTCUT:
            bad("interior_shortcut", f"one of {_INTERIOR_SHORTCUT}")
        if self.dtype not in _DTYPES:
            bad("dtype", f"one of {tuple(_DTYPES)}")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["branch_kernels"] = [list(k) for k in self.branch_kernels]
        d["branch_dilations"] = [list(k) for k in self.branch_dilations]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown NetConfig keys: {sorted(unknown)}", field=sorted(unknown)[0])
        return cls(**d)


def reference_config(**overrides) -> NetConfig:
    """1 STEM + 4 CONV RES, kernels 3/5/7, dilations 1/3/5, 16/48 filters, 2 classes, m = 0."""
    return dataclasses.replace(NetConfig(), **overrides).validate()


# -- blocks -----------------------------------------------------------------

@dataclass
class SepLayer:
    depthwise: ConvKernel
    pointwise: ConvKernel
    norm: BatchNormState | None = None


@dataclass
class Branch:
    layers: list[SepLayer]
    preact_norm: BatchNormState | None = None


@dataclass
class ConvResBlock:
    """Parallel separable atrous branches, concatenated and added to the shortcut.

    ``preactivation`` is the starred operation the STEM block omits: interior
    blocks pass their input through leaky ReLU (and batch norm when enabled)
    before the branch convolutions.  ``shortcut`` is ``None`` for an identity
    shortcut; ``use_shortcut=False`` drops the residual add entirely.
    """

    name: str
    branches: list[Branch]
    shortcut: ConvKernel | None
    preactivation: bool
    use_shortcut: bool = True
    alpha: float = 0.3
    dropout: float = 0.2
    out_channels: int = 0
    in_channels: int = 0

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for bi, br in enumerate(self.branches):
            p = f"{self.name}/branch{bi}"
            if br.preact_norm is not None:
                yield f"{p}/preact_norm/gamma", br.preact_norm.gamma
                yield f"{p}/preact_norm/beta", br.preact_norm.beta
            for li, layer in enumerate(br.layers):
                q = f"{p}/sep{li}"
                yield from _kernel_params(f"{q}/depthwise", layer.depthwise)
                yield from _kernel_params(f"{q}/pointwise", layer.pointwise)
                if layer.norm is not None:
                    yield f"{q}/norm/gamma", layer.norm.gamma
                    yield f"{q}/norm/beta", layer.norm.beta
        if self.shortcut is not None:
            yield from _kernel_params(f"{self.name}/shortcut", self.shortcut)

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for bi, br in enumerate(self.branches):
            p = f"{self.name}/branch{bi}"
            norms = [("preact_norm", br.preact_norm)] + [(f"sep{li}/norm", l.norm) for li, l in enumerate(br.layers)]
            for label, st in norms:
                if st is not None:
                    yield f"{p}/{label}/running_mean", st.running_mean
                    yield f"{p}/{label}/running_var", st.running_var

    def residual(self, x: Tensor, training: bool) -> Tensor:
        outs = []
        for br in self.branches:
            h = x
            if self.preactivation:
                if br.preact_norm is not None:
                    h = batch_norm(h, br.preact_norm, training)
                h = leaky_relu(h, self.alpha)
            for layer in br.layers:
                h = pointwise_conv2d(depthwise_conv2d(h, layer.depthwise), layer.pointwise)
                if layer.norm is not None:
                    h = batch_norm(h, layer.norm, training)
                h = leaky_relu(h, self.alpha)
            outs.append(h)
        return concat_channels(outs)

    def __call__(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        if x.shape[3] != self.in_channels:
            raise ShapeError(f"{self.name} expects {self.in_channels} channels, got {x.shape[3]}", dim="channels")
        r = self.residual(x, training)
        if self.use_shortcut:
            s = x if self.shortcut is None else pointwise_conv2d(x, self.shortcut)
            r = add(s, r)
        return spatial_dropout(r, self.dropout, rng, training)


@dataclass
class LSTMResBlock:
    """Row-scan and column-scan bidirectional ConvLSTMs, projected back and added to the input."""

    name: str
    rows: ConvLSTMParams
    cols: ConvLSTMParams
    projection: ConvKernel
    dropout: float = 0.2
    in_channels: int = 0

    @property
    def out_channels(self) -> int:
        return self.in_channels

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for axis, p in (("rows", self.rows), ("cols", self.cols)):
            for d, direction in (("fwd", p.forward), ("bwd", p.backward)):
                q = f"{self.name}/lstm_{axis}/{d}"
                yield f"{q}/wx", direction.wx
                yield f"{q}/wh", direction.wh
                yield f"{q}/bias", direction.bias
        yield from _kernel_params(f"{self.name}/projection", self.projection)

    def named_buffers(self):
        return iter(())

    def __call__(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        if x.shape[3] != self.in_channels:
            raise ShapeError(f"{self.name} expects {self.in_channels} channels, got {x.shape[3]}", dim="channels")
        merged = concat_channels([conv_lstm_bidirectional(x, self.rows, "rows"),
                                  conv_lstm_bidirectional(x, self.cols, "cols")])
        r = pointwise_conv2d(merged, self.projection)
        return spatial_dropout(add(x, r), self.dropout, rng, training)


def _kernel_params(prefix: str, k: ConvKernel):
    yield f"{prefix}/weights", k.weights
    if k.bias is not None:
        yield f"{prefix}/bias", k.bias


def _make_branches(cfg: NetConfig, cin: int, preact: bool, rng) -> list[Branch]:
    dt = cfg.np_dtype
    norm = cfg.normalization == "per-branch"
    branches = []
    for ksize, dil in zip(cfg.branch_kernels, cfg.branch_dilations):
        layers, c = [], cin
        for _ in range(cfg.branch_depth):
            layers.append(SepLayer(
                ConvKernel.depthwise(c, ksize, dil, bias=cfg.depthwise_bias, rng=rng, dtype=dt),
                ConvKernel.pointwise(c, cfg.branch_filters, bias=True, rng=rng, dtype=dt),
                BatchNormState.create(cfg.branch_filters, dt) if norm else None,
            ))
            c = cfg.branch_filters
        branches.append(Branch(layers, BatchNormState.create(cin, dt) if norm and preact else None))
    return branches


def build_conv_res_block(cfg: NetConfig, input_channels: int, name: str = "conv_res",
                         rng: np.random.Generator | None = None) -> ConvResBlock:
    cfg.validate()
    if cfg.interior_shortcut == "identity" and input_channels != cfg.shortcut_filters:
        raise ConfigError(f"identity shortcut needs {cfg.shortcut_filters} input channels, got {input_channels}",
                          field="shortcut_filters")
    shortcut = None
    if cfg.interior_shortcut == "projection":
        shortcut = ConvKernel.pointwise(input_channels, cfg.shortcut_filters, rng=rng, dtype=cfg.np_dtype)
    return ConvResBlock(name, _make_branches(cfg, input_channels, True, rng), shortcut, preactivation=True,
                        alpha=cfg.leaky_alpha, dropout=cfg.dropout_rate,
                        out_channels=cfg.shortcut_filters, in_channels=input_channels)


def build_stem_block(cfg: NetConfig, input_channels: int, name: str = "stem",
                     rng: np.random.Generator | None = None) -> ConvResBlock:
    cfg.validate()
    projection = cfg.stem_shortcut == "projection"
    shortcut = ConvKernel.pointwise(input_channels, cfg.shortcut_filters, rng=rng, dtype=cfg.np_dtype) \
        if projection else None
    return ConvResBlock(name, _make_branches(cfg, input_channels, False, rng), shortcut, preactivation=False,
                        use_shortcut=projection, alpha=cfg.leaky_alpha, dropout=cfg.dropout_rate,
                        out_channels=cfg.shortcut_filters, in_channels=input_channels)


def build_lstm_res_block(cfg: NetConfig, name: str = "lstm_res",
                         rng: np.random.Generator | None = None) -> LSTMResBlock:
    cfg.validate()
    c, dt = cfg.shortcut_filters, cfg.np_dtype
    return LSTMResBlock(
        name,
        ConvLSTMParams.create(c, cfg.lstm_hidden, cfg.lstm_kernel, rng=rng, dtype=dt),
        ConvLSTMParams.create(c, cfg.lstm_hidden, cfg.lstm_kernel, rng=rng, dtype=dt),
        ConvKernel.pointwise(4 * cfg.lstm_hidden, c, rng=rng, dtype=dt),
        dropout=cfg.dropout_rate, in_channels=c,
    )


# -- model ------------------------------------------------------------------

@dataclass
class Model:
    config: NetConfig
    blocks: list = field(default_factory=list)
    head: ConvKernel | None = None

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [kv for b in self.blocks for kv in b.named_parameters()]
        out += list(_kernel_params("head", self.head))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        return [kv for b in self.blocks for kv in b.named_buffers()]

    def forward(self, batch, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=self.config.np_dtype))
        if x.ndim != 4:
            raise ShapeError(f"batch must be [batch, rows, cols, channels], got {x.shape}", dim="rank")
        if x.shape[3] != self.config.input_channels:
            raise ShapeError(f"model expects {self.config.input_channels} input channels, got {x.shape[3]}",
                             dim="channels")
        for block in self.blocks:
            x = block(x, training, rng)
        return softmax_channels(pointwise_conv2d(x, self.head))

    __call__ = forward


def build_res_cr_net(cfg: NetConfig, seed: int | None = 0) -> Model:
    """STEM, then n-1 CONV RES blocks, then m LSTM RES blocks, then 1x1 head and softmax.

    ``seed=None`` leaves every weight at zero (useful for structural tests).
    """
    cfg.validate()
    rng = None if seed is None else np.random.default_rng(seed)
    blocks: list = []
    c = cfg.input_channels
    if cfg.n_conv_blocks:
        blocks.append(build_stem_block(cfg, c, "stem", rng))
        c = cfg.shortcut_filters
        for i in range(1, cfg.n_conv_blocks):
            blocks.append(build_conv_res_block(cfg, c, f"conv_res{i}", rng))
        for j in range(cfg.m_lstm_blocks):
            blocks.append(build_lstm_res_block(cfg, f"lstm_res{j + 1}", rng))
    head = ConvKernel.pointwise(c, cfg.num_classes, bias=True, rng=rng, dtype=cfg.np_dtype)
    model = Model(cfg, blocks, head)
    names = [n for n, _ in model.named_parameters()]
    assert len(names) == len(set(names)), "duplicate parameter names"
    return model


# -- structural reports -------------------------------------------------------

def param_breakdown(model: Model) -> list[tuple[str, tuple[int, ...], int]]:
    """(name, shape, count) for every trainable tensor, in model order."""
    return [(n, t.shape, int(t.data.size)) for n, t in model.named_parameters()]


def param_count(model: Model) -> int:
    return sum(c for _, _, c in param_breakdown(model))


def block_param_totals(model: Model) -> list[tuple[str, int]]:
    totals: dict[str, int] = {}
    for name, _, count in param_breakdown(model):
        key = name.split("/")[0]
        totals[key] = totals.get(key, 0) + count
    return list(totals.items())


def summary_table(model: Model, per_tensor: bool = True) -> str:
    rows: list[tuple[str, str, str]] = []
    if per_tensor:
        rows += [(n, "x".join(map(str, s)), str(c)) for n, s, c in param_breakdown(model)]
        rows.append(("", "", ""))
    rows += [(f"[block] {b}", "", str(c)) for b, c in block_param_totals(model)]
    nbuf = sum(a.size for _, a in model.named_buffers())
    if nbuf:
        rows.append(("[non-trainable] batch-norm running stats", "", str(nbuf)))
    rows.append(("TOTAL trainable", "", str(param_count(model))))
    header = ("layer", "shape", "params")
    widths = [max(len(r[i]) for r in rows + [header]) for i in range(3)]
    line = lambda r: f"{r[0]:<{widths[0]}}  {r[1]:<{widths[1]}}  {r[2]:>{widths[2]}}".rstrip()
    return "\n".join([line(header), "-" * (sum(widths) + 4)] + [line(r) for r in rows])


SURVEY_AXES = {
    "branch_depth": (1, 2),
    "normalization": _NORMALIZATION,
    "stem_shortcut": _STEM_SHORTCUT,
    "interior_shortcut": _INTERIOR_SHORTCUT,
    "depthwise_bias": (False, True),
}


def param_count_survey(cfg: NetConfig, target: int = REFERENCE_PARAM_COUNT) -> list[tuple[dict, int, int]]:
    """Parameter totals for every combination of the under-specified structural switches.

    Returns ``(overrides, count, count - target)`` sorted by ``|delta|``.
    """
    rows = []
    for values in itertools.product(*SURVEY_AXES.values()):
        over = dict(zip(SURVEY_AXES, values))
        model = build_res_cr_net(dataclasses.replace(cfg, **over), seed=None)
        n = param_count(model)
        rows.append((over, n, n - target))
    rows.sort(key=lambda r: (abs(r[2]), r[1]))
    return rows
