"""Training configuration and its flat ``key = value`` file format.

Lines are ``key = value``; ``#`` starts a comment.  Unknown keys are an
error.  Kernel and dilation lists are written ``3x3,5x5,7x7``.  Every key
and its default is listed in ``KEY_DOCS``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

from .data import AugmentRanges, PreprocessConfig
from .errors import ConfigError
from .model import NetConfig

KEY_DOCS = {
    # network
    "input_channels": "image channels fed to the STEM block",
    "n_conv_blocks": "conv-type blocks including the STEM block",
    "m_lstm_blocks": "LSTM RES blocks after the conv blocks",
    "branch_kernels": "kernel size of each parallel branch, e.g. 3x3,5x5,7x7",
    "branch_dilations": "dilation of each branch, e.g. 1x1,3x3,5x5",
    "branch_filters": "output channels of every branch",
    "shortcut_filters": "block width; must equal branch_filters x branches",
    "num_classes": "segmentation classes (softmax channels)",
    "leaky_alpha": "negative slope of the leaky ReLU",
    "dropout_rate": "spatial dropout rate after each block",
    "lstm_hidden": "hidden channels per ConvLSTM direction",
    "lstm_kernel": "ConvLSTM gate kernel length",
    "normalization": "none | per-branch (batch norm in every branch)",
    "branch_depth": "separable convolutions stacked per branch (1 or 2)",
    "stem_shortcut": "projection | branch-only",
    "interior_shortcut": "identity | projection",
    "depthwise_bias": "bias on depthwise kernels (true/false)",
    "dtype": "float32 | float64",
    # loss and weights
    "smoothing": "smoothing scalar of the Tanimoto loss",
    "w0": "contour weight amplitude",
    "sigma": "contour weight width in pixels",
    "balance": "add inverse class-frequency weights (true/false)",
    # preprocessing
    "resize_rows": "resize images to this many rows (0 keeps native size)",
    "resize_cols": "resize images to this many cols (0 keeps native size)",
    "equalize": "histogram-equalise images (true/false)",
    # augmentation
    "augment": "augment training batches (true/false)",
    "rotation_deg": "max |rotation| in degrees",
    "shear_deg": "max |shear| in degrees",
    "shift_frac": "max |shift| as a fraction of each dimension",
    "scale_min": "lower bound of the zoom factor",
    "scale_max": "upper bound of the zoom factor",
    "flip_h_prob": "probability of a horizontal mirror",
    "flip_v_prob": "probability of a vertical mirror",
    # optimisation
    "epochs": "training epochs",
    "batch_size": "images per batch",
    "learning_rate": "Adam step size",
    "beta1": "Adam first-moment decay",
    "beta2": "Adam second-moment decay",
    "adam_eps": "Adam denominator epsilon",
    "seed": "seed for initialisation, augmentation and dropout",
    "checkpoint_every": "write a checkpoint every N epochs (0 = only best/final)",
    "workers": "augmentation worker threads (does not change results)",
    # paths
    "manifest": "dataset manifest (TSV)",
    "out_dir": "run directory",
}


@dataclass
class TrainConfig:
    net: NetConfig = field(default_factory=NetConfig)
    smoothing: float = 1.0
    w0: float = 10.0
    sigma: float = 5.0
    balance: bool = False
    resize_rows: int = 0
    resize_cols: int = 0
    equalize: bool = True
    augment: bool = True
    rotation_deg: float = 15.0
    shear_deg: float = 8.0
    shift_frac: float = 0.10
    scale_min: float = 0.9
    scale_max: float = 1.1
    flip_h_prob: float = 0.5
    flip_v_prob: float = 0.5
    epochs: int = 300
    batch_size: int = 8
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-7
    seed: int = 0
    checkpoint_every: int = 0
    workers: int = 1
    manifest: str = ""
    out_dir: str = "run"

    def validate(self) -> "TrainConfig":
        self.net.validate()
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1", field="epochs")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", field="batch_size")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0", field="learning_rate")
        if self.smoothing <= 0:
            raise ConfigError("smoothing must be > 0", field="smoothing")
        if self.sigma <= 0 or self.w0 < 0:
            raise ConfigError("need w0 >= 0 and sigma > 0", field="sigma")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigError("Adam betas must be in [0, 1)", field="beta1")
        if self.scale_min <= 0 or self.scale_max < self.scale_min:
            raise ConfigError("need 0 < scale_min <= scale_max", field="scale_min")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1", field="workers")
        return self

    @property
    def preprocess(self) -> PreprocessConfig:
        return PreprocessConfig(self.resize_rows, self.resize_cols, self.equalize, self.w0, self.sigma, self.balance)

    @property
    def ranges(self) -> AugmentRanges:
        return AugmentRanges(self.rotation_deg, self.shear_deg, self.shift_frac, self.scale_min, self.scale_max,
                             self.flip_h_prob, self.flip_v_prob)

    # -- flat key/value form ---------------------------------------------
    def flat(self) -> dict:
        out = {f.name: getattr(self.net, f.name) for f in fields(NetConfig)}
        out.update({f.name: getattr(self, f.name) for f in fields(self) if f.name != "net"})
        return out

    def to_text(self) -> str:
        lines = []
        for k, v in self.flat().items():
            lines.append(f"# {KEY_DOCS[k]}")
            lines.append(f"{k} = {_format(v)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "TrainConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected key = value", field=line)
            k, v = (s.strip() for s in line.split("=", 1))
            if k not in KEY_DOCS:
                raise ConfigError(f"{source}:{lineno}: unknown key {k!r}", field=k)
            values[k] = v
        return cls.from_flat(values, source)

    @classmethod
    def from_flat(cls, values: dict, source: str = "<config>") -> "TrainConfig":
        cfg = cls()
        net_kw = {}
        for k, v in values.items():
            if k not in KEY_DOCS:
                raise ConfigError(f"{source}: unknown key {k!r}", field=k)
            target = cfg.net if k in {f.name for f in fields(NetConfig)} else cfg
            current = getattr(target, k)
            try:
                parsed = _parse(v, current) if isinstance(v, str) else v
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for {k}: {v!r} ({exc})", field=k) from exc
            if target is cfg.net:
                net_kw[k] = parsed
            else:
                setattr(cfg, k, parsed)
        cfg.net = dataclasses.replace(cfg.net, **net_kw)
        return cfg

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read(), str(path))


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join("x".join(str(i) for i in pair) for pair in v)
    return str(v)


def _parse(s: str, like):
    if isinstance(like, bool):
        low = s.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError("expected true or false")
        return low in ("true", "1", "yes")
    if isinstance(like, int):
        return int(s)
    if isinstance(like, float):
        return float(s)
    if isinstance(like, tuple):
        return tuple(tuple(int(i) for i in part.split("x")) for part in s.split(","))
    return s
