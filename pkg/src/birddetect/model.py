"""Convolutional-recurrent detector assembled from the layer library.

One CNN branch per feature class turns its (time, freq, channel) input
into a (time, 1, filters) map; branch outputs are merged by elementwise
multiplication, fed through a bidirectional GRU and a time-distributed
dense layer, and reduced to a single presence probability by a
maxout-sigmoid head.

``save_checkpoint``/``load_checkpoint`` persist the configuration and
every parameter and running statistic bit-for-bit, so a reloaded model
reproduces inference outputs exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .layers import (
    BatchNorm,
    BiGru,
    Conv2d,
    Dropout,
    MaxoutSigmoidHead,
    MaxPool2d,
    Merge,
    ReLU,
    ShapeError,
    TimeDense,
)

__all__ = [
    "CbrnnConfig",
    "CbrnnModel",
    "CheckpointError",
    "save_checkpoint",
    "load_checkpoint",
]

FEATURE_CLASSES = ("mbe", "domfreq")


def _check_pool_chain(size: int, factors: tuple[int, ...], axis: str) -> int:
    for f in factors:
        if f < 1:
            raise ValueError(f"{axis} pool factors must be positive, got {factors}")
        if size % f:
            raise ValueError(
                f"{axis} extent {size} is not divisible by pool factor {f} "
                f"(schedule {factors})"
            )
        size //= f
    return size


@dataclass(frozen=True)
class CbrnnConfig:
    """Architecture hyperparameters.

    The pooling schedules must collapse each branch's frequency axis to
    exactly 1 and divide the time axis evenly at every stage.
    """

    time_steps: int = 500
    mbe_bands: int = 40
    domfreq_slots: int = 3
    feature_classes: tuple[str, ...] = FEATURE_CLASSES
    n_filters: int = 8
    n_cnn_layers: int = 2
    pool_time: tuple[int, ...] = (10, 10)
    pool_freq_mbe: tuple[int, ...] = (5, 8)
    pool_freq_domfreq: tuple[int, ...] = (3, 1)
    rnn_units: int = 8
    fc_units: int = 8
    maxout_pieces: int = 2
    dropout: float = 0.25

    def __post_init__(self):
        for name in ("time_steps", "mbe_bands", "domfreq_slots", "n_filters",
                     "rnn_units", "fc_units"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.maxout_pieces < 2:
            raise ValueError("maxout_pieces must be at least 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if not self.feature_classes:
            raise ValueError("at least one feature class is required")
        if len(set(self.feature_classes)) != len(self.feature_classes):
            raise ValueError(f"duplicate feature classes: {self.feature_classes}")
        for cls in self.feature_classes:
            if cls not in FEATURE_CLASSES:
                raise ValueError(f"unknown feature class {cls!r}")
        for name in ("pool_time", "pool_freq_mbe", "pool_freq_domfreq"):
            if len(getattr(self, name)) != self.n_cnn_layers:
                raise ValueError(
                    f"{name} must list one factor per CNN layer "
                    f"({self.n_cnn_layers}), got {getattr(self, name)}"
                )
        _check_pool_chain(self.time_steps, self.pool_time, "time")
        if "mbe" in self.feature_classes:
            if _check_pool_chain(self.mbe_bands, self.pool_freq_mbe, "mel band") != 1:
                raise ValueError(
                    f"mel band pooling {self.pool_freq_mbe} does not reduce "
                    f"{self.mbe_bands} bands to 1"
                )
        if "domfreq" in self.feature_classes:
            if _check_pool_chain(self.domfreq_slots, self.pool_freq_domfreq,
                                 "peak slot") != 1:
                raise ValueError(
                    f"peak slot pooling {self.pool_freq_domfreq} does not reduce "
                    f"{self.domfreq_slots} slots to 1"
                )

    @property
    def rnn_time_steps(self) -> int:
        steps = self.time_steps
        for f in self.pool_time:
            steps //= f
        return steps

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CbrnnConfig":
        kwargs = dict(data)
        for name in ("feature_classes", "pool_time", "pool_freq_mbe",
                     "pool_freq_domfreq"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        return cls(**kwargs)


class _Branch:
    """CNN stack for one feature class: n_cnn_layers repeats of
    conv -> batch norm -> ReLU -> max pool -> dropout."""

    def __init__(self, name: str, in_channels: int, cfg: CbrnnConfig,
                 pool_freq: tuple[int, ...], rng: np.random.Generator):
        self.name = name
        self.convs: list[Conv2d] = []
        self.bns: list[BatchNorm] = []
        self.relus: list[ReLU] = []
        self.pools: list[MaxPool2d] = []
        self.drops: list[Dropout] = []
        channels = in_channels
        for i in range(cfg.n_cnn_layers):
            self.convs.append(Conv2d(channels, cfg.n_filters, rng))
            self.bns.append(BatchNorm(cfg.n_filters))
            self.relus.append(ReLU())
            self.pools.append(MaxPool2d(cfg.pool_time[i], pool_freq[i]))
            self.drops.append(Dropout(cfg.dropout))
            channels = cfg.n_filters

    def layers(self):
        for i in range(len(self.convs)):
            yield f"conv{i + 1}", self.convs[i]
            yield f"bn{i + 1}", self.bns[i]

    def forward(self, x: np.ndarray, train: bool, rng) -> np.ndarray:
        for i in range(len(self.convs)):
            x = self.convs[i].forward(x)
            x = self.bns[i].forward(x, train)
            x = self.relus[i].forward(x)
            x = self.pools[i].forward(x)
            x = self.drops[i].forward(x, train, rng)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for i in reversed(range(len(self.convs))):
            grad = self.drops[i].backward(grad)
            grad = self.pools[i].backward(grad)
            grad = self.relus[i].backward(grad)
            grad = self.bns[i].backward(grad)
            grad = self.convs[i].backward(grad)
        return grad


_BRANCH_CHANNELS = {"mbe": 1, "domfreq": 2}


class CbrnnModel:
    """The full detector. ``forward`` maps feature arrays to per-clip
    probabilities; ``backward`` takes the loss gradient with respect to
    those probabilities and accumulates parameter gradients."""

    def __init__(self, config: CbrnnConfig | None = None, seed: int = 0):
        self.config = config or CbrnnConfig()
        cfg = self.config
        rng = np.random.default_rng(seed)
        self.branches: dict[str, _Branch] = {}
        for cls in cfg.feature_classes:
            pool_freq = cfg.pool_freq_mbe if cls == "mbe" else cfg.pool_freq_domfreq
            self.branches[cls] = _Branch(cls, _BRANCH_CHANNELS[cls], cfg, pool_freq, rng)
        self.merge = Merge()
        self.rnn = BiGru(cfg.n_filters, cfg.rnn_units, rng)
        self.rnn_drop = Dropout(cfg.dropout)
        self.dense = TimeDense(2 * cfg.rnn_units, cfg.fc_units, rng, activation="relu")
        self.dense_drop = Dropout(cfg.dropout)
        self.head = MaxoutSigmoidHead(cfg.fc_units, cfg.maxout_pieces, rng)

    def _named_layers(self):
        for cls, branch in self.branches.items():
            for name, layer in branch.layers():
                yield f"{cls}.{name}", layer
        yield "rnn", self.rnn
        yield "dense", self.dense
        yield "head", self.head

    def parameters(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for prefix, layer in self._named_layers():
            for name, arr in layer.params().items():
                out[f"{prefix}.{name}"] = arr
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for prefix, layer in self._named_layers():
            for name, arr in layer.grads().items():
                out[f"{prefix}.{name}"] = arr
        return out

    def zero_grads(self) -> None:
        for g in self.gradients().values():
            g[...] = 0.0

    @property
    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def _check_inputs(self, mbe, domfreq):
        cfg = self.config
        if "mbe" in self.branches:
            if mbe is None:
                raise ShapeError("this model requires mel-band features")
            if mbe.ndim != 3 or mbe.shape[1:] != (cfg.time_steps, cfg.mbe_bands):
                raise ShapeError(
                    f"mel branch expected (B, {cfg.time_steps}, {cfg.mbe_bands}), "
                    f"got {mbe.shape}"
                )
        if "domfreq" in self.branches:
            if domfreq is None:
                raise ShapeError("this model requires dominant-frequency features")
            if domfreq.ndim != 4 or domfreq.shape[1:] != (cfg.time_steps,
                                                          cfg.domfreq_slots, 2):
                raise ShapeError(
                    f"peak branch expected (B, {cfg.time_steps}, "
                    f"{cfg.domfreq_slots}, 2), got {domfreq.shape}"
                )

    def forward(self, mbe: np.ndarray | None = None,
                domfreq: np.ndarray | None = None,
                train: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        self._check_inputs(mbe, domfreq)
        if train and self.config.dropout > 0.0 and rng is None:
            raise ValueError("training with dropout requires a random generator")
        outs = []
        for cls, branch in self.branches.items():
            x = mbe[..., None] if cls == "mbe" else domfreq
            outs.append(branch.forward(np.asarray(x, dtype=np.float64), train, rng))
        if len(outs) == 2:
            merged = self.merge.forward(outs[0], outs[1])
        else:
            merged = outs[0]
        self._merged_shape = merged.shape
        seq = merged.reshape(merged.shape[0], merged.shape[1], merged.shape[3])
        seq = self.rnn.forward(seq)
        seq = self.rnn_drop.forward(seq, train, rng)
        seq = self.dense.forward(seq)
        seq = self.dense_drop.forward(seq, train, rng)
        return self.head.forward(seq)

    def backward(self, dprob: np.ndarray) -> dict[str, np.ndarray]:
        grad = self.head.backward(dprob)
        grad = self.dense_drop.backward(grad)
        grad = self.dense.backward(grad)
        grad = self.rnn_drop.backward(grad)
        grad = self.rnn.backward(grad)
        grad = grad.reshape(self._merged_shape)
        names = list(self.branches)
        if len(names) == 2:
            branch_grads = self.merge.backward(grad)
        else:
            branch_grads = (grad,)
        out: dict[str, np.ndarray] = {}
        for cls, g in zip(names, branch_grads):
            gx = self.branches[cls].backward(g)
            out[cls] = gx[..., 0] if cls == "mbe" else gx
        return out

    # -- persistence ---------------------------------------------------

    def _buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for cls, branch in self.branches.items():
            for i, bn in enumerate(branch.bns):
                prefix = f"{cls}.bn{i + 1}"
                out[f"{prefix}.running_mean"] = bn.running_mean
                out[f"{prefix}.running_var"] = bn.running_var
                out[f"{prefix}.n_updates"] = np.array(bn.n_updates, dtype=np.int64)
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: arr.copy() for name, arr in self.parameters().items()}
        state.update({name: arr.copy() for name, arr in self._buffers().items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        expected = set(params) | set(self._buffers())
        got = set(state)
        if expected != got:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise ValueError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, arr in params.items():
            src = np.asarray(state[name], dtype=np.float64)
            if src.shape != arr.shape:
                raise ValueError(
                    f"shape mismatch for {name}: expected {arr.shape}, got {src.shape}"
                )
            arr[...] = src
        for cls, branch in self.branches.items():
            for i, bn in enumerate(branch.bns):
                prefix = f"{cls}.bn{i + 1}"
                bn.running_mean[...] = np.asarray(state[f"{prefix}.running_mean"])
                bn.running_var[...] = np.asarray(state[f"{prefix}.running_var"])
                bn.n_updates = int(np.asarray(state[f"{prefix}.n_updates"]))


class CheckpointError(ValueError):
    """Raised when a checkpoint file is malformed."""


_CKPT_MAGIC = b"BDCK"
_CKPT_VERSION = 1
_DTYPE_CODES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}
_CODE_FOR_KIND = {"f": 0, "i": 1}


def save_checkpoint(model: CbrnnModel, path) -> None:
    state = model.state_dict()
    config_blob = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", _CKPT_VERSION))
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        fh.write(struct.pack("<I", len(state)))
        for name in sorted(state):
            arr = state[name]
            code = _CODE_FOR_KIND[arr.dtype.kind]
            blob = name.encode("utf-8")
            fh.write(struct.pack("<H", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<BB", code, arr.ndim))
            fh.write(struct.pack(f"<{max(arr.ndim, 1)}I", *(arr.shape or (1,))))
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code]).tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path) -> CbrnnModel:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != _CKPT_MAGIC:
            raise CheckpointError(f"{path}: not a model checkpoint")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != _CKPT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        try:
            config = CbrnnConfig.from_dict(
                json.loads(_read_exact(fh, cfg_len, "config").decode("utf-8")))
        except (ValueError, TypeError) as exc:
            raise CheckpointError(f"invalid checkpoint configuration: {exc}") from exc
        (n_entries,) = struct.unpack("<I", _read_exact(fh, 4, "entry count"))
        state: dict[str, np.ndarray] = {}
        for _ in range(n_entries):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            code, ndim = struct.unpack("<BB", _read_exact(fh, 2, "array header"))
            if code not in _DTYPE_CODES:
                raise CheckpointError(f"unknown dtype code {code} for {name}")
            n_dims = max(ndim, 1)
            shape = struct.unpack(f"<{n_dims}I", _read_exact(fh, 4 * n_dims, "shape"))
            if ndim == 0:
                shape = ()
            dtype = _DTYPE_CODES[code]
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            payload = _read_exact(fh, count * dtype.itemsize, f"data for {name}")
            state[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
        if fh.read(1):
            raise CheckpointError("trailing bytes after checkpoint payload")
    model = CbrnnModel(config)
    try:
        model.load_state_dict(state)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc
    return model
