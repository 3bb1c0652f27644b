"""Training loops, the one-class threshold rule, prediction and checkpoints."""

from __future__ import annotations

import dataclasses
import io
import json
import math
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from .nets import MODEL_KINDS, ImageClassifier, RawIQClassifier, SparseAutoencoder

CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class ConvStage:
    filters: int = 8
    kernel: int = 5
    pool: int = 2


@dataclass(frozen=True)
class ClassifierConfig:
    input_side: int = 64
    num_classes: int = 10
    hidden_widths: tuple = (128,)
    conv_stage: ConvStage | None = ConvStage()
    learning_rate: float = 0.02
    momentum: float = 0.9
    batch_size: int = 16
    max_epochs: int = 60
    # early stop once the last `early_stop_window` validation accuracies (in percent)
    # have variance below `early_stop_variance`, but never before `min_epochs`; with a dozen
    # images per class a two-classes-merged plateau is flat for 10+ epochs before it splits
    early_stop_window: int = 5
    early_stop_variance: float = 0.5
    min_epochs: int = 30
    weight_decay: float = 1e-4
    pixel_cap: float = 255.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(h) for h in self.hidden_widths))
        if isinstance(self.conv_stage, dict):
            object.__setattr__(self, "conv_stage", ConvStage(**self.conv_stage))
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.early_stop_window < 2:
            raise ValueError("early_stop_window must be >= 2")
        if not (self.learning_rate > 0 and 0 <= self.momentum < 1 and self.batch_size >= 1 and self.max_epochs >= 1):
            raise ValueError("bad optimiser settings")
        if any(h < 1 for h in self.hidden_widths):
            raise ValueError("hidden widths must be positive")

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        return d


@dataclass(frozen=True)
class RawIQConfig:
    length: int = 10_000
    num_classes: int = 10
    filters: int = 16
    kernel: int = 8
    hidden: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 16
    max_epochs: int = 60
    early_stop_window: int = 5
    early_stop_variance: float = 0.5
    min_epochs: int = 8
    weight_decay: float = 1e-4

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.length < self.kernel:
            raise ValueError("length shorter than the kernel")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class AutoencoderConfig:
    hidden_units: int = 64
    sparsity_coefficient: float = 0.5
    sparsity_target: float = 0.05
    l2_coefficient: float = 0.01
    max_iterations: int = 400
    validation_fraction: float = 0.25
    pixel_cap: float = 255.0

    def __post_init__(self):
        if self.hidden_units < 1 or not 0 < self.sparsity_target < 1:
            raise ValueError("bad autoencoder settings")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must be in (0, 1)")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainedModel:
    model: object
    config: dict
    seed: int | None = None
    history: list = field(default_factory=list)
    # input scaling applied before the model: x / input_scale
    input_scale: float = 1.0

    @property
    def kind(self) -> str:
        return self.model.kind


@dataclass(frozen=True)
class ThresholdModel:
    tau: float
    train_mse_mean: float
    train_mse_std: float
    k: float = 3.5

    @classmethod
    def from_mse(cls, mse, k: float = 3.5) -> "ThresholdModel":
        """tau = mean + k * sample standard deviation of the validation MSEs."""
        m = np.asarray(mse, dtype=np.float64).ravel()
        if m.size < 2:
            raise ValueError("need at least two validation MSEs")
        if not np.all(np.isfinite(m)):
            raise ValueError("non-finite MSE")
        mean = float(np.mean(m))
        std = float(np.std(m, ddof=1))
        if np.all(m == m[0]):
            mean, std = float(m[0]), 0.0
        return cls(mean + k * std, mean, std, k)


# --------------------------------------------------------------------------- helpers


def _labels(y, num_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.size == 0:
        raise ValueError("labels must be a non-empty 1-D array")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(y == np.round(y)):
            raise ValueError("labels must be integers")
        y = y.astype(np.int64)
    if y.min() < 0 or y.max() >= num_classes:
        raise ValueError(f"labels must lie in [0, {num_classes})")
    if np.unique(y).size < 2:
        raise ValueError("degenerate labels: need at least two classes")
    return y.astype(np.int64)


def split_indices(labels, rng: np.random.Generator, fractions=(0.6, 0.2, 0.2)) -> tuple[np.ndarray, ...]:
    """Stratified disjoint split of sample indices by ``fractions`` (default 60/20/20)."""
    labels = np.asarray(labels)
    f = np.asarray(fractions, dtype=np.float64)
    if np.any(f < 0) or not math.isclose(f.sum(), 1.0):
        raise ValueError("fractions must be non-negative and sum to 1")
    parts = [[] for _ in f]
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        cuts = np.round(np.cumsum(f)[:-1] * idx.size).astype(int)
        for k, seg in enumerate(np.split(idx, cuts)):
            parts[k].append(seg)
    return tuple(np.sort(np.concatenate(p)) for p in parts)


def _accuracy(model, x, y, batch=64) -> float:
    pred = np.concatenate([model.forward(x[i:i + batch]).argmax(axis=1) for i in range(0, len(x), batch)])
    return float(np.mean(pred == y))


def _sgd(model, x, y, xv, yv, cfg, rng, echo: dict) -> list:
    if len(x) == 0 or len(xv) == 0:
        raise ValueError("training and validation sets must both be non-empty")
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    history = []
    best = (-1.0, None)
    n = len(x)
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        losses = []
        for i in range(0, n, cfg.batch_size):
            b = order[i:i + cfg.batch_size]
            loss, grads = model.loss_and_grad(x[b], y[b])
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}; config: {json.dumps(echo)}")
            losses.append(loss)
            for k, gk in grads.items():
                velocity[k] = cfg.momentum * velocity[k] - cfg.learning_rate * gk
                model.params[k] += velocity[k]
        acc = _accuracy(model, xv, yv)
        history.append({"epoch": epoch, "loss": float(np.mean(losses)), "val_accuracy": acc})
        if acc > best[0]:
            best = (acc, {k: v.copy() for k, v in model.params.items()})
        recent = [100 * h["val_accuracy"] for h in history[-cfg.early_stop_window:]]
        if (epoch + 1 >= cfg.min_epochs and len(recent) == cfg.early_stop_window
                and np.var(recent) < cfg.early_stop_variance):
            break
    # keep the weights with the best validation accuracy
    model.params.update(best[1])
    return history


def _seed_of(rng) -> int:
    return int(rng.integers(0, 2**63))


# --------------------------------------------------------------------------- classifiers


def train_classifier(images, labels, cfg: ClassifierConfig = ClassifierConfig(), rng=None,
                     val_images=None, val_labels=None) -> TrainedModel:
    """Momentum-SGD training of the image classifier on pixel counts scaled by ``cfg.pixel_cap``.

    Without an explicit validation set, a stratified quarter of the given images is held out
    (the 20 of a 60/20/20 split). The returned model holds the best-validation weights.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    y = _labels(labels, cfg.num_classes)
    x = np.asarray(images, dtype=np.float64) / cfg.pixel_cap
    if x.ndim != 3 or x.shape[0] != y.size:
        raise ValueError("images must be (n, side, side) with one label each")
    if val_images is None:
        tr, va = split_indices(y, rng, (0.75, 0.25))
        x, xv, y, yv = x[tr], x[va], y[tr], y[va]
    else:
        xv = np.asarray(val_images, dtype=np.float64) / cfg.pixel_cap
        yv = _labels(val_labels, cfg.num_classes) if np.unique(val_labels).size > 1 else np.asarray(val_labels)
    seed = _seed_of(rng)
    cs = cfg.conv_stage
    model = ImageClassifier(cfg.input_side, cfg.num_classes, filters=cs.filters if cs else 0,
                            kernel=cs.kernel if cs else 1, pool=cs.pool if cs else 1,
                            hidden_widths=cfg.hidden_widths, weight_decay=cfg.weight_decay,
                            rng=np.random.default_rng(seed))
    hist = _sgd(model, x, y, xv, yv, cfg, np.random.default_rng(seed + 1), cfg.as_dict())
    return TrainedModel(model, cfg.as_dict(), seed, hist, cfg.pixel_cap)


def train_rawiq_classifier(chunks, labels, cfg: RawIQConfig = RawIQConfig(), rng=None,
                           val_chunks=None, val_labels=None) -> TrainedModel:
    """Same training regime as :func:`train_classifier` on interleaved I/Q vectors.

    ``chunks`` may be complex (n, L) arrays or real interleaved (n, 2L) arrays.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    y = _labels(labels, cfg.num_classes)
    x = interleave(chunks)
    if x.shape[0] != y.size or x.shape[1] != 2 * cfg.length:
        raise ValueError(f"chunks must be (n, {cfg.length}) complex or (n, {2 * cfg.length}) interleaved")
    if val_chunks is None:
        tr, va = split_indices(y, rng, (0.75, 0.25))
        x, xv, y, yv = x[tr], x[va], y[tr], y[va]
    else:
        xv, yv = interleave(val_chunks), np.asarray(val_labels)
    seed = _seed_of(rng)
    model = RawIQClassifier(cfg.length, cfg.num_classes, cfg.filters, cfg.kernel, cfg.hidden,
                            cfg.weight_decay, rng=np.random.default_rng(seed))
    hist = _sgd(model, x, y, xv, yv, cfg, np.random.default_rng(seed + 1), cfg.as_dict())
    return TrainedModel(model, cfg.as_dict(), seed, hist, 1.0)


def interleave(chunks) -> np.ndarray:
    """Complex (n, L) -> real (n, 2L) ``[I0, Q0, I1, Q1, ...]``; real input passes through."""
    c = np.asarray(chunks)
    if np.iscomplexobj(c):
        c = np.atleast_2d(c)
        out = np.empty((c.shape[0], 2 * c.shape[1]))
        out[:, 0::2], out[:, 1::2] = c.real, c.imag
        return out
    return np.atleast_2d(c.astype(np.float64))


def predict(trained: TrainedModel, x) -> np.ndarray:
    """Class probabilities; a single input gives a vector, a batch gives (n, C)."""
    model = trained.model
    if isinstance(model, RawIQClassifier):
        arr = interleave(x)
        single = np.asarray(x).ndim == 1
    else:
        arr = np.asarray(x, dtype=np.float64) / trained.input_scale
        single = arr.ndim == 2
    p = model.forward(arr)
    return p[0] if single else p


# --------------------------------------------------------------------------- autoencoder


def train_autoencoder(images, cfg: AutoencoderConfig = AutoencoderConfig(), rng=None) -> tuple[TrainedModel, ThresholdModel]:
    """Fit a sparse autoencoder to one device's images (full-batch L-BFGS on the exact loss).

    A ``cfg.validation_fraction`` share of the images is held out; their reconstruction
    MSEs set the acceptance threshold.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.asarray(images, dtype=np.float64) / cfg.pixel_cap
    x = x.reshape(x.shape[0], -1)
    n = x.shape[0]
    n_val = max(2, int(round(cfg.validation_fraction * n)))
    if n - n_val < 1:
        raise ValueError("need at least 3 images to train and validate an autoencoder")
    order = rng.permutation(n)
    xv, xt = x[order[:n_val]], x[order[n_val:]]
    seed = _seed_of(rng)
    ae = SparseAutoencoder(x.shape[1], cfg.hidden_units, cfg.sparsity_coefficient, cfg.sparsity_target,
                           cfg.l2_coefficient, rng=np.random.default_rng(seed))
    names = list(ae.params)
    shapes = [ae.params[k].shape for k in names]
    sizes = [ae.params[k].size for k in names]

    def unpack(theta):
        for k, s, part in zip(names, shapes, np.split(theta, np.cumsum(sizes)[:-1])):
            ae.params[k] = part.reshape(s)

    def fun(theta):
        unpack(theta)
        loss, g = ae.loss_and_grad(xt)
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite autoencoder loss; config: {json.dumps(cfg.as_dict())}")
        return loss, np.concatenate([g[k].ravel() for k in names])

    theta0 = np.concatenate([ae.params[k].ravel() for k in names])
    res = optimize.minimize(fun, theta0, jac=True, method="L-BFGS-B", options={"maxiter": cfg.max_iterations})
    unpack(res.x)
    val_mse = ae.reconstruction_mse(xv)
    trained = TrainedModel(ae, cfg.as_dict(), seed, [{"iterations": int(res.nit), "loss": float(res.fun),
                                                       "val_mse": val_mse.tolist()}], cfg.pixel_cap)
    return trained, ThresholdModel.from_mse(val_mse)


def reconstruction_mse(trained: TrainedModel, images) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64) / trained.input_scale
    if x.ndim == 2:
        x = x[None]
    return trained.model.reconstruction_mse(x.reshape(x.shape[0], -1))


def one_class_decide(trained: TrainedModel, threshold: ThresholdModel | float, image) -> tuple[bool, float]:
    """(legitimate, mse); legitimate iff mse < tau (strictly)."""
    tau = threshold.tau if isinstance(threshold, ThresholdModel) else float(threshold)
    mse = float(reconstruction_mse(trained, image)[0])
    return mse < tau, mse


# --------------------------------------------------------------------------- checkpoints


def save_model(trained: TrainedModel, path, threshold: ThresholdModel | None = None) -> Path:
    """Zip archive of 64-bit ``.npy`` weights plus a JSON header (version, kind, config, seed)."""
    path = Path(path)
    model = trained.model
    header = {
        "format": "rfmask-model",
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "architecture": model.config(),
        "config": trained.config,
        "seed": trained.seed,
        "input_scale": trained.input_scale,
        "history": trained.history,
        "threshold": dataclasses.asdict(threshold) if threshold else None,
        "params": sorted(model.params),
    }
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as z:
        z.writestr("header.json", json.dumps(header, indent=2, sort_keys=True))
        for name, arr in sorted(model.params.items()):
            buf = io.BytesIO()
            np.save(buf, np.ascontiguousarray(arr, dtype="<f8"), allow_pickle=False)
            z.writestr(f"{name}.npy", buf.getvalue())
    return path


def load_model(path) -> tuple[TrainedModel, ThresholdModel | None]:
    with zipfile.ZipFile(path) as z:
        header = json.loads(z.read("header.json"))
        if header.get("format") != "rfmask-model":
            raise ValueError("not a model checkpoint")
        if header["version"] > CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint version {header['version']} is newer than supported")
        cls = MODEL_KINDS[header["kind"]]
        model = cls(**header["architecture"])
        for name in header["params"]:
            arr = np.load(io.BytesIO(z.read(f"{name}.npy")), allow_pickle=False)
            if arr.shape != model.params[name].shape:
                raise ValueError(f"shape mismatch for {name}")
            model.params[name] = arr.astype(np.float64)
    th = ThresholdModel(**header["threshold"]) if header.get("threshold") else None
    return TrainedModel(model, header["config"], header["seed"], header["history"], header["input_scale"]), th
