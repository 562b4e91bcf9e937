"""Synthetic data, a small embedding network and the SGD training loop."""

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CenterCollision, Diverged, InvalidValue
from .geometry import FeatureBatch, cosine_logits, normalize_rows
from .gradients import full_backward
from .losses import LossSpec, Variant, sv_mask

MAGIC = b"SVM1"
CENTER_COS_LIMIT = 0.99
CENTER_ATTEMPTS = 100


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 8
    samples_per_class: int = 50
    ambient_dim: int = 16
    embed_dim: int = 8
    noise_sigma: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise InvalidValue("num_classes must be >= 2")
        if self.samples_per_class < 2:
            raise InvalidValue("samples_per_class must be >= 2")
        if self.ambient_dim < 2 or self.embed_dim < 2:
            raise InvalidValue("ambient_dim and embed_dim must be >= 2")
        if not self.noise_sigma > 0:
            raise InvalidValue("noise_sigma must be positive")
        if not 0 <= self.seed < 2**64:
            raise InvalidValue("seed must be an unsigned 64-bit integer")


def _rng(seed, stream):
    return np.random.default_rng([int(seed), stream])


def class_centers(spec):
    """Unit class centers, resampled until no two have cosine >= 0.99."""
    rng = _rng(spec.seed, 0)
    for _ in range(CENTER_ATTEMPTS):
        centers = normalize_rows(rng.standard_normal((spec.num_classes, spec.ambient_dim)))
        gram = centers @ centers.T
        np.fill_diagonal(gram, -1.0)
        if gram.max() < CENTER_COS_LIMIT:
            return centers
    raise CenterCollision(f"no well-separated centers after {CENTER_ATTEMPTS} attempts")


def make_synthetic(spec):
    """Gaussian clusters around unit centers, split per class into train/test halves."""
    centers = class_centers(spec)
    rng = _rng(spec.seed, 1)
    n = spec.samples_per_class
    n_train = n // 2
    train_x, train_y, test_x, test_y = [], [], [], []
    for c in range(spec.num_classes):
        pts = centers[c] + spec.noise_sigma * rng.standard_normal((n, spec.ambient_dim))
        train_x.append(pts[:n_train])
        test_x.append(pts[n_train:])
        train_y.append(np.full(n_train, c))
        test_y.append(np.full(n - n_train, c))
    k = spec.num_classes
    return (FeatureBatch(np.concatenate(train_x), np.concatenate(train_y), k),
            FeatureBatch(np.concatenate(test_x), np.concatenate(test_y), k))


def nearest_center_accuracy(batch, centers):
    d2 = ((batch.data[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
    return float(np.mean(np.argmin(d2, axis=1) == batch.labels))


# ---------------------------------------------------------------------------
# network


class EmbeddingNet:
    """Fully connected ReLU network followed by a cosine classifier.

    ``weights[i]`` is out x in, ``classifier`` is K x embed_dim (raw, rows
    normalized only when computing logits).
    """

    def __init__(self, dims, weights, biases, classifier):
        self.dims = tuple(int(d) for d in dims)
        self.weights = weights
        self.biases = biases
        self.classifier = classifier

    @classmethod
    def init(cls, dims, num_classes, rng):
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        classifier = normalize_rows(rng.standard_normal((num_classes, dims[-1])))
        return cls(dims, weights, biases, classifier)

    @property
    def num_classes(self):
        return self.classifier.shape[0]

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out + [self.classifier]

    def copy(self):
        return EmbeddingNet(self.dims, [w.copy() for w in self.weights],
                            [b.copy() for b in self.biases], self.classifier.copy())

    def forward(self, x):
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def backward(self, acts, d_out):
        """Gradients of the layer parameters given d loss / d raw embedding."""
        grads = []
        g = d_out
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                g = g * (acts[i + 1] > 0.0)
            grads.append((g.T @ acts[i], g.sum(axis=0)))
            g = g @ self.weights[i]
        out = []
        for gw, gb in reversed(grads):
            out += [gw, gb]
        return out

    def embed(self, x):
        return normalize_rows(self.forward(np.asarray(x, dtype=np.float64))[0])

    def predict(self, x):
        return np.argmax(cosine_logits(self.embed(x), normalize_rows(self.classifier)), axis=1)


def evaluate_model(model, data):
    """Unit-norm embeddings of ``data`` and its labels."""
    return model.embed(data.data), data.labels


def classifier_accuracy(model, data):
    return float(np.mean(model.predict(data.data) == data.labels))


# ---------------------------------------------------------------------------
# optimization


class SGD:
    """Classical momentum: ``b <- mu * b + (g + wd * p)``, ``p <- p - lr * b``."""

    def __init__(self, params, lr, momentum=0.9, weight_decay=5e-4):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers = [np.zeros_like(p) for p in params]

    def step(self, grads):
        for p, g, b in zip(self.params, grads, self.buffers):
            b *= self.momentum
            b += g + self.weight_decay * p
            p -= self.lr * b


@dataclass(frozen=True)
class TrainConfig:
    spec: LossSpec
    epochs: int = 60
    batch_size: int = 64
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_drop_epochs: tuple = (30, 45, 55)
    lr_drop_factor: float = 10.0
    hidden: tuple = (64,)
    seed: int = 0
    renormalize_weights_after_step: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lr_drop_epochs", tuple(int(e) for e in self.lr_drop_epochs))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidValue("epochs and batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise InvalidValue("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise InvalidValue("momentum must lie in [0, 1)")
        if not self.weight_decay >= 0:
            raise InvalidValue("weight_decay must be >= 0")
        if not self.lr_drop_factor > 0:
            raise InvalidValue("lr_drop_factor must be positive")
        if any(h < 1 for h in self.hidden):
            raise InvalidValue("hidden widths must be >= 1")

    def lr_at(self, epoch):
        """Learning rate used during ``epoch`` (1-based)."""
        drops = sum(1 for e in self.lr_drop_epochs if e < epoch)
        return self.learning_rate / self.lr_drop_factor**drops


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    train_accuracy: float
    sv_rate: float
    learning_rate: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    model: EmbeddingNet = None

    def __len__(self):
        return len(self.records)

    def to_csv(self):
        lines = ["epoch,mean_loss,train_accuracy,sv_rate,learning_rate"]
        for r in self.records:
            lines.append(f"{r.epoch},{r.mean_loss:.17g},{r.train_accuracy:.17g},{r.sv_rate:.17g},{r.learning_rate:.17g}")
        return "\n".join(lines) + "\n"


def support_vector_entries(spec, bw, labels):
    """Masked non-target entries of a batch, for the sv_rate diagnostic.

    Variants without a mask of their own report the plain support-vector
    mask, so the diagnostic is comparable across losses.
    """
    if spec.variant in (Variant.SV, Variant.SVX):
        return int(bw.forward.mask.sum())
    return int(sv_mask(bw.cos, labels).sum())


def train(config, data, *, embed_dim=None, model=None):
    """Mini-batch SGD on ``data`` with ``config.spec`` as the loss.

    A fresh network ``ambient -> hidden... -> embed_dim`` is initialized
    from ``config.seed`` unless ``model`` is given; ``embed_dim`` defaults to
    the input width.

    Raises
    ------
    Diverged
        When a batch loss is not finite; ``err.history`` holds the epochs
        completed before it.
    """
    rng_init = _rng(config.seed, 3)
    rng_shuffle = _rng(config.seed, 2)
    if model is None:
        out_dim = data.data.shape[1] if embed_dim is None else embed_dim
        dims = (data.data.shape[1], *config.hidden, out_dim)
        model = EmbeddingNet.init(dims, data.num_classes, rng_init)
    params = model.parameters()
    opt = SGD(params, config.learning_rate, config.momentum, config.weight_decay)
    history = TrainHistory(model=model)
    n = len(data)
    k = data.num_classes
    for epoch in range(1, config.epochs + 1):
        opt.lr = config.lr_at(epoch)
        order = rng_shuffle.permutation(n)
        losses = []
        masked = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = data.data[idx], data.labels[idx]
            emb, acts = model.forward(xb)
            bw = full_backward(emb, model.classifier, yb, config.spec)
            if not np.all(np.isfinite(bw.forward.loss)):
                raise Diverged(f"non-finite loss in epoch {epoch}", history)
            grads = model.backward(acts, bw.d_features)
            grads.append(bw.d_weights)
            opt.step(grads)
            if config.renormalize_weights_after_step:
                model.classifier[:] = normalize_rows(model.classifier)
            losses.extend(bw.forward.loss.tolist())
            masked += support_vector_entries(config.spec, bw, yb)
        mean_loss = math.fsum(losses) / n
        if not all(np.all(np.isfinite(p)) for p in params) or not math.isfinite(mean_loss):
            raise Diverged(f"non-finite parameters after epoch {epoch}", history)
        history.records.append(EpochRecord(
            epoch, mean_loss, classifier_accuracy(model, data), masked / (n * (k - 1)), opt.lr,
        ))
    return history


# ---------------------------------------------------------------------------
# model file


def model_to_bytes(model):
    """``SVM1`` | u64 layers | u64 classes | u64 dims[layers+1] | <f8 W, b per layer | <f8 classifier."""
    parts = [MAGIC, struct.pack("<QQ", len(model.weights), model.num_classes)]
    parts.append(struct.pack(f"<{len(model.dims)}Q", *model.dims))
    for w, b in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(model.classifier, dtype="<f8").tobytes())
    return b"".join(parts)


def model_from_bytes(raw):
    if raw[:4] != MAGIC:
        raise InvalidValue(f"not a model file (magic {raw[:4]!r})")
    layers, k = struct.unpack_from("<QQ", raw, 4)
    off = 20
    dims = struct.unpack_from(f"<{layers + 1}Q", raw, off)
    off += 8 * (layers + 1)

    def take(shape):
        nonlocal off
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape)
        off += 8 * count
        return arr

    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(take((fan_out, fan_in)))
        biases.append(take((fan_out,)))
    classifier = take((k, dims[-1]))
    if off != len(raw):
        raise InvalidValue("trailing bytes in model file")
    return EmbeddingNet(dims, weights, biases, classifier)


def save_model(model, path):
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
