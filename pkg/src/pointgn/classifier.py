"""Similarity-based classifier over a bank of encoded training clouds.

A query's logits are ``exp(-gamma * (1 - sim)) @ onehot_labels`` where ``sim``
holds the cosine similarities to every bank row.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .encoder import GlobalFeature
from .errors import BankFormatError, InvalidArgumentError

DEFAULT_GAMMA = 100.0
GAMMA_CANDIDATES = (1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0)

BANK_MAGIC = b"PGNB"
BANK_VERSION = 1
_HEADER = struct.Struct("<4sIIII")

_CHUNK = 1024


def _unit_rows(x: NDArray[np.float64]) -> NDArray[np.float64]:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


@dataclass(frozen=True)
class FeatureBank:
    features: NDArray[np.float64]
    label_matrix: NDArray[np.float64]
    class_names: tuple[str, ...]
    fingerprint: str = ""
    config: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        for name in ("features", "label_matrix"):
            a = np.array(getattr(self, name), dtype=np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "class_names", tuple(str(c) for c in self.class_names))

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def num_classes(self) -> int:
        return self.label_matrix.shape[1]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def labels(self) -> NDArray[np.intp]:
        return np.argmax(self.label_matrix, axis=1)


@dataclass(frozen=True)
class ClassificationResult:
    logits: NDArray[np.float64]
    probabilities: NDArray[np.float64]
    predicted_class: int
    top_similarity: float
    warning: Optional[str] = None
    # natural log of the logits, finite even where the logits underflow to 0
    log_logits: Optional[NDArray[np.float64]] = None


def one_hot(labels: ArrayLike, num_classes: int) -> NDArray[np.float64]:
    labels = np.asarray(labels, dtype=np.intp)
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def bank_from_arrays(
    features: ArrayLike,
    labels: ArrayLike,
    num_classes: int,
    class_names: Optional[Sequence[str]] = None,
    fingerprint: str = "",
    config: Optional[dict] = None,
) -> FeatureBank:
    """Stack features and labels into a bank.

    Rows are L2-normalized and rounded to float32 so the bank survives a
    write/read cycle bit for bit.
    """
    feats = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise InvalidArgumentError("a bank needs at least one feature row")
    if labels.size != feats.shape[0]:
        raise InvalidArgumentError(f"{feats.shape[0]} features but {labels.size} labels")
    if num_classes < 2:
        raise InvalidArgumentError("a bank needs at least two classes")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InvalidArgumentError(f"labels must lie in [0, {num_classes})")
    if class_names is None:
        class_names = [str(i) for i in range(num_classes)]
    if len(class_names) != num_classes:
        raise InvalidArgumentError(f"{len(class_names)} class names for {num_classes} classes")
    feats = _unit_rows(feats).astype(np.float32).astype(np.float64)
    return FeatureBank(feats, one_hot(labels, num_classes), tuple(class_names), fingerprint, config)


def build_bank(
    encoded_train: Iterable[tuple[Union[GlobalFeature, ArrayLike], int]],
    num_classes: int,
    class_names: Optional[Sequence[str]] = None,
    fingerprint: str = "",
    config: Optional[dict] = None,
) -> FeatureBank:
    rows, labels = [], []
    for feat, label in encoded_train:
        values = feat.values if isinstance(feat, GlobalFeature) else feat
        rows.append(np.asarray(values, dtype=np.float64).reshape(-1))
        labels.append(int(label))
    if not rows:
        raise InvalidArgumentError("cannot build a bank from no samples")
    if len({r.size for r in rows}) != 1:
        raise InvalidArgumentError("all bank features must have the same length")
    return bank_from_arrays(np.stack(rows), labels, num_classes, class_names, fingerprint, config)


def softmax(y: NDArray[np.float64]) -> NDArray[np.float64]:
    z = np.exp(y - y.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _scaled_scores(
    q: NDArray[np.float64], bank: FeatureBank, gamma: float
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Per-query logits divided by the largest row weight, plus the log of that divisor.

    The scaled logits keep the class ordering even when every raw weight
    underflows (large gamma, low similarity).
    """
    sim = q @ bank.features.T
    expo = -gamma * (1.0 - sim)
    shift = expo.max(axis=1)
    scaled = np.exp(expo - shift[:, None]) @ bank.label_matrix
    return scaled, shift, sim.max(axis=1)


def _prepare(features: ArrayLike, bank: FeatureBank, gamma: float) -> NDArray[np.float64]:
    if not gamma > 0:
        raise InvalidArgumentError(f"gamma must be positive; got {gamma}")
    q = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if q.shape[1] != bank.dim:
        raise InvalidArgumentError(f"feature length {q.shape[1]} != bank dimension {bank.dim}")
    return _unit_rows(q)


def similarity_logits(
    features: ArrayLike, bank: FeatureBank, gamma: float = DEFAULT_GAMMA
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Raw logits and top similarity for a ``(Q, F)`` batch of query features."""
    q = _prepare(features, bank, gamma)
    logits = np.empty((q.shape[0], bank.num_classes))
    top = np.empty(q.shape[0])
    for lo in range(0, q.shape[0], _CHUNK):
        sim = q[lo : lo + _CHUNK] @ bank.features.T
        logits[lo : lo + _CHUNK] = np.exp(-gamma * (1.0 - sim)) @ bank.label_matrix
        top[lo : lo + _CHUNK] = sim.max(axis=1)
    return logits, top


def classify(
    test_feature: Union[GlobalFeature, ArrayLike],
    bank: FeatureBank,
    gamma: float = DEFAULT_GAMMA,
    fingerprint: Optional[str] = None,
) -> ClassificationResult:
    """Score one feature against the bank.

    When ``fingerprint`` is given and differs from the bank's, the result
    carries a warning instead of failing.
    """
    values = test_feature.values if isinstance(test_feature, GlobalFeature) else test_feature
    q = _prepare(np.asarray(values, dtype=np.float64).reshape(1, -1), bank, gamma)
    scaled, shift, top = _scaled_scores(q, bank, gamma)
    with np.errstate(divide="ignore"):
        log_y = np.log(scaled[0]) + shift[0]
    y = np.exp(log_y)
    warning = None
    if fingerprint is not None and bank.fingerprint and fingerprint != bank.fingerprint:
        warning = (
            f"bank fingerprint {bank.fingerprint} differs from encoder fingerprint {fingerprint}"
        )
    return ClassificationResult(y, softmax(y), int(np.argmax(log_y)), float(top[0]), warning, log_y)


def predict(result: ClassificationResult) -> int:
    """Argmax of the logits; the lowest index wins a tie.

    Uses the log-domain logits when present so underflowed scores still rank.
    """
    scores = result.log_logits if result.log_logits is not None else result.logits
    return int(np.argmax(scores))


def predict_batch(
    features: ArrayLike, bank: FeatureBank, gamma: float = DEFAULT_GAMMA
) -> NDArray[np.intp]:
    q = _prepare(features, bank, gamma)
    out = np.empty(q.shape[0], dtype=np.intp)
    for lo in range(0, q.shape[0], _CHUNK):
        scaled, _, _ = _scaled_scores(q[lo : lo + _CHUNK], bank, gamma)
        out[lo : lo + _CHUNK] = np.argmax(scaled, axis=1)
    return out


def loo_accuracies(bank: FeatureBank, candidates: Sequence[float]) -> NDArray[np.float64]:
    """Leave-one-out accuracy of the bank against itself, one value per gamma."""
    m = bank.size
    if m < 2:
        raise InvalidArgumentError("leave-one-out needs at least two bank rows")
    gammas = [float(g) for g in candidates]
    if not gammas or min(gammas) <= 0:
        raise InvalidArgumentError("gamma candidates must be a non-empty list of positive reals")
    labels = bank.labels
    correct = np.zeros(len(gammas), dtype=np.int64)
    for lo in range(0, m, _CHUNK):
        hi = min(lo + _CHUNK, m)
        sim = bank.features[lo:hi] @ bank.features.T
        rows = np.arange(hi - lo)
        for gi, g in enumerate(gammas):
            expo = -g * (1.0 - sim)
            expo[rows, lo + rows] = -np.inf
            w = np.exp(expo - expo.max(axis=1, keepdims=True))
            pred = np.argmax(w @ bank.label_matrix, axis=1)
            correct[gi] += int(np.count_nonzero(pred == labels[lo:hi]))
    return correct / m


def select_gamma_loo(
    bank: FeatureBank, candidates: Sequence[float] = GAMMA_CANDIDATES
) -> tuple[float, float]:
    """Pick the gamma with the best leave-one-out accuracy (smallest on ties)."""
    accs = loo_accuracies(bank, candidates)
    best_gamma, best_acc = None, -1.0
    for g, a in sorted(zip((float(c) for c in candidates), accs)):
        if a > best_acc:
            best_gamma, best_acc = g, float(a)
    return best_gamma, best_acc


def meta_path(path: Union[str, Path]) -> Path:
    return Path(str(path) + ".meta")


def save_bank(bank: FeatureBank, path: Union[str, Path]) -> None:
    """Write the binary bank plus its ``.meta`` key=value sidecar."""
    path = Path(path)
    if bank.num_classes > 0xFFFF:
        raise InvalidArgumentError("class indices must fit in 16 bits")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(BANK_MAGIC, BANK_VERSION, bank.size, bank.num_classes, bank.dim))
        fh.write(bank.features.astype("<f4").tobytes(order="C"))
        fh.write(bank.labels.astype("<u2").tobytes())
    lines = [
        "format=PGNB",
        f"version={BANK_VERSION}",
        f"fingerprint={bank.fingerprint}",
        f"config={json.dumps(bank.config, sort_keys=True) if bank.config else ''}",
    ]
    lines += [f"class.{i}={name}" for i, name in enumerate(bank.class_names)]
    meta_path(path).write_text("\n".join(lines) + "\n")


def _read_meta(path: Path) -> dict[str, str]:
    out: dict[str, str] = {}
    if not path.exists():
        return out
    for line in path.read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise BankFormatError(f"{path}: malformed metadata line {line!r}")
        out[key.strip()] = value
    return out


def load_bank(path: Union[str, Path]) -> FeatureBank:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise BankFormatError(f"{path}: file too short for a bank header")
    magic, version, m, c, d = _HEADER.unpack_from(blob)
    if magic != BANK_MAGIC:
        raise BankFormatError(f"{path}: bad magic {magic!r}")
    if version != BANK_VERSION:
        raise BankFormatError(f"{path}: unsupported bank version {version}")
    expected = _HEADER.size + 4 * m * d + 2 * m
    if len(blob) != expected:
        raise BankFormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    off = _HEADER.size
    feats = np.frombuffer(blob, dtype="<f4", count=m * d, offset=off).reshape(m, d)
    labels = np.frombuffer(blob, dtype="<u2", count=m, offset=off + 4 * m * d)
    if m and labels.max() >= c:
        raise BankFormatError(f"{path}: label index out of range for {c} classes")

    meta = _read_meta(meta_path(path))
    names = [meta.get(f"class.{i}", str(i)) for i in range(c)]
    config = json.loads(meta["config"]) if meta.get("config") else None
    return FeatureBank(
        feats.astype(np.float64),
        one_hot(labels, c),
        tuple(names),
        meta.get("fingerprint", ""),
        config,
    )
