"""The shallow CNN: five convolution groups with max-over-time pooling, one
ReLU dense layer and a 3-way softmax, trained with Adam and two annealing
restarts.

Model file layout (little-endian)::

    b"SCNN" | uint32 format version | uint64 header length | JSON header | tensors

The JSON header carries hyperparameters, dimensions, seed, dtype, the tensor
names and shapes in storage order and, for trained models, the training
history. Tensors follow as raw row-major arrays in that order."""

import json
import logging
import math
import struct
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Extra, ValidationError, validator

from .embeddings import DocMatrix
from .errors import ConfigError, DataError, NumericError
from .identifiers import make_rng
from .metrics import score_probs
from .nn_core import (
    AdamState,
    NetworkCache,
    N_CLASSES,
    adam_step,
    backward,
    conv_group_forward,
    conv_param_names,
    dense_forward,
    dropout,
    mean_cross_entropy,
    softmax,
    xavier_init
)


logger = logging.getLogger(__name__)


N_FILTER_GROUPS = 5
MAX_RESTARTS = 2

STANDARD_DOMAINS = {
    "adam_b2": [0.9, 0.999],
    "n_dense_output": [100, 200, 300, 400],
    "keep_prob": [0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
    "batch_size": [50, 100, 150],
    "learning_rate": [0.0001, 0.001],
    "word_embedding": ["godin", "shin"],
    "n_filters": [100, 200, 300, 400],
    "filter_sizes": [
        [1, 2, 3, 4, 5],
        [2, 3, 4, 5, 6],
        [3, 4, 5, 6, 7],
        [1, 2, 2, 2, 3],
        [2, 3, 3, 3, 4],
        [3, 4, 4, 4, 5],
        [4, 5, 5, 5, 6],
    ],
}

MODEL_MAGIC = b"SCNN"
MODEL_FORMAT_VERSION = 1


class HyperParams(BaseModel):
    adam_b2: float
    n_dense_output: int
    keep_prob: float
    batch_size: int
    learning_rate: float
    word_embedding: str
    n_filters: int
    filter_sizes: Tuple[int, ...]

    class Config:
        extra = Extra.forbid
        allow_mutation = False


class TrainSchedule(BaseModel):
    max_epochs: int = 30
    patience: int = 2
    restarts_allowed: int = 2
    lr_decay: float = 0.5

    @validator("restarts_allowed")
    def restarts_in_range(cls, v):
        if not 0 <= v <= MAX_RESTARTS:
            raise ValueError(f"restarts_allowed must be between 0 and {MAX_RESTARTS}, got {v}")
        return v


class ShallowCNN(BaseModel):
    hp: HyperParams
    embedding_dim: int
    init_seed: int
    params: Dict[str, np.ndarray]

    class Config:
        arbitrary_types_allowed = True

    @property
    def dtype(self):
        return self.params["out_b"].dtype

    @property
    def pooled_length(self) -> int:
        return N_FILTER_GROUPS * self.hp.n_filters

    def with_params(self, params: Dict[str, np.ndarray]) -> "ShallowCNN":
        return ShallowCNN(hp=self.hp, embedding_dim=self.embedding_dim, init_seed=self.init_seed, params=params)


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    dev_score: float
    lr: float


class TrainedModel(BaseModel):
    weights: ShallowCNN
    best_dev_score: float
    epochs_run: int
    restart_count: int
    history: List[EpochRecord]


class LabeledDocs(BaseModel):
    """Embedded documents (n x length x dim) with their 1-based gold labels."""
    docs: np.ndarray
    labels: np.ndarray

    class Config:
        arbitrary_types_allowed = True

    @classmethod
    def from_pairs(cls, pairs: Sequence[Tuple[DocMatrix, int]]) -> "LabeledDocs":
        docs = np.stack([doc.values for doc, _ in pairs])
        labels = np.array([label for _, label in pairs], dtype=np.int64)
        return cls(docs=docs, labels=labels)

    def subset(self, indices) -> "LabeledDocs":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDocs(docs=self.docs[indices], labels=self.labels[indices])

    def __len__(self):
        return len(self.labels)


def hyperparam_problems(hp: HyperParams, restricted: bool = True) -> List[str]:
    """Names of fields (with reasons) that make hp unusable. When restricted,
    every field must lie in its standard search-space domain."""

    problems = []

    if len(hp.filter_sizes) != N_FILTER_GROUPS:
        problems.append(f"filter_sizes: need exactly {N_FILTER_GROUPS} widths, got {len(hp.filter_sizes)}")
    if any(h < 1 for h in hp.filter_sizes):
        problems.append("filter_sizes: widths must be at least 1")
    if not 0 < hp.adam_b2 < 1:
        problems.append(f"adam_b2: {hp.adam_b2} not in (0, 1)")
    if not 0 < hp.keep_prob <= 1:
        problems.append(f"keep_prob: {hp.keep_prob} not in (0, 1]")
    if hp.learning_rate <= 0:
        problems.append(f"learning_rate: {hp.learning_rate} not positive")
    for name in ("n_dense_output", "batch_size", "n_filters"):
        if getattr(hp, name) < 1:
            problems.append(f"{name}: must be at least 1")

    if restricted:
        for name, domain in STANDARD_DOMAINS.items():
            value = getattr(hp, name)
            if name == "filter_sizes":
                value = list(value)
            if value not in domain:
                problems.append(f"{name}: {value} outside the standard search space")

    return problems


def check_hyperparams(hp: HyperParams, restricted: bool = True):

    problems = hyperparam_problems(hp, restricted)
    if problems:
        raise ConfigError("invalid hyperparameters: " + "; ".join(problems))


def load_hyperparams(fpath: Union[str, Path]) -> HyperParams:
    """Read a JSON file whose keys are exactly the search-space field names."""

    try:
        return HyperParams.parse_file(fpath)
    except ValidationError as e:
        raise ConfigError(f"{fpath}: {e}")
    except (json.JSONDecodeError, ValueError) as e:
        raise ConfigError(f"{fpath}: not valid hyperparameter JSON ({e})")


def param_shapes(hp: HyperParams, embedding_dim: int) -> Dict[str, Tuple[int, ...]]:
    """Parameter shapes in storage order."""

    shapes = {}
    for group, width in enumerate(hp.filter_sizes):
        w_name, b_name = conv_param_names(group)
        shapes[w_name] = (width, embedding_dim, hp.n_filters)
        shapes[b_name] = (hp.n_filters,)

    pooled = len(hp.filter_sizes) * hp.n_filters
    shapes["dense_W"] = (pooled, hp.n_dense_output)
    shapes["dense_b"] = (hp.n_dense_output,)
    shapes["out_W"] = (hp.n_dense_output, N_CLASSES)
    shapes["out_b"] = (N_CLASSES,)

    return shapes


def parameter_count(hp: HyperParams, embedding_dim: int) -> int:

    conv = sum((width * embedding_dim + 1) * hp.n_filters for width in hp.filter_sizes)
    dense = (N_FILTER_GROUPS * hp.n_filters + 1) * hp.n_dense_output
    output = (hp.n_dense_output + 1) * N_CLASSES

    return conv + dense + output


def build_model(
        hp: HyperParams,
        embedding_dim: int,
        seed: int,
        restricted: bool = True,
        dtype=np.float32
    ) -> ShallowCNN:
    """Xavier-initialised weights and zero biases. Every weight tensor has its
    own substream of seed, so groups sharing a width still start apart."""

    if embedding_dim < 1:
        raise ConfigError(f"embedding dimension must be at least 1, got {embedding_dim}")
    check_hyperparams(hp, restricted)

    params = {}
    for name, shape in param_shapes(hp, embedding_dim).items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape, dtype=dtype)
        elif name.startswith("conv"):
            width, dim, n_filters = shape
            params[name] = xavier_init(width * dim, n_filters, shape, make_rng(seed, "init", name), dtype)
        else:
            params[name] = xavier_init(shape[0], shape[1], shape, make_rng(seed, "init", name), dtype)

    return ShallowCNN(hp=hp, embedding_dim=embedding_dim, init_seed=seed, params=params)


def forward_params(
        params: Dict[str, np.ndarray],
        hp: HyperParams,
        docs: np.ndarray,
        training: bool,
        rng: Optional[np.random.Generator]
    ) -> Tuple[np.ndarray, NetworkCache]:

    pooled_groups, conv_caches = [], []
    for group in range(len(hp.filter_sizes)):
        w_name, b_name = conv_param_names(group)
        pooled, cache = conv_group_forward(docs, params[w_name], params[b_name])
        pooled_groups.append(pooled)
        conv_caches.append(cache)

    pooled = np.concatenate(pooled_groups, axis=-1)
    pooled, pooled_mask = dropout(pooled, hp.keep_prob, rng, training)

    hidden, hidden_cache = dense_forward(pooled, params["dense_W"], params["dense_b"], "relu")
    hidden, hidden_mask = dropout(hidden, hp.keep_prob, rng, training)

    logits, output_cache = dense_forward(hidden, params["out_W"], params["out_b"], "identity")
    probs = softmax(logits)

    cache = NetworkCache(
        conv=conv_caches,
        pooled_mask=pooled_mask,
        hidden=hidden_cache,
        hidden_mask=hidden_mask,
        output=output_cache,
        probs=probs
    )

    return probs, cache


def forward(
        model: ShallowCNN,
        doc,
        training: bool = False,
        rng: Optional[np.random.Generator] = None
    ) -> Tuple[np.ndarray, NetworkCache]:
    """Class probabilities for one document (DocMatrix or length x dim array)
    or a batch (n x length x dim). Dropout is only applied when training."""

    values = np.asarray(getattr(doc, "values", doc))
    if values.shape[-1] != model.embedding_dim:
        raise ConfigError(f"document dimension {values.shape[-1]} does not match model dimension {model.embedding_dim}")
    if training and rng is None:
        raise ConfigError("training forward pass needs an rng for dropout")

    return forward_params(model.params, model.hp, values.astype(model.dtype, copy=False), training, rng)


def predict_proba(model: ShallowCNN, docs, batch_size: int = 256) -> np.ndarray:
    """Inference-mode probabilities, one row per document."""

    if isinstance(docs, np.ndarray):
        batch = docs
    else:
        docs = list(docs)
        if not docs:
            return np.zeros((0, N_CLASSES), dtype=model.dtype)
        batch = np.stack([np.asarray(getattr(doc, "values", doc)) for doc in docs])

    if len(batch) == 0:
        return np.zeros((0, N_CLASSES), dtype=model.dtype)

    chunks = [
        forward(model, batch[start:start + batch_size])[0]
        for start in range(0, len(batch), batch_size)
    ]

    return np.concatenate(chunks)


DevScorer = Callable[[ShallowCNN], float]


def train(
        model: ShallowCNN,
        train_set: LabeledDocs,
        dev_set: LabeledDocs,
        sched: TrainSchedule,
        seed: int,
        dev_scorer: Optional[DevScorer] = None,
        label: str = "model"
    ) -> TrainedModel:
    """Mini-batch Adam with early stopping on the dev score.

    After `patience` epochs without a strictly better dev score, the best
    weights so far are restored, the learning rate is multiplied by lr_decay
    and the Adam moments are reset; once `restarts_allowed` restarts are used
    up, the next stagnation ends training. The best weights are returned."""

    if len(dev_set) == 0:
        raise DataError(f"{label}: empty dev set")
    if len(train_set) == 0:
        raise DataError(f"{label}: empty training set")
    if sched.max_epochs < 1 or sched.patience < 1:
        raise ConfigError(f"{label}: max_epochs and patience must be at least 1")

    hp = model.hp
    if dev_scorer is None:
        def dev_scorer(candidate: ShallowCNN) -> float:
            return score_probs(dev_set.labels, predict_proba(candidate, dev_set.docs))

    docs = train_set.docs.astype(model.dtype, copy=False)
    labels = train_set.labels

    params = dict(model.params)
    lr = hp.learning_rate
    state = AdamState.fresh(params, hp.adam_b2)

    best_score = -math.inf
    best_params = params
    stagnant = 0
    restarts = 0
    history = []

    for epoch in range(1, sched.max_epochs + 1):
        order = make_rng(seed, "shuffle", epoch).permutation(len(labels))
        dropout_rng = make_rng(seed, "dropout", epoch)

        loss_total = 0.0
        for batch_number, start in enumerate(range(0, len(order), hp.batch_size)):
            indices = order[start:start + hp.batch_size]
            probs, cache = forward_params(params, hp, docs[indices], True, dropout_rng)

            loss = mean_cross_entropy(probs, labels[indices])
            if not math.isfinite(loss):
                raise NumericError(
                    f"{label}: non-finite training loss at epoch {epoch}, batch {batch_number} (lr {lr})"
                )

            grads = backward(params, cache, labels[indices])
            params, state = adam_step(params, grads, state, lr)
            loss_total += loss * len(indices)

        train_loss = loss_total / len(labels)
        dev_score = float(dev_scorer(model.with_params(params)))
        history.append(EpochRecord(epoch=epoch, train_loss=train_loss, dev_score=dev_score, lr=lr))
        logger.info(f"{label}: epoch {epoch} loss {train_loss:.4f} dev {dev_score:.4f} lr {lr:g}")

        if dev_score > best_score:
            best_score = dev_score
            best_params = params
            stagnant = 0
            continue

        stagnant += 1
        if stagnant < sched.patience:
            continue

        if restarts < sched.restarts_allowed:
            restarts += 1
            stagnant = 0
            params = best_params
            lr = lr * sched.lr_decay
            state = AdamState.fresh(params, hp.adam_b2)
            logger.info(f"{label}: annealing restart {restarts} after epoch {epoch}, lr now {lr:g}")
        else:
            logger.info(f"{label}: stopping after epoch {epoch}, best dev {best_score:.4f}")
            break

    return TrainedModel(
        weights=model.with_params(best_params),
        best_dev_score=best_score,
        epochs_run=len(history),
        restart_count=restarts,
        history=history
    )


def model_header(model: Union[ShallowCNN, TrainedModel]) -> dict:

    weights = model.weights if isinstance(model, TrainedModel) else model

    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "hp": json.loads(weights.hp.json()),
        "embedding_dim": weights.embedding_dim,
        "init_seed": weights.init_seed,
        "dtype": np.dtype(weights.dtype).name,
        "tensors": [{"name": name, "shape": list(p.shape)} for name, p in weights.params.items()],
        "training": None,
    }

    if isinstance(model, TrainedModel):
        header["training"] = {
            "best_dev_score": model.best_dev_score,
            "epochs_run": model.epochs_run,
            "restart_count": model.restart_count,
            "history": [json.loads(record.json()) for record in model.history],
        }

    return header


def save_model(model: Union[ShallowCNN, TrainedModel], fpath: Union[str, Path]):

    weights = model.weights if isinstance(model, TrainedModel) else model
    header = json.dumps(model_header(model), sort_keys=True).encode("utf-8")
    storage = np.dtype(weights.dtype).newbyteorder("<")

    with open(fpath, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<IQ", MODEL_FORMAT_VERSION, len(header)))
        fh.write(header)
        for p in weights.params.values():
            fh.write(np.ascontiguousarray(p, dtype=storage).tobytes(order="C"))


def load_model(fpath: Union[str, Path]) -> Union[ShallowCNN, TrainedModel]:
    """Inverse of save_model: a TrainedModel when training metadata is present,
    otherwise a bare ShallowCNN."""

    content = Path(fpath).read_bytes()

    if content[:4] != MODEL_MAGIC:
        raise DataError(f"{fpath}: not a model file")
    if len(content) < 16:
        raise DataError(f"{fpath}: truncated model file")

    version, header_length = struct.unpack("<IQ", content[4:16])
    if version > MODEL_FORMAT_VERSION:
        raise DataError(
            f"{fpath}: model format version {version} is newer than supported version {MODEL_FORMAT_VERSION}"
        )

    offset = 16 + header_length
    if len(content) < offset:
        raise DataError(f"{fpath}: truncated model file")
    try:
        header = json.loads(content[16:offset].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{fpath}: unreadable model header ({e})")

    try:
        return model_from_header(header, content, offset, fpath)
    except DataError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{fpath}: invalid model header ({type(e).__name__}: {e})")


def model_from_header(header: dict, content: bytes, offset: int, fpath) -> Union[ShallowCNN, TrainedModel]:

    storage = np.dtype(header["dtype"]).newbyteorder("<")
    params = {}
    for tensor in header["tensors"]:
        shape = tuple(tensor["shape"])
        n_bytes = int(np.prod(shape, dtype=np.int64)) * storage.itemsize
        if len(content) < offset + n_bytes:
            raise DataError(f"{fpath}: truncated model file at tensor {tensor['name']}")
        values = np.frombuffer(content, dtype=storage, count=n_bytes // storage.itemsize, offset=offset)
        params[tensor["name"]] = values.reshape(shape).astype(np.dtype(header["dtype"]))
        offset += n_bytes

    if offset != len(content):
        raise DataError(f"{fpath}: {len(content) - offset} unexpected trailing bytes")

    weights = ShallowCNN(
        hp=HyperParams(**header["hp"]),
        embedding_dim=header["embedding_dim"],
        init_seed=header["init_seed"],
        params=params
    )

    training = header["training"]
    if training is None:
        return weights

    return TrainedModel(
        weights=weights,
        best_dev_score=training["best_dev_score"],
        epochs_run=training["epochs_run"],
        restart_count=training["restart_count"],
        history=[EpochRecord(**record) for record in training["history"]]
    )
