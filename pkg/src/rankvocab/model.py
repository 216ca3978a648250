"""TextCNN with attention over convolution branches.

Per document: embedding lookup -> spatial dropout -> one valid convolution
per filter size -> relu -> max over time -> attention across the pooled
branch vectors -> linear classifier.
"""

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from . import tensor as T
from .corpus import OOV
from .errors import InputError, ParseError
from .kvconfig import config_to_kv, kv_to_fields, read_kv, write_kv

ATTENTION_KINDS = ("additive", "dot")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    num_classes: int
    embed_dim: int = 100
    maxlen: int = 70
    filter_sizes: tuple[int, ...] = (2, 3, 4, 5)
    filters_per_size: int = 128
    attention_dim: int = 64
    dropout_p: float = 0.2
    trainable_embeddings: bool = True
    attention: str = "additive"

    def __post_init__(self):
        object.__setattr__(self, "filter_sizes", tuple(int(h) for h in self.filter_sizes))
        for name in ("vocab_size", "num_classes", "embed_dim", "maxlen", "filters_per_size", "attention_dim"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.filter_sizes:
            raise InputError("at least one filter size is required")
        if min(self.filter_sizes) < 1:
            raise InputError(f"filter sizes must be >= 1, got {self.filter_sizes}")
        if len(set(self.filter_sizes)) != len(self.filter_sizes):
            raise InputError(f"filter sizes must be distinct, got {self.filter_sizes}")
        if max(self.filter_sizes) > self.maxlen:
            raise InputError(f"filter size {max(self.filter_sizes)} exceeds maxlen {self.maxlen}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise InputError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.attention not in ATTENTION_KINDS:
            raise InputError(f"attention must be one of {ATTENTION_KINDS}, got {self.attention!r}")

    @property
    def num_branches(self):
        return len(self.filter_sizes)


def paper_scale_config(vocab_size, num_classes=20):
    """Configuration whose size lands on the reported parameter counts.

    With D=100 the embedding contributes 1.0M per 10K words; 320 filters
    per size over sizes 2..5 add ~0.48M, giving ~1.48M at 10K words and
    ~7.98M at 75K.
    """
    return ModelConfig(vocab_size=vocab_size, num_classes=num_classes, embed_dim=100,
                       filters_per_size=320, attention_dim=64)


def count_params(config):
    """Trainable parameter counts by component; ``total`` is their sum."""
    d, f, a, c = config.embed_dim, config.filters_per_size, config.attention_dim, config.num_classes
    embedding = (config.vocab_size + 2) * d
    conv = sum(f * h * d + f for h in config.filter_sizes)
    attention = a * f + a + a if config.attention == "additive" else f
    classifier = c * f + c
    return {
        "embedding": embedding,
        "conv": conv,
        "attention": attention,
        "classifier": classifier,
        "total": embedding + conv + attention + classifier,
    }


@dataclass
class ModelParams:
    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def items(self):
        return self.tensors.items()

    def names(self):
        return list(self.tensors)

    def copy(self):
        return ModelParams({k: T.Tensor(v.data.copy(), v.requires_grad) for k, v in self.tensors.items()})

    def size(self):
        return sum(t.size for t in self.tensors.values())


def conv_name(h):
    return f"conv.h{h}"


def _glorot(gen, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return gen.uniform(-limit, limit, size=shape)


def embedding_matrix(vocab, pretrained, dim, seed=0):
    """``[(|vocab|+2) x dim]`` rows: pad (zero), OOV, then one per vocabulary word."""
    emb = np.zeros((len(vocab) + 2, dim))
    emb[OOV] = rngmod.stream(seed, "embed", "<oov>").uniform(-0.05, 0.05, size=dim)
    for i, word in enumerate(vocab):
        if pretrained is not None and word in pretrained:
            emb[i + 2] = pretrained[word]
        else:
            emb[i + 2] = rngmod.stream(seed, "embed", word).uniform(-0.05, 0.05, size=dim)
    return emb


def init_params(config, pretrained=None, vocab=None, seed=0):
    """Initial parameters.

    Rows of vocabulary words found in ``pretrained`` are copied from it.
    Other words and the OOV row are drawn from U(-0.05, 0.05) with a stream
    keyed by the word itself, so the result does not depend on vocabulary
    order. The pad row is zero.
    """
    d, f = config.embed_dim, config.filters_per_size
    if vocab is not None and len(vocab) != config.vocab_size:
        raise InputError(f"vocabulary has {len(vocab)} words but vocab_size={config.vocab_size}")
    if pretrained is not None and pretrained.dim != d:
        raise InputError(f"pretrained dim {pretrained.dim} != embed_dim {d}")

    if vocab is None:
        vocab = [f"<{i}>" for i in range(config.vocab_size)]
    emb = embedding_matrix(vocab, pretrained, d, seed)
    tensors = {"embedding": T.Tensor(emb, requires_grad=config.trainable_embeddings)}
    for h in config.filter_sizes:
        gen = rngmod.stream(seed, "init", conv_name(h))
        tensors[conv_name(h) + ".filters"] = T.Tensor(_glorot(gen, (f, h, d), h * d, f), True)
        tensors[conv_name(h) + ".bias"] = T.Tensor(np.zeros(f), True)
    gen = rngmod.stream(seed, "init", "attention")
    if config.attention == "additive":
        a = config.attention_dim
        tensors["attention.W"] = T.Tensor(_glorot(gen, (a, f), f, a), True)
        tensors["attention.b"] = T.Tensor(np.zeros(a), True)
        tensors["attention.v"] = T.Tensor(_glorot(gen, (a,), a, 1), True)
    else:
        tensors["attention.q"] = T.Tensor(_glorot(gen, (f,), f, 1), True)
    gen = rngmod.stream(seed, "init", "classifier")
    c = config.num_classes
    tensors["classifier.W"] = T.Tensor(_glorot(gen, (c, f), f, c), True)
    tensors["classifier.b"] = T.Tensor(np.zeros(c), True)
    return ModelParams(tensors)


@dataclass
class ForwardTrace:
    logits: T.Tensor
    attention: T.Tensor
    branch_vectors: T.Tensor

    @property
    def alpha(self):
        return self.attention.data


def attention(branch_vectors, params, kind="additive"):
    """Score each branch vector, softmax the scores, return the weighted sum.

    Additive: ``e_b = v . tanh(W P_b + b)``. Dot: ``e_b = q . P_b / sqrt(F)``.
    Returns ``(z, alpha)``.
    """
    if kind == "additive":
        hidden = T.tanh(T.add_bias(T.matmul(branch_vectors, T.transpose(params["attention.W"])),
                                   params["attention.b"]))
        scores = T.matmul(hidden, params["attention.v"])
    else:
        f = branch_vectors.shape[1]
        scores = T.scale(T.matmul(branch_vectors, params["attention.q"]), 1.0 / math.sqrt(f))
    alpha = T.softmax(scores)
    return T.matmul(alpha, branch_vectors), alpha


def forward_doc(params, config, seq, mode="eval", rng=None):
    seq = np.asarray(seq, dtype=np.int64)
    if seq.shape != (config.maxlen,):
        raise InputError(f"sequence length {seq.shape} != maxlen {config.maxlen}")
    if seq.min() < 0 or seq.max() >= config.vocab_size + 2:
        raise InputError(f"token index out of range [0, {config.vocab_size + 2})")
    emb = T.embedding(params["embedding"], seq)
    if mode == "train" and config.dropout_p > 0.0:
        if rng is None:
            raise InputError("train-mode forward needs a random stream")
        emb = T.spatial_dropout(emb, config.dropout_p, mode, rng)
    pooled = []
    for h in config.filter_sizes:
        name = conv_name(h)
        conv = T.conv1d_valid(emb, params[name + ".filters"], params[name + ".bias"])
        pooled.append(T.max_over_time(T.relu(conv)))
    branches = T.stack(pooled)
    z, alpha = attention(branches, params, config.attention)
    logits = T.add_bias(T.matmul(params["classifier.W"], z), params["classifier.b"])
    return ForwardTrace(logits, alpha, branches)


def dropout_stream(seed, batch_id, doc_id):
    return rngmod.stream(seed, "spatial_dropout", batch_id, doc_id)


def forward(params, config, batch, mode="eval", seed=0, batch_id=0):
    """Run :func:`forward_doc` over a batch of encoded sequences.

    In train mode, document ``i`` of batch ``batch_id`` draws its dropout
    mask from a stream keyed by ``(seed, batch_id, i)``.
    """
    traces = []
    for i, seq in enumerate(batch):
        rng = dropout_stream(seed, batch_id, i) if mode == "train" else None
        traces.append(forward_doc(params, config, seq, mode, rng))
    return traces


def predict(params, config, batch):
    return np.array([int(np.argmax(t.logits.data)) for t in forward(params, config, batch)], dtype=np.int64)


def drop_branch(params, config, h):
    """Remove the filter-size-``h`` branch; returns ``(params, config)``."""
    if h not in config.filter_sizes:
        raise InputError(f"no branch with filter size {h}")
    if config.num_branches == 1:
        raise InputError("cannot remove the only branch")
    sizes = tuple(s for s in config.filter_sizes if s != h)
    prefix = conv_name(h) + "."
    kept = {k: v for k, v in params.items() if not k.startswith(prefix)}
    return ModelParams(kept), replace(config, filter_sizes=sizes)


# Checkpoints: <dir>/manifest.txt (config + param shapes) and <dir>/<name>.f64
# holding raw little-endian float64 data.

def save_checkpoint(path, params, config):
    os.makedirs(path, exist_ok=True)
    items = {f"config.{k}": v for k, v in config_to_kv(config).items()}
    for name, t in params.items():
        items[f"param.{name}"] = ",".join(str(s) for s in t.shape)
        t.data.astype("<f8").tofile(os.path.join(path, name + ".f64"))
    write_kv(os.path.join(path, "manifest.txt"), items)


def load_checkpoint(path):
    items = read_kv(os.path.join(path, "manifest.txt"))
    cfg_items = {k[len("config."):]: v for k, v in items.items() if k.startswith("config.")}
    config = ModelConfig(**kv_to_fields(ModelConfig, cfg_items, strict=True))
    tensors = {}
    for key, shape_text in items.items():
        if not key.startswith("param."):
            continue
        name = key[len("param."):]
        shape = tuple(int(s) for s in shape_text.split(",") if s)
        data = np.fromfile(os.path.join(path, name + ".f64"), dtype="<f8")
        if data.size != int(np.prod(shape)):
            raise ParseError(f"parameter {name}: expected {shape}, file has {data.size} values", path)
        trainable = config.trainable_embeddings if name == "embedding" else True
        tensors[name] = T.Tensor(data.reshape(shape).astype(np.float64), trainable)
    return ModelParams(tensors), config

