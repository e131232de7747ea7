"""Mini-batch training loop and checkpoint persistence.

Adam with global-norm gradient clipping, teacher forcing, seeded shuffling
and dropout.  Checkpoints are a versioned binary container that round-trips
bit-exactly: magic, JSON metadata, raw little-endian float64 tensors, and a
trailing SHA-256 checksum.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np

from .corpus import PreparedDataset, PreprocTables, Vocabulary
from .embeddings import EmbeddingTable, vocab_matrix
from .model import ModelParams, example_loss, init_params, library_weights, named_parameters
from .tensor import Tape, Tensor, add, backward, scale

__all__ = [
    "TrainConfig",
    "AdamState",
    "TrainingError",
    "CheckpointError",
    "ModelCheckpoint",
    "adam_step",
    "clip_gradients",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_bytes",
    "checkpoint_from_bytes",
]

CHECKPOINT_MAGIC = b"LSCKPT01"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    """Training hyperparameters plus the model and sequence dimensions."""

    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    clip_max_norm: float = 5.0
    dropout_p: float = 0.3
    batch_size: int = 32
    max_epochs: int = 10
    seed: int = 0
    max_src: int = 32
    max_tgt: int = 16
    embed_dim: int = 200
    enc_hidden: int = 128
    dec_hidden: int = 128
    lib_embed: int = 64

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        if self.clip_max_norm <= 0:
            raise ValueError("clip_max_norm must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if min(self.max_src, self.max_tgt) < 1:
            raise ValueError("sequence limits must be >= 1")
        if min(self.embed_dim, self.enc_hidden, self.dec_hidden, self.lib_embed) < 1:
            raise ValueError("model dimensions must be >= 1")
        if not 0.0 < self.adam_beta1 < 1.0 or not 0.0 < self.adam_beta2 < 1.0:
            raise ValueError("Adam betas must be in (0, 1)")
        if self.adam_epsilon <= 0:
            raise ValueError("adam_epsilon must be positive")


@dataclass
class AdamState:
    """First and second moment estimates, one array per parameter name."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls(
            m={name: np.zeros(p.shape) for name, p in params.items()},
            v={name: np.zeros(p.shape) for name, p in params.items()},
        )


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    t: int,
    cfg: TrainConfig,
) -> tuple[dict[str, Tensor], AdamState]:
    """One Adam update (in place on the parameter tensors), step index t >= 1."""
    if t < 1:
        raise ValueError("step index must be >= 1")
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / (1.0 - b1**t)
        v_hat = state.v[name] / (1.0 - b2**t)
        p.data -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Scale all gradients by max_norm/norm when the global L2 norm exceeds
    max_norm; directions are preserved."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return grads
    factor = max_norm / total
    return {name: g * factor for name, g in grads.items()}


@dataclass
class ModelCheckpoint:
    """Everything needed to resume or serve a trained model."""

    config: TrainConfig
    params: ModelParams
    word_embed: np.ndarray  # frozen source-embedding rows, one per word id
    word_vocab: Vocabulary
    lib_vocab: Vocabulary
    lib_freq: dict[str, int]
    tables: PreprocTables
    epochs: int
    final_loss: float | None


def train(data: PreparedDataset, cfg: TrainConfig, table: EmbeddingTable) -> ModelCheckpoint:
    """Train on the encoded dataset and return the final checkpoint.

    Each epoch shuffles the examples with the run's seeded generator, then
    walks mini-batches: teacher-forced forward with dropout, weighted loss
    averaged over the batch, backward, global-norm clipping, Adam.  Runs
    are bit-reproducible for a given (seed, dataset, config).
    """
    if not data.examples:
        raise ValueError("cannot train on an empty dataset")
    if table.dimension != cfg.embed_dim:
        raise ValueError(
            f"embedding dimension {table.dimension} does not match configured {cfg.embed_dim}"
        )
    for ex in data.examples:
        if ex.source.length < 1:
            raise ValueError(f"example {ex.name!r} has an empty source")
        if ex.target.length < 1:
            raise ValueError(f"example {ex.name!r} has an empty target")

    rng = np.random.default_rng(cfg.seed)
    weights = library_weights(data.lib_freq, data.lib_vocab)
    params = init_params(
        cfg.embed_dim,
        cfg.enc_hidden,
        cfg.dec_hidden,
        cfg.lib_embed,
        len(data.lib_vocab),
        weights,
        rng,
    )
    named = named_parameters(params)
    state = AdamState.for_params(named)

    word_embed = vocab_matrix(data.word_vocab, table)
    sources = [Tensor(word_embed[np.array(ex.source.ids)]) for ex in data.examples]
    lengths = [ex.source.length for ex in data.examples]
    targets = [list(ex.target.ids[: ex.target.length]) for ex in data.examples]

    n = len(data.examples)
    step = 0
    final_loss: float | None = None
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        epoch_total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            with Tape() as tape:
                total: Tensor | None = None
                for idx in batch:
                    loss_i = example_loss(
                        sources[idx], lengths[idx], targets[idx], params, cfg.dropout_p, rng
                    )
                    total = loss_i if total is None else add(total, loss_i)
                batch_loss = scale(total, 1.0 / len(batch))
            loss_value = batch_loss.item()
            if not np.isfinite(loss_value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size + 1}"
                )
            backward(tape, batch_loss)
            grads = {}
            for name, p in named.items():
                g = tape.gradient(p)
                grads[name] = g if g is not None else np.zeros(p.shape)
            grads = clip_gradients(grads, cfg.clip_max_norm)
            step += 1
            adam_step(named, grads, state, step, cfg)
            epoch_total += loss_value * len(batch)
        final_loss = epoch_total / n
        print(f"epoch {epoch} loss {final_loss!r}")

    return ModelCheckpoint(
        config=cfg,
        params=params,
        word_embed=word_embed,
        word_vocab=data.word_vocab,
        lib_vocab=data.lib_vocab,
        lib_freq=dict(data.lib_freq),
        tables=data.tables,
        epochs=cfg.max_epochs,
        final_loss=final_loss,
    )


def _checkpoint_tensors(ckpt: ModelCheckpoint) -> dict[str, np.ndarray]:
    arrays = {name: p.data for name, p in named_parameters(ckpt.params).items()}
    arrays["class_weights"] = ckpt.params.class_weights
    arrays["word_embed"] = ckpt.word_embed
    return arrays


def checkpoint_bytes(ckpt: ModelCheckpoint) -> bytes:
    """Serialize to the binary container format."""
    arrays = _checkpoint_tensors(ckpt)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(ckpt.config),
        "epochs": ckpt.epochs,
        "final_loss": ckpt.final_loss,
        "word_vocab": list(ckpt.word_vocab.regular_tokens()),
        "lib_vocab": list(ckpt.lib_vocab.regular_tokens()),
        "lib_freq": sorted(ckpt.lib_freq.items()),
        "tables": {
            "stopwords": sorted(ckpt.tables.stopwords),
            "domain_vocab": (
                None if ckpt.tables.domain_vocab is None else sorted(ckpt.tables.domain_vocab)
            ),
            "lemma": sorted(ckpt.tables.lemma_table.items()),
        },
        "tensors": [[name, list(arr.shape)] for name, arr in arrays.items()],
    }
    header_bytes = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(arr, dtype=np.float64).tobytes() for arr in arrays.values()
    )
    body = CHECKPOINT_MAGIC + struct.pack("<Q", len(header_bytes)) + header_bytes + payload
    return body + hashlib.sha256(body).digest()


def _params_from_arrays(arrays: dict[str, np.ndarray]) -> ModelParams:
    from .model import AttentionParams, LstmParams, OutputParams

    def lstm(prefix: str) -> LstmParams:
        kwargs = {}
        for gate in ("i", "f", "o", "g"):
            for kind in ("w", "u", "b"):
                kwargs[f"{kind}_{gate}"] = Tensor(arrays[f"{prefix}.{kind}_{gate}"])
        return LstmParams(**kwargs)

    return ModelParams(
        enc_fwd=lstm("enc_fwd"),
        enc_bwd=lstm("enc_bwd"),
        dec=lstm("dec"),
        attn=AttentionParams(
            w_a=Tensor(arrays["attn.w_a"]),
            u_a=Tensor(arrays["attn.u_a"]),
            v_a=Tensor(arrays["attn.v_a"]),
        ),
        out=OutputParams(
            w_d=Tensor(arrays["out.w_d"]),
            v_d=Tensor(arrays["out.v_d"]),
            w_o=Tensor(arrays["out.w_o"]),
        ),
        init_w=Tensor(arrays["init_w"]),
        init_b=Tensor(arrays["init_b"]),
        emb=Tensor(arrays["emb"]),
        bos=Tensor(arrays["bos"]),
        class_weights=arrays["class_weights"],
    )


def checkpoint_from_bytes(data: bytes) -> ModelCheckpoint:
    """Parse the binary container; raises CheckpointError on any corruption."""
    overhead = len(CHECKPOINT_MAGIC) + 8 + 32
    if len(data) < overhead:
        raise CheckpointError("truncated checkpoint file")
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic bytes: not a checkpoint file of this format version")
    body, checksum = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != checksum:
        raise CheckpointError("checksum mismatch: corrupted checkpoint")
    (header_len,) = struct.unpack_from("<Q", data, len(CHECKPOINT_MAGIC))
    header_start = len(CHECKPOINT_MAGIC) + 8
    if header_start + header_len > len(body):
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(body[header_start : header_start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from None
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {header.get('format_version')!r}"
        )

    arrays: dict[str, np.ndarray] = {}
    offset = header_start + header_len
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(body):
            raise CheckpointError("truncated tensor payload")
        arrays[name] = np.frombuffer(body, dtype="<f8", count=count, offset=offset).reshape(
            shape
        ).copy()
        offset += nbytes
    if offset != len(body):
        raise CheckpointError("trailing bytes after tensor payload")

    tables = PreprocTables(
        stopwords=frozenset(header["tables"]["stopwords"]),
        domain_vocab=(
            None
            if header["tables"]["domain_vocab"] is None
            else frozenset(header["tables"]["domain_vocab"])
        ),
        lemma_table=dict(header["tables"]["lemma"]),
    )
    return ModelCheckpoint(
        config=TrainConfig(**header["config"]),
        params=_params_from_arrays(arrays),
        word_embed=arrays["word_embed"],
        word_vocab=Vocabulary(header["word_vocab"]),
        lib_vocab=Vocabulary(header["lib_vocab"]),
        lib_freq=dict((k, int(v)) for k, v in header["lib_freq"]),
        tables=tables,
        epochs=int(header["epochs"]),
        final_loss=header["final_loss"],
    )


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    """Write atomically: serialize fully, then temp-file + rename."""
    data = checkpoint_bytes(ckpt)
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> ModelCheckpoint:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
