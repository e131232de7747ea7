"""Inference-time generation: greedy decoding and beam search.

Both honor the repeat mask, so no sequence ever contains a duplicate
library, and neither PAD nor UNK is ever emitted (selection only considers
library ids and EOS).  Decoding is read-only over the checkpoint and never
applies dropout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import EOS_ID, N_RESERVED, PAD_ID, UNK_ID, process_description
from .model import BOS, decoder_step, encode, initial_decoder_state
from .tensor import Tensor
from .trainer import ModelCheckpoint

__all__ = ["NoSignalError", "RecommendResult", "greedy_decode", "beam_search", "recommend"]


class NoSignalError(ValueError):
    """The description preprocesses to zero tokens; nothing to decode from."""


@dataclass(frozen=True)
class RecommendResult:
    """Ranked recommendations with the probability each library had at the
    step it was emitted.  `truncated` is set when the decode finished
    (EOS) before reaching the requested k."""

    items: tuple[tuple[str, float], ...]
    requested_k: int
    truncated: bool


def _embed_source(tokens, ckpt: ModelCheckpoint) -> tuple[Tensor, int]:
    if not tokens:
        raise ValueError("cannot decode from an empty token list")
    ids = [ckpt.word_vocab.id(tok) for tok in tokens][: ckpt.config.max_src]
    return Tensor(ckpt.word_embed[np.array(ids)]), len(ids)


def _start_state(tokens, ckpt: ModelCheckpoint):
    x, valid_len = _embed_source(tokens, ckpt)
    enc_out = encode(x, valid_len, ckpt.params.enc_fwd, ckpt.params.enc_bwd)
    s_t, cell_t, context_t = initial_decoder_state(enc_out, valid_len, ckpt.params)
    return enc_out, valid_len, s_t, cell_t, context_t


def _best_candidate(y: np.ndarray, emitted: set[int]) -> int:
    """Argmax over EOS plus not-yet-emitted library ids (ties: lowest id)."""
    probs = y.copy()
    probs[PAD_ID] = -1.0
    probs[UNK_ID] = -1.0
    for i in emitted:
        probs[i] = -1.0
    return int(np.argmax(probs))


def _greedy_rollout(state, ckpt: ModelCheckpoint, max_steps: int):
    """Follow the argmax at every step; returns (ids, per-step probs,
    completed, eos_prob) where `completed` means EOS was chosen in time."""
    enc_out, valid_len, s_t, cell_t, context_t = state
    emitted: list[int] = []
    probs: list[float] = []
    mask: set[int] = set()
    prev = BOS
    for _ in range(max_steps):
        s_t, cell_t, context_t, _, y_t = decoder_step(
            prev, context_t, s_t, cell_t, enc_out, valid_len, mask, ckpt.params
        )
        choice = _best_candidate(y_t.data, mask)
        if choice == EOS_ID:
            return emitted, probs, True, float(y_t.data[EOS_ID])
        emitted.append(choice)
        probs.append(float(y_t.data[choice]))
        mask.add(choice)
        prev = choice
    return emitted, probs, False, 0.0


def greedy_decode(tokens, ckpt: ModelCheckpoint, max_steps: int) -> list[str]:
    """Emit the argmax library at every step until EOS or max_steps.

    Emission order is the ranking: the first library is the most
    confident head of the sequence.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    emitted, _, _, _ = _greedy_rollout(_start_state(tokens, ckpt), ckpt, max_steps)
    return [ckpt.lib_vocab.token(i) for i in emitted]


@dataclass
class _Hypothesis:
    seq: tuple[int, ...]
    probs: tuple[float, ...]
    score: float
    s: Tensor
    cell: Tensor
    context: Tensor


def _beam(tokens, ckpt: ModelCheckpoint, beam_width: int, max_steps: int):
    """Beam search core; returns (library ids, per-step probabilities).

    Hypotheses are scored by the sum of log-probabilities of their
    emissions.  EOS candidates compete inside the beam and retire the
    hypothesis into a completed pool that is never discarded; the answer
    is the best completed hypothesis, falling back to the best live one
    when nothing completed within max_steps.  The pool is pre-seeded with
    the greedy rollout's completion, so the returned score never falls
    below greedy's regardless of width.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    state = _start_state(tokens, ckpt)
    enc_out, valid_len, s_t, cell_t, context_t = state
    vocab_n = ckpt.params.lib_vocab_size
    regular = range(N_RESERVED, vocab_n)

    live = [_Hypothesis((), (), 0.0, s_t, cell_t, context_t)]
    pool: list[tuple[float, tuple[int, ...], tuple[float, ...]]] = []
    seed_ids, seed_probs, seed_done, seed_eos = _greedy_rollout(state, ckpt, max_steps)
    if seed_done:
        steps = seed_probs + [seed_eos]
        score = sum(math.log(p) if p > 0.0 else -math.inf for p in steps)
        pool.append((score, tuple(seed_ids), tuple(steps)))

    for _ in range(max_steps):
        candidates = []
        for hyp in live:
            prev = hyp.seq[-1] if hyp.seq else BOS
            s_n, cell_n, ctx_n, _, y_t = decoder_step(
                prev, hyp.context, hyp.s, hyp.cell, enc_out, valid_len, set(hyp.seq), ckpt.params
            )
            yd = y_t.data
            options = [EOS_ID] + [i for i in regular if i not in hyp.seq]
            for cand in options:
                p = float(yd[cand])
                cand_score = hyp.score + (math.log(p) if p > 0.0 else -math.inf)
                candidates.append((cand_score, hyp.seq + (cand,), hyp.probs + (p,), cand, hyp, s_n, cell_n, ctx_n))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        live = []
        for cand_score, seq, probs, cand, hyp, s_n, cell_n, ctx_n in candidates[:beam_width]:
            if cand == EOS_ID:
                pool.append((cand_score, seq[:-1], probs))
            else:
                live.append(_Hypothesis(seq, probs, cand_score, s_n, cell_n, ctx_n))
        if not live:
            break
        # emissions only lower a score, so no live path can beat the pool best
        if pool and max(p[0] for p in pool) >= max(h.score for h in live):
            break

    if pool:
        pool.sort(key=lambda p: (-p[0], p[1]))
        _, seq, probs = pool[0]
        return list(seq), list(probs)
    best = min(live, key=lambda h: (-h.score, h.seq))
    return list(best.seq), list(best.probs)


def beam_search(tokens, ckpt: ModelCheckpoint, beam_width: int, max_steps: int) -> list[str]:
    """Best no-repeat library sequence by total log-probability.

    With beam_width 1 this reduces exactly to greedy_decode; with a width
    covering every hypothesis it is exhaustive search.
    """
    seq, _ = _beam(tokens, ckpt, beam_width, max_steps)
    return [ckpt.lib_vocab.token(i) for i in seq]


def recommend(
    description_text: str, ckpt: ModelCheckpoint, k: int, beam_width: int = 3
) -> RecommendResult:
    """Preprocess a raw description with the checkpoint's tables and beam
    search a ranked top-k list with per-emission probabilities."""
    if k < 1:
        raise ValueError("k must be >= 1")
    tables = ckpt.tables
    tokens = process_description(
        "", description_text, tables.stopwords, tables.domain_vocab, tables.lemma_table
    )
    if not tokens:
        raise NoSignalError("description reduces to zero tokens after preprocessing")
    seq, probs = _beam(tokens, ckpt, beam_width, max_steps=k + 5)
    items = tuple(
        (ckpt.lib_vocab.token(i), p) for i, p in list(zip(seq, probs))[:k]
    )
    return RecommendResult(items=items, requested_k=k, truncated=len(items) < k)
