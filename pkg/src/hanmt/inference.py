"""Inference: top-K restoration candidates and beam-search translation.

Everything here is a pure function over an immutable parameter snapshot, so
any number of concurrent calls may share one loaded model. Ties are broken
by token id, which makes outputs reproducible bit for bit.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .corpus import BOS, EOS, MASK, PAD, Vocab, encode_sentence
from .model import ModelParams, decode_logits, encode_source, restore_logits

DAMAGE_CHAR = "□"  # □, how damaged glyphs appear in transcriptions
DAMAGE_TOKEN = "[MASK]"


class InferenceError(Exception):
    pass


@dataclass
class RestorationCandidate:
    position: int
    token: str
    token_id: int
    logprob: float
    rank: int


@dataclass
class Hypothesis:
    token_ids: list
    logprob: float = 0.0
    finished: bool = False
    score: float = 0.0

    def tokens(self, vocab):
        return [vocab.token_of(i) for i in self.token_ids if i not in (BOS, EOS, PAD)]


def length_normalized_score(raw_logprob, length, alpha=0.6):
    """raw / ((5+len)/6)^alpha, the usual length penalty."""
    if length < 1:
        raise InferenceError(f"hypothesis length must be >= 1, got {length}")
    return raw_logprob / (((5.0 + length) / 6.0) ** alpha)


def normalize_damage_marks(text):
    """Rewrite [MASK] tokens to the damage character; return (text, offsets)."""
    normalized = text.replace(DAMAGE_TOKEN, DAMAGE_CHAR)
    positions = [i for i, c in enumerate(normalized) if c == DAMAGE_CHAR]
    return normalized, positions


def restore_topk(text, k, params: ModelParams, vocab: Vocab, refill=False):
    """Rank K candidate tokens for every damaged position of a Hanja line.

    All damage marks are masked in a single forward pass by default; refill
    mode fills them left to right, conditioning later slots on earlier picks.
    """
    if k < 1:
        raise InferenceError("K must be >= 1")
    if k > len(vocab):
        raise InferenceError(f"K={k} exceeds vocabulary of {len(vocab)}")
    normalized, positions = normalize_damage_marks(text)
    if not positions:
        raise InferenceError("no damage marks in input")

    ids = np.array(
        [MASK if c == DAMAGE_CHAR else vocab.id_of(c) for c in normalized],
        dtype=np.int64,
    )

    def candidates_at(logits_row, position):
        order = np.lexsort((np.arange(len(logits_row)), -logits_row))[:k]
        row64 = logits_row.astype(np.float64)
        logz = np.log(np.exp(row64 - row64.max()).sum()) + row64.max()
        return [
            RestorationCandidate(
                position=position,
                token=vocab.token_of(int(t)),
                token_id=int(t),
                logprob=float(row64[t] - logz),
                rank=r + 1,
            )
            for r, t in enumerate(order)
        ]

    out = {}
    if not refill:
        states, pad = encode_source(ids[None, :], params)
        logits = restore_logits(states, pad, params).data[0]
        for pos in positions:
            out[pos] = candidates_at(logits[pos], pos)
    else:
        work = ids.copy()
        for pos in positions:
            states, pad = encode_source(work[None, :], params)
            logits = restore_logits(states, pad, params).data[0]
            cands = candidates_at(logits[pos], pos)
            out[pos] = cands
            work[pos] = cands[0].token_id
    return out


def _step_logprobs(params, memory, src_pad, prefix_rows):
    """Log-probabilities of the next token for each live hypothesis row."""
    rows = len(prefix_rows)
    width = max(len(r) for r in prefix_rows)
    ids = np.full((rows, width), PAD, dtype=np.int64)
    for i, r in enumerate(prefix_rows):
        ids[i, : len(r)] = r
    mem = T.Tensor(np.broadcast_to(memory.data, (rows,) + memory.data.shape[1:]).copy())
    pad = np.broadcast_to(src_pad, (rows,) + src_pad.shape[1:])
    logits = decode_logits(mem, pad, ids, params).data
    out = np.empty((rows, logits.shape[-1]), dtype=np.float64)
    for i, r in enumerate(prefix_rows):
        row = logits[i, len(r) - 1].astype(np.float64)
        out[i] = row - (np.log(np.exp(row - row.max()).sum()) + row.max())
    return out


def beam_decode(src_ids, params: ModelParams, beam_size=3, max_len=300, alpha=0.6):
    """Beam search over the decoder; beam_size=1 reproduces greedy exactly.

    Returns (best, finished) where finished holds every completed hypothesis
    ranked by normalized score (ties by token ids).
    """
    if beam_size < 1:
        raise InferenceError("beam size must be >= 1")
    src_ids = np.asarray(src_ids, dtype=np.int64)
    if src_ids.ndim != 1 or src_ids.size == 0:
        raise InferenceError("source must be a non-empty 1-D id sequence")
    # BOS takes one slot of the decoder's positional table
    max_len = min(max_len, params.config.max_len_korean - 1)

    memory, src_pad = encode_source(src_ids[None, :], params)
    live = [Hypothesis(token_ids=[BOS])]
    finished = []

    for _ in range(max_len):
        logprobs = _step_logprobs(params, memory, src_pad, [h.token_ids for h in live])
        pool = []
        for h, row in zip(live, logprobs):
            top = np.lexsort((np.arange(row.size), -row))[:beam_size]
            for t in top:
                pool.append((h.logprob + float(row[t]), h, int(t)))
        # best beam_size continuations overall; ties resolved by token id
        pool.sort(key=lambda item: (-item[0], item[2], item[1].token_ids))
        next_live = []
        for logprob, parent, tok in pool[:beam_size]:
            ids = parent.token_ids + [tok]
            length = len(ids) - 1  # generated tokens, BOS excluded
            hyp = Hypothesis(
                token_ids=ids,
                logprob=logprob,
                finished=tok == EOS,
                score=length_normalized_score(logprob, length, alpha),
            )
            if hyp.finished:
                finished.append(hyp)
            else:
                next_live.append(hyp)
        live = next_live
        if not live:
            break

    for h in live:  # ran into max_len; close them out
        h.finished = True
        h.score = length_normalized_score(h.logprob, len(h.token_ids) - 1, alpha)
        finished.append(h)
    finished.sort(key=lambda h: (-h.score, h.token_ids))
    return finished[0], finished


def greedy_decode(src_ids, params: ModelParams, max_len=300, alpha=0.6):
    """Plain argmax decoding, written independently of the beam machinery
    so beam_size=1 equivalence is a real check rather than a tautology."""
    src_ids = np.asarray(src_ids, dtype=np.int64)
    if src_ids.ndim != 1 or src_ids.size == 0:
        raise InferenceError("source must be a non-empty 1-D id sequence")
    max_len = min(max_len, params.config.max_len_korean - 1)
    memory, src_pad = encode_source(src_ids[None, :], params)
    ids = [BOS]
    logprob = 0.0
    for _ in range(max_len):
        row = _step_logprobs(params, memory, src_pad, [ids])[0]
        tok = int(row.argmax())  # argmax takes the lowest id on ties
        logprob += float(row[tok])
        ids.append(tok)
        if tok == EOS:
            break
    return Hypothesis(
        token_ids=ids,
        logprob=logprob,
        finished=True,
        score=length_normalized_score(logprob, len(ids) - 1, alpha),
    )


def translate_text(
    text,
    params: ModelParams,
    hanja_vocab: Vocab,
    korean_vocab: Vocab,
    tokenizer=None,
    beam_size=3,
    max_len=300,
    alpha=0.6,
):
    """End-to-end: encode Hanja text, beam-decode, detokenize Korean."""
    sent = encode_sentence(text, hanja_vocab, "hanja")
    best, _ = beam_decode(
        np.asarray(sent.token_ids), params, beam_size=beam_size, max_len=max_len, alpha=alpha
    )
    pieces = best.tokens(korean_vocab)
    hypothesis = "".join(pieces)
    if tokenizer is not None:
        hypothesis = tokenizer.restore_spaces(hypothesis)
    return {
        "source": text,
        "hypothesis": hypothesis,
        "tokens": pieces,
        "raw_logprob": best.logprob,
        "score": best.score,
    }


def write_translations(path, results):
    """JSON-lines output: {id, source, hypothesis, raw_logprob, score}."""
    with open(path, "w", encoding="utf-8") as f:
        for r in results:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")
