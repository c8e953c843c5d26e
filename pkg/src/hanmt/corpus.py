"""Corpus handling: vocabularies, sentence encoding, filtering, masking.

Hanja text is tokenized per character; Korean text goes through the unigram
subword model (see subword.py). Corpus files are JSON-lines, one object per
sentence: {id, side, text, date?, pair_id?}.
"""

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

PAD, UNK, MASK, BOS, EOS = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ["<pad>", "<unk>", "<mask>", "<bos>", "<eos>"]
N_SPECIALS = len(SPECIAL_TOKENS)

IGNORE_ID = -1  # loss target for unmasked positions

VOCAB_FORMAT_VERSION = 1

# corpus filter bounds, tokens, inclusive
HANJA_LEN_BOUNDS = (4, 350)
KOREAN_LEN_BOUNDS = (4, 300)


class CorpusError(Exception):
    pass


def _escape(token: str) -> str:
    return token.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unescape(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        c = text[i]
        if c == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            out.append({"t": "\t", "n": "\n", "\\": "\\"}.get(nxt, nxt))
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


class Vocab:
    """Dense token<->id table with fixed special ids at the bottom."""

    def __init__(self, tokens, side, logprobs=None):
        self.side = side
        self.id_to_token = list(SPECIAL_TOKENS) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise CorpusError("duplicate token in vocabulary")
        self.logprobs = logprobs  # aligned with id_to_token, None entries for specials

    def __len__(self):
        return len(self.id_to_token)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def token_of(self, idx: int) -> str:
        return self.id_to_token[idx]

    def save(self, path):
        lines = [f"{self.side}\t{len(self)}\t{VOCAB_FORMAT_VERSION}"]
        for i, tok in enumerate(self.id_to_token):
            lp = ""
            if self.logprobs is not None and self.logprobs[i] is not None:
                lp = f"\t{self.logprobs[i]:.8f}"
            lines.append(f"{_escape(tok)}\t{i}{lp}")
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            raw = f.read().splitlines()
        side, size, version = raw[0].split("\t")
        if int(version) != VOCAB_FORMAT_VERSION:
            raise CorpusError(f"unsupported vocab format version {version}")
        tokens, logprobs = [], []
        for line in raw[1:]:
            parts = line.split("\t")
            tok, idx = _unescape(parts[0]), int(parts[1])
            if idx != len(tokens):
                raise CorpusError("vocab ids must be dense and ordered")
            tokens.append(tok)
            logprobs.append(float(parts[2]) if len(parts) > 2 else None)
        if len(tokens) != int(size):
            raise CorpusError("vocab size header disagrees with row count")
        if tokens[:N_SPECIALS] != SPECIAL_TOKENS:
            raise CorpusError("vocab missing reserved special tokens")
        has_lp = any(lp is not None for lp in logprobs)
        return cls(tokens[N_SPECIALS:], side, logprobs if has_lp else None)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for tok in self.id_to_token:
            h.update(tok.encode("utf-8") + b"\x00")
        return h.hexdigest()[:16]


@dataclass
class Sentence:
    text: str
    token_ids: list
    side: str
    sent_id: str = ""
    date: str | None = None
    pair_id: str | None = None

    def __len__(self):
        return len(self.token_ids)


@dataclass
class MaskedBatch:
    """One sentence's MLM instance: masked inputs plus recovery targets."""

    input_ids: np.ndarray
    target_ids: np.ndarray  # original token at masked slots, IGNORE_ID elsewhere
    spans: list = field(default_factory=list)  # (start, ngram_length)


def build_vocab(sentences, side, min_count=10, max_size=24000, tokenizer=None):
    """Count tokens over a sentence stream and fix a vocabulary.

    Hanja keeps characters seen strictly more than min_count times; Korean
    keeps the max_size most frequent tokens. Ties break lexicographically
    so the result is stable.
    """
    counts = Counter()
    n = 0
    for text in sentences:
        n += 1
        counts.update(tokenize_text(text, side, tokenizer))
    if n == 0:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if side == "hanja":
        kept = [t for t, c in ranked if c > min_count]
    else:
        kept = [t for t, _ in ranked[: max(0, max_size - N_SPECIALS)]]
    return Vocab(kept, side)


def tokenize_text(text, side, tokenizer=None):
    if side == "hanja":
        return list(text)
    if tokenizer is not None:
        return tokenizer.segment(text)
    return text.split()


def encode_sentence(text, vocab, side, tokenizer=None, sent_id="", date=None, pair_id=None):
    """Tokenize and map to ids; unseen tokens become UNK."""
    if text == "":
        raise CorpusError("cannot encode an empty sentence")
    tokens = tokenize_text(text, side, tokenizer)
    ids = [vocab.id_of(t) for t in tokens]
    return Sentence(text, ids, side, sent_id=sent_id, date=date, pair_id=pair_id)


def decode_ids(ids, vocab, tokenizer=None):
    """Inverse of encode for in-vocab text: concatenate surface tokens."""
    toks = [vocab.token_of(i) for i in ids if i not in (PAD, BOS, EOS)]
    text = "".join(toks)
    if tokenizer is not None:
        text = tokenizer.restore_spaces(text)
    return text


def length_ok(n_tokens, side):
    lo, hi = HANJA_LEN_BOUNDS if side == "hanja" else KOREAN_LEN_BOUNDS
    return lo <= n_tokens <= hi


def filter_and_split(paired, unpaired, test_size, seed, bounds_override=None):
    """Drop out-of-bounds sentences and carve seeded test sets.

    paired: list of (hanja Sentence, korean Sentence); unpaired: list of
    hanja Sentence. A pair is dropped when either side fails its bound.
    Returns dict with train/test lists for both corpora.
    """

    def ok(sent):
        if bounds_override is not None:
            lo, hi = bounds_override[sent.side]
            return lo <= len(sent) <= hi
        return length_ok(len(sent), sent.side)

    kept_pairs = [(h, k) for h, k in paired if ok(h) and ok(k)]
    kept_unpaired = [h for h in unpaired if ok(h)]

    rng = np.random.default_rng(seed)
    out = {}
    for name, pool in [("paired", kept_pairs), ("unpaired", kept_unpaired)]:
        if not pool:  # corpus not in use; nothing to split
            out[f"{name}_train"] = []
            out[f"{name}_test"] = []
            continue
        if test_size >= len(pool):
            raise CorpusError(
                f"test_size {test_size} >= surviving {name} corpus of {len(pool)}"
            )
        order = rng.permutation(len(pool))
        test_idx = set(order[:test_size].tolist())
        out[f"{name}_train"] = [pool[i] for i in range(len(pool)) if i not in test_idx]
        out[f"{name}_test"] = [pool[i] for i in sorted(test_idx)]
    return out


def mask_ngram(sentence, rng, mask_rate=0.15, ngram_weights=(1.0, 1.0, 1.0)):
    """Apply the MLM masking operator: non-overlapping 1-3 token spans.

    Spans are drawn until ceil(mask_rate * len) positions are covered; the
    final span is clamped so the total overshoots the target by at most one
    position. Masked inputs become MASK, targets keep the original ids.
    """
    if not 0.0 < mask_rate < 1.0:
        raise CorpusError(f"mask_rate must lie in (0, 1), got {mask_rate}")
    n = len(sentence)
    ids = np.asarray(sentence.token_ids, dtype=np.int64)
    target_count = math.ceil(mask_rate * n)
    weights = np.asarray(ngram_weights, dtype=np.float64)
    weights = weights / weights.sum()

    covered = np.zeros(n, dtype=bool)
    spans = []
    n_covered = 0
    while n_covered < target_count:
        length = int(rng.choice(len(weights), p=weights)) + 1
        if n_covered + length > target_count + 1:
            length = target_count + 1 - n_covered
        starts = [
            s for s in range(0, n - length + 1) if not covered[s : s + length].any()
        ]
        if not starts:
            shorter = None
            for cand in range(length - 1, 0, -1):
                fits = [
                    s for s in range(0, n - cand + 1) if not covered[s : s + cand].any()
                ]
                if fits:
                    shorter = (cand, fits)
                    break
            if shorter is None:
                break  # sentence saturated; keep what we have
            length, starts = shorter
        start = int(starts[rng.integers(len(starts))])
        covered[start : start + length] = True
        spans.append((start, length))
        n_covered += length

    spans.sort()
    input_ids = ids.copy()
    target_ids = np.full(n, IGNORE_ID, dtype=np.int64)
    input_ids[covered] = MASK
    target_ids[covered] = ids[covered]
    return MaskedBatch(input_ids=input_ids, target_ids=target_ids, spans=spans)


def write_jsonl(path, sentences):
    with open(path, "w", encoding="utf-8") as f:
        for s in sentences:
            rec = {"id": s.sent_id, "side": s.side, "text": s.text}
            if s.date is not None:
                rec["date"] = s.date
            if s.pair_id is not None:
                rec["pair_id"] = s.pair_id
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_jsonl(path):
    """Yield raw corpus records (dicts) from a JSON-lines file."""
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{lineno}: invalid JSON: {e}") from e
            for key in ("id", "side", "text"):
                if key not in rec:
                    raise CorpusError(f"{path}:{lineno}: missing field {key!r}")
            yield rec
