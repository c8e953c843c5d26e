"""Seeded synthetic corpora standing in for the real archives, which are
not redistributable. The toy "language pair" is invertible by design: each
source character maps through a fixed lexicon to one target word and
adjacent target words are swapped pairwise, so a model can in principle
reach perfect translations. Source sentences follow a sparse Markov chain,
giving masked-token prediction something real to learn.
"""

import numpy as np

from .corpus import Sentence

MAX_ALPHABET = 420

SOURCE_ALPHABET = [chr(0x4E00 + i) for i in range(MAX_ALPHABET)]

_ONSETS = ["b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "q", "r"]
_VOWELS = ["a", "e", "i", "o", "u"]
_CODAS = ["", "m", "n", "s", "t", "r"]

TARGET_LEXICON = [o + v + c for c in _CODAS for o in _ONSETS for v in _VOWELS]

_CHAR_TO_SYM = {c: i for i, c in enumerate(SOURCE_ALPHABET)}

WAR_TERMS = ["army", "troop", "siege", "fort", "spear"]
SKY_TERMS = ["moon", "halo", "comet", "storm", "eclipse"]


def symbol_class(sym):
    """Latent binary class of a source symbol. It is arbitrary with respect
    to the surface form; only the transition statistics reveal it."""
    return sym % 2


def cipher_translate(source_text, contextual=False):
    """The ground-truth mapping. Plain mode: per-character lexicon lookup.
    Contextual mode: each symbol has two word variants and the left
    neighbor's latent class picks one. Both modes then swap each adjacent
    pair of target words. Deterministic and invertible either way."""
    syms = [_CHAR_TO_SYM[c] for c in source_text]
    if contextual:
        prev_class = [0] + [symbol_class(s) for s in syms[:-1]]
        words = [TARGET_LEXICON[2 * s + b] for s, b in zip(syms, prev_class)]
    else:
        words = [TARGET_LEXICON[s] for s in syms]
    for i in range(0, len(words) - 1, 2):
        words[i], words[i + 1] = words[i + 1], words[i]
    return " ".join(words)


def _transitions(rng, alphabet_size, branching=4, contextual=False):
    """Sparse successor table. In contextual mode transitions mostly cross
    the latent class boundary, so unlabeled text pins down each symbol's
    class while sentence class sequences stay non-deterministic."""
    table = np.empty((alphabet_size, branching), dtype=np.int64)
    if not contextual:
        for i in range(alphabet_size):
            table[i] = rng.choice(alphabet_size, size=branching, replace=False)
        return table
    classes = np.array([symbol_class(s) for s in range(alphabet_size)])
    by_class = {c: np.flatnonzero(classes == c) for c in (0, 1)}
    n_cross = max(1, int(round(branching * 0.75)))
    for i in range(alphabet_size):
        cross = rng.choice(by_class[1 - classes[i]], size=n_cross, replace=False)
        same = rng.choice(by_class[classes[i]], size=branching - n_cross, replace=False)
        table[i] = np.concatenate([cross, same])
    return table


def _source_sentence(rng, table, min_len, max_len):
    length = int(rng.integers(min_len, max_len + 1))
    sym = int(rng.integers(table.shape[0]))
    out = [sym]
    for _ in range(length - 1):
        sym = int(table[sym][rng.integers(table.shape[1])])
        out.append(sym)
    return "".join(SOURCE_ALPHABET[s] for s in out)


def _date(rng, start_year=1500, end_year=1700):
    year = int(rng.integers(start_year, end_year + 1))
    month = int(rng.integers(1, 13))
    day = int(rng.integers(1, 29))
    return f"{year:04d}-{month:02d}-{day:02d}"


def make_cipher_corpus(
    n_paired, n_unpaired, seed=0, min_len=6, max_len=14, branching=4,
    alphabet_size=50, contextual=False,
):
    """Paired + unpaired record dicts in corpus JSON-lines schema."""
    if not 2 <= alphabet_size <= MAX_ALPHABET:
        raise ValueError(f"alphabet_size must be in [2, {MAX_ALPHABET}]")
    if contextual and alphabet_size * 2 > len(TARGET_LEXICON):
        raise ValueError("contextual mode needs two lexicon words per symbol")
    rng = np.random.default_rng(seed)
    table = _transitions(rng, alphabet_size, branching, contextual=contextual)
    records = []
    for i in range(n_paired):
        src = _source_sentence(rng, table, min_len, max_len)
        date = _date(rng)
        records.append(
            {"id": f"p{i:05d}.h", "side": "hanja", "text": src,
             "date": date, "pair_id": f"p{i:05d}"}
        )
        records.append(
            {"id": f"p{i:05d}.k", "side": "korean",
             "text": cipher_translate(src, contextual=contextual),
             "date": date, "pair_id": f"p{i:05d}"}
        )
    for i in range(n_unpaired):
        src = _source_sentence(rng, table, min_len, max_len)
        records.append(
            {"id": f"u{i:05d}.h", "side": "hanja", "text": src, "date": _date(rng)}
        )
    return records


def make_alternating_corpus(n_sentences, seed=0, min_len=6, max_len=12, alphabet_size=50):
    """Sentences that strictly alternate two symbols (ABAB...), so a masked
    position is recoverable from either neighbor."""
    rng = np.random.default_rng(seed)
    n = alphabet_size
    pairs = [(i, (i + 1) % n) for i in range(0, n, 2)]
    records = []
    for i in range(n_sentences):
        a, b = pairs[int(rng.integers(len(pairs)))]
        length = int(rng.integers(min_len, max_len + 1))
        text = "".join(
            SOURCE_ALPHABET[a] if t % 2 == 0 else SOURCE_ALPHABET[b]
            for t in range(length)
        )
        records.append(
            {"id": f"a{i:05d}.h", "side": "hanja", "text": text, "date": _date(rng)}
        )
    return records


def make_themed_documents(n_docs, seed=0):
    """Dated text documents with a planted two-theme structure: war terms
    dominate early dates, sky terms late ones. Feeds the topics pipeline."""
    rng = np.random.default_rng(seed)
    docs = []
    for i in range(n_docs):
        early = i < n_docs // 2
        year = int(rng.integers(1500, 1600)) if early else int(rng.integers(1600, 1700))
        theme = WAR_TERMS if early else SKY_TERMS
        other = SKY_TERMS if early else WAR_TERMS
        words = list(rng.choice(theme, size=6)) + list(rng.choice(other, size=1))
        rng.shuffle(words)
        docs.append(
            {
                "id": f"d{i:05d}",
                "text": " ".join(words),
                "date": f"{year:04d}-{int(rng.integers(1, 13)):02d}-01",
            }
        )
    return docs


def records_to_sentences(records, hanja_vocab, korean_vocab, tokenizer=None):
    """Encode corpus records into (paired, unpaired) Sentence pools."""
    from .corpus import encode_sentence

    by_pair = {}
    unpaired = []
    for rec in records:
        side = rec["side"]
        vocab = hanja_vocab if side == "hanja" else korean_vocab
        sent = encode_sentence(
            rec["text"], vocab, side,
            tokenizer=tokenizer if side == "korean" else None,
            sent_id=rec["id"], date=rec.get("date"), pair_id=rec.get("pair_id"),
        )
        if rec.get("pair_id"):
            by_pair.setdefault(rec["pair_id"], {})[side] = sent
        elif side == "hanja":
            unpaired.append(sent)
    paired = [
        (v["hanja"], v["korean"])
        for _, v in sorted(by_pair.items())
        if "hanja" in v and "korean" in v
    ]
    return paired, unpaired
