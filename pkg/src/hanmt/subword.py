"""Unigram-LM subword tokenizer: Viterbi segmentation with EM-fitted pieces.

Training seeds a large candidate inventory from frequent substrings, runs a
few rounds of hard EM (re-count pieces over the Viterbi segmentation, then
re-normalize probabilities), and repeatedly prunes the pieces whose removal
costs the least corpus log-likelihood until the target size is reached.
Spaces are rewritten to the marker character so segmentation is reversible.
"""

import math
from collections import Counter

SPACE_MARKER = "▁"  # ▁
_UNKNOWN_CHAR_LOGPROB = -100.0


class TokenizerError(Exception):
    pass


def normalize(text: str) -> str:
    return text.replace(" ", SPACE_MARKER)


def denormalize(text: str) -> str:
    return text.replace(SPACE_MARKER, " ")


class UnigramTokenizer:
    def __init__(self, pieces: dict, max_piece_len: int | None = None):
        if not pieces:
            raise TokenizerError("empty piece inventory")
        self.pieces = dict(pieces)
        self.max_piece_len = max_piece_len or max(len(p) for p in pieces)

    # -- segmentation ----------------------------------------------------

    def viterbi(self, normalized: str, exclude=None):
        """Best-scoring segmentation; unknown characters pass through as
        single tokens at a strong penalty so any string stays segmentable."""
        n = len(normalized)
        best = [float("-inf")] * (n + 1)
        back = [0] * (n + 1)
        best[0] = 0.0
        for end in range(1, n + 1):
            for start in range(max(0, end - self.max_piece_len), end):
                if best[start] == float("-inf"):
                    continue
                piece = normalized[start:end]
                if piece == exclude:
                    continue
                lp = self.pieces.get(piece)
                if lp is None:
                    if end - start > 1:
                        continue
                    lp = _UNKNOWN_CHAR_LOGPROB
                score = best[start] + lp
                if score > best[end]:
                    best[end] = score
                    back[end] = start
        tokens = []
        pos = n
        while pos > 0:
            tokens.append(normalized[back[pos] : pos])
            pos = back[pos]
        tokens.reverse()
        return tokens, best[n]

    def segment(self, text: str):
        tokens, _ = self.viterbi(normalize(text))
        return tokens

    def restore_spaces(self, text: str) -> str:
        return denormalize(text)

    # -- training --------------------------------------------------------

    @classmethod
    def train(
        cls,
        texts,
        target_size,
        max_piece_len=16,
        em_rounds=2,
        prune_fraction=0.2,
        seed_multiplier=10,
        min_substring_count=2,
    ):
        """Fit a piece inventory of exactly target_size entries."""
        sentence_counts = Counter(normalize(t) for t in texts if t)
        if not sentence_counts:
            raise TokenizerError("cannot train a tokenizer on an empty corpus")

        chars = Counter()
        substrings = Counter()
        for sent, freq in sentence_counts.items():
            for i, c in enumerate(sent):
                chars[c] += freq
                for j in range(i + 2, min(i + max_piece_len, len(sent)) + 1):
                    # pieces may start with the space marker but not span words
                    if sent[j - 1] == SPACE_MARKER:
                        break
                    substrings[sent[i:j]] += freq

        if target_size < len(chars):
            raise TokenizerError(
                f"target size {target_size} below character inventory of {len(chars)}"
            )

        candidates = [
            (s, c) for s, c in substrings.items() if c >= min_substring_count
        ]
        candidates.sort(key=lambda sc: (-sc[1] * len(sc[0]), sc[0]))
        room = max(0, seed_multiplier * target_size - len(chars))
        inventory = Counter(dict(candidates[:room]))
        inventory.update(chars)

        tok = cls._from_counts(inventory, max_piece_len)
        while True:
            for _ in range(em_rounds):
                tok = tok._em_round(sentence_counts, chars)
            n_prunable = len(tok.pieces) - len(chars)
            if len(tok.pieces) <= target_size or n_prunable <= 0:
                break
            n_prune = min(
                max(1, int(n_prunable * prune_fraction)),
                len(tok.pieces) - target_size,
            )
            tok = tok._prune(sentence_counts, chars, n_prune)

        for _ in range(em_rounds):
            tok = tok._em_round(sentence_counts, chars)
        return tok

    @classmethod
    def _from_counts(cls, counts, max_piece_len):
        total = sum(counts.values())
        pieces = {p: math.log(c / total) for p, c in counts.items() if c > 0}
        return cls(pieces, max_piece_len)

    def _em_round(self, sentence_counts, chars):
        counts = Counter()
        for sent, freq in sentence_counts.items():
            tokens, _ = self.viterbi(sent)
            for t in tokens:
                counts[t] += freq
        total = sum(counts.values()) or 1
        floor = math.log(0.5 / total)
        pieces = {}
        for p in self.pieces:
            c = counts[p]
            pieces[p] = math.log(c / total) if c > 0 else floor
        for c in chars:  # single characters are never dropped
            pieces.setdefault(c, floor)
        return UnigramTokenizer(pieces, self.max_piece_len)

    def _prune(self, sentence_counts, chars, n_prune):
        """Drop the multi-char pieces whose removal raises corpus loss least."""
        usage = {}
        for sent, freq in sentence_counts.items():
            tokens, score = self.viterbi(sent)
            for t in set(tokens):
                if len(t) > 1:
                    usage.setdefault(t, []).append((sent, freq, score))

        deltas = []
        for piece in self.pieces:
            if len(piece) == 1:
                continue
            occurrences = usage.get(piece)
            if not occurrences:
                deltas.append((0.0, piece))
                continue
            delta = 0.0
            for sent, freq, score in occurrences:
                _, without = self.viterbi(sent, exclude=piece)
                delta += freq * (score - without)
            deltas.append((delta, piece))

        deltas.sort(key=lambda dp: (dp[0], dp[1]))
        doomed = {p for _, p in deltas[:n_prune]}
        pieces = {p: lp for p, lp in self.pieces.items() if p not in doomed}
        return UnigramTokenizer(pieces, self.max_piece_len)

    # -- persistence through the vocab format ------------------------------

    def sorted_pieces(self):
        """Pieces ordered by descending probability (then lexicographic)."""
        return sorted(self.pieces.items(), key=lambda pl: (-pl[1], pl[0]))

    @classmethod
    def from_vocab(cls, vocab):
        if vocab.logprobs is None:
            raise TokenizerError("vocabulary carries no piece log-probabilities")
        pieces = {
            tok: lp
            for tok, lp in zip(vocab.id_to_token, vocab.logprobs)
            if lp is not None
        }
        return cls(pieces)
