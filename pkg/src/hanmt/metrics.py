"""Corpus metrics: BLEU, ROUGE-L, HITS@K, plus chrF as a clearly-labeled
extra (it substitutes for METEOR, which needs external lexical resources).

BLEU is corpus-level: clipped n-gram counts pool over all segments and a
single brevity penalty applies; it is not a mean of per-segment scores.
"""

import math
from collections import Counter
from dataclasses import dataclass, field


class MetricError(Exception):
    pass


@dataclass
class EvalReport:
    metric: str
    value: float
    per_segment: list = field(default_factory=list)
    segment_count: int = 0
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "metric": self.metric,
            "value": self.value,
            "segment_count": self.segment_count,
            "config": self.config,
            "per_segment": self.per_segment,
        }


def _check_lengths(hypotheses, references):
    if not hypotheses:
        raise MetricError("empty hypothesis set")
    if len(hypotheses) != len(references):
        raise MetricError(
            f"{len(hypotheses)} hypotheses vs {len(references)} references"
        )


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _bleu_stats(hypotheses, references, max_n):
    matched = [0] * max_n
    total = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            hcounts = _ngrams(hyp, n)
            rcounts = _ngrams(ref, n)
            total[n - 1] += max(0, len(hyp) - n + 1)
            matched[n - 1] += sum(min(c, rcounts[g]) for g, c in hcounts.items())
    return matched, total, hyp_len, ref_len


def _bleu_from_stats(matched, total, hyp_len, ref_len, smooth):
    logs = []
    for m, t in zip(matched, total):
        if t == 0:
            continue  # order longer than every hypothesis; carries no evidence
        if smooth:
            m, t = m + 1, t + 1
        if m == 0:
            return 0.0
        logs.append(math.log(m / t))
    if not logs:
        return 0.0
    geo = math.exp(sum(logs) / len(logs))
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / max(1, hyp_len))
    return geo * bp


def bleu(hypotheses, references, max_n=4, smooth=False):
    """Corpus BLEU over token lists (geometric mean of clipped precisions
    times brevity penalty). Zero higher-order matches score 0 unless the
    add-one smoothing flag is set."""
    _check_lengths(hypotheses, references)
    matched, total, hyp_len, ref_len = _bleu_stats(hypotheses, references, max_n)
    value = _bleu_from_stats(matched, total, hyp_len, ref_len, smooth)
    per_segment = []
    for hyp, ref in zip(hypotheses, references):
        m, t, hl, rl = _bleu_stats([hyp], [ref], max_n)
        per_segment.append(_bleu_from_stats(m, t, hl, rl, smooth))
    return EvalReport(
        metric="bleu",
        value=value,
        per_segment=per_segment,
        segment_count=len(hypotheses),
        config={"max_n": max_n, "smooth": smooth},
    )


def _lcs_length(a, b):
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(hypotheses, references, beta=1.2):
    """Mean per-segment LCS F-measure; beta > 1 weights recall."""
    _check_lengths(hypotheses, references)
    scores = []
    b2 = beta * beta
    for hyp, ref in zip(hypotheses, references):
        if not hyp or not ref:
            scores.append(0.0)
            continue
        lcs = _lcs_length(hyp, ref)
        if lcs == 0:
            scores.append(0.0)
            continue
        p = lcs / len(hyp)
        r = lcs / len(ref)
        scores.append((1 + b2) * p * r / (r + b2 * p))
    return EvalReport(
        metric="rouge_l",
        value=sum(scores) / len(scores),
        per_segment=scores,
        segment_count=len(hypotheses),
        config={"beta": beta},
    )


def hits_at_k(candidate_lists, truths, ks=(1, 5, 10)):
    """Fraction of positions whose truth appears in the first K candidates.

    candidate_lists holds ranked token (or id) lists; every list must be at
    least max(ks) long so all requested cutoffs are meaningful.
    """
    if not candidate_lists:
        raise MetricError("no candidate lists")
    if len(candidate_lists) != len(truths):
        raise MetricError("candidate/truth count mismatch")
    kmax = max(ks)
    for i, cands in enumerate(candidate_lists):
        if len(cands) < kmax:
            raise MetricError(
                f"candidate list {i} has {len(cands)} entries, need {kmax}"
            )
    reports = {}
    for k in sorted(ks):
        hits = [1.0 if truth in cands[:k] else 0.0
                for cands, truth in zip(candidate_lists, truths)]
        reports[k] = EvalReport(
            metric=f"hits@{k}",
            value=sum(hits) / len(hits),
            per_segment=hits,
            segment_count=len(hits),
            config={"k": k},
        )
    return reports


def chrf(hypotheses, references, max_n=6, beta=2.0):
    """Character n-gram F-score. Extra metric, not part of the original
    evaluation protocol; stands in for METEOR."""
    _check_lengths(hypotheses, references)
    scores = []
    b2 = beta * beta
    for hyp, ref in zip(hypotheses, references):
        htext = "".join(hyp) if not isinstance(hyp, str) else hyp
        rtext = "".join(ref) if not isinstance(ref, str) else ref
        ps, rs = [], []
        for n in range(1, max_n + 1):
            hc = _ngrams(list(htext), n)
            rc = _ngrams(list(rtext), n)
            overlap = sum(min(c, rc[g]) for g, c in hc.items())
            if sum(hc.values()):
                ps.append(overlap / sum(hc.values()))
            if sum(rc.values()):
                rs.append(overlap / sum(rc.values()))
        p = sum(ps) / len(ps) if ps else 0.0
        r = sum(rs) / len(rs) if rs else 0.0
        scores.append(0.0 if p + r == 0 else (1 + b2) * p * r / (b2 * p + r))
    return EvalReport(
        metric="chrf",
        value=sum(scores) / len(scores),
        per_segment=scores,
        segment_count=len(hypotheses),
        config={"max_n": max_n, "beta": beta, "note": "substitute metric"},
    )
