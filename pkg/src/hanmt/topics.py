"""Topic mining over dated translations: a nonnegative term-date matrix is
factorized as V ~ W H^T with multiplicative updates under Frobenius loss
plus L1 regularization on both factors. W ranks terms per topic, H gives
each topic's weight over time.

The term extractor is a port: any callable text -> terms. The bundled
default is a whitespace split with a stopword list; a real morphological
analyzer plugs in from outside.
"""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

EPS_FLOOR = 1e-10

DEFAULT_STOPWORDS = frozenset(
    "the a an and or of to in on at was were is are be been had has have "
    "it this that with for as by he she they king said".split()
)


class TopicsError(Exception):
    pass


def default_term_port(text):
    """Whitespace tokens minus stopwords; stands in for a morphological
    analyzer that keeps only nouns and adjectives."""
    return [w for w in text.lower().split() if w not in DEFAULT_STOPWORDS and w]


def date_key(date, granularity="month"):
    parts = date.split("-")
    if granularity == "year":
        return parts[0]
    if granularity == "month":
        return "-".join(parts[:2])
    if granularity == "day":
        return "-".join(parts[:3])
    raise TopicsError(f"unknown date granularity {granularity!r}")


@dataclass
class TermDateMatrix:
    values: np.ndarray  # [n_terms, n_dates], all >= 0
    terms: list
    dates: list  # chronologically ordered

    def __post_init__(self):
        if (self.values < 0).any():
            raise TopicsError("term-date matrix must be nonnegative")


def build_term_date_matrix(
    docs,
    term_port=default_term_port,
    weighting="raw",
    min_term_count=1,
    granularity="month",
):
    """Count terms per date column from {text, date} documents.

    weighting "raw" keeps counts; "tfidf" multiplies each row by
    ln(D / date-frequency), which zeroes (and prunes) terms present on
    every date. All-zero rows are always pruned.
    """
    docs = list(docs)
    if not docs:
        raise TopicsError("no documents")
    if weighting not in ("raw", "tfidf"):
        raise TopicsError(f"unknown weighting {weighting!r}")

    counts = {}
    totals = {}
    for doc in docs:
        if not doc.get("date"):
            raise TopicsError(f"document {doc.get('id', '?')!r} lacks a date")
        col = date_key(doc["date"], granularity)
        for term in term_port(doc["text"]):
            counts.setdefault(term, {})
            counts[term][col] = counts[term].get(col, 0) + 1
            totals[term] = totals.get(term, 0) + 1

    terms = sorted(t for t, c in totals.items() if c >= min_term_count)
    dates = sorted({date_key(d["date"], granularity) for d in docs})
    if not terms:
        raise TopicsError("no terms survive the frequency threshold")
    col_of = {d: j for j, d in enumerate(dates)}
    values = np.zeros((len(terms), len(dates)), dtype=np.float64)
    for i, term in enumerate(terms):
        for col, c in counts[term].items():
            values[i, col_of[col]] = c

    if weighting == "tfidf":
        df = (values > 0).sum(axis=1)
        idf = np.log(len(dates) / df)
        values = values * idf[:, None]

    keep = values.sum(axis=1) > 0
    values = values[keep]
    terms = [t for t, k in zip(terms, keep) if k]
    if not terms:
        raise TopicsError("weighting zeroed every term row")
    return TermDateMatrix(values=values, terms=terms, dates=dates)


@dataclass
class TopicModel:
    w: np.ndarray  # [n_terms, K] term-topic weights
    h: np.ndarray  # [n_dates, K] date-topic weights
    k: int
    alpha: float
    objective_trace: list = field(default_factory=list)
    terms: list = field(default_factory=list)
    dates: list = field(default_factory=list)


def _objective(v, w, h, alpha):
    resid = v - w @ h.T
    return float((resid * resid).sum() + alpha * (w.sum() + h.sum()))


def nmf_fit(matrix: TermDateMatrix, k=20, alpha=0.1, max_iter=500, tol=1e-6, seed=0):
    """Multiplicative updates adapted for the L1 term: the regularization
    weight is subtracted in each update's numerator and factors are floored
    at a tiny epsilon so nonnegativity survives every iteration."""
    v = matrix.values
    if k >= min(v.shape):
        raise TopicsError(f"K={k} must be below min dims {min(v.shape)}")

    rng = np.random.default_rng(seed)
    scale = v.mean() / k
    w = rng.random((v.shape[0], k)) * scale + EPS_FLOOR
    h = rng.random((v.shape[1], k)) * scale + EPS_FLOOR

    trace = [_objective(v, w, h, alpha)]
    for _ in range(max_iter):
        wh = w @ h.T
        numer = np.maximum(v @ h - alpha, EPS_FLOOR)
        w = np.maximum(w * numer / np.maximum(wh @ h, EPS_FLOOR), EPS_FLOOR)

        wh = w @ h.T
        numer = np.maximum(v.T @ w - alpha, EPS_FLOOR)
        h = np.maximum(h * numer / np.maximum(wh.T @ w, EPS_FLOOR), EPS_FLOOR)

        obj = _objective(v, w, h, alpha)
        if not math.isfinite(obj):
            raise TopicsError("objective diverged")
        trace.append(obj)
        if abs(trace[-2] - obj) <= tol * max(1.0, abs(trace[-2])):
            break

    return TopicModel(
        w=w, h=h, k=k, alpha=alpha, objective_trace=trace,
        terms=list(matrix.terms), dates=list(matrix.dates),
    )


def normalized_factors(model: TopicModel):
    """W columns scaled to unit L1 with the scale folded into H."""
    col = model.w.sum(axis=0)
    col_safe = np.where(col > 0, col, 1.0)
    return model.w / col_safe, model.h * col_safe


def topic_report(model: TopicModel, top_n=10):
    """Per-topic ranked term lists from the L1-normalized W."""
    if top_n > len(model.terms):
        import warnings

        warnings.warn(f"top_n {top_n} exceeds vocabulary; clamping")
        top_n = len(model.terms)
    w_norm, _ = normalized_factors(model)
    topics = []
    for topic in range(model.k):
        column = w_norm[:, topic]
        order = np.lexsort((model.terms, -column))[:top_n]
        topics.append(
            {
                "topic": topic,
                "terms": [
                    {"term": model.terms[i], "weight": float(column[i])} for i in order
                ],
            }
        )
    return topics


def topic_timeseries(model: TopicModel, window=1):
    """Centered moving average over each topic's date column of H.

    The divisor is the actual in-range window size, so constant series stay
    constant at the edges.
    """
    if window < 1:
        raise TopicsError("window must be >= 1")
    if window > len(model.dates):
        raise TopicsError(f"window {window} exceeds {len(model.dates)} dates")
    half = (window - 1) // 2
    upper = window - 1 - half
    n = len(model.dates)
    series = {}
    for topic in range(model.k):
        col = model.h[:, topic]
        smoothed = []
        for i in range(n):
            lo, hi = max(0, i - half), min(n, i + upper + 1)
            smoothed.append(float(col[lo:hi].mean()))
        series[topic] = list(zip(model.dates, smoothed))
    return series


def write_topics_json(path, model: TopicModel, top_n=10):
    payload = {
        "k": model.k,
        "alpha": model.alpha,
        "iterations": len(model.objective_trace) - 1,
        "final_objective": model.objective_trace[-1],
        "topics": topic_report(model, top_n),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2)
    return payload


def write_timeseries_csv(directory, model: TopicModel, window=1):
    """One (date,value) CSV per topic, for plotting."""
    import os

    os.makedirs(directory, exist_ok=True)
    series = topic_timeseries(model, window)
    paths = []
    for topic, rows in series.items():
        path = os.path.join(directory, f"topic_{topic:02d}.csv")
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["date", "value"])
            writer.writerows(rows)
        paths.append(path)
    return paths
