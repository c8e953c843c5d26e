import numpy as np
import pytest

from hanmt import topics as TP


def docs_from(rows):
    return [{"id": str(i), "text": t, "date": d} for i, (t, d) in enumerate(rows)]


class TestTermDateMatrix:
    def test_raw_counting(self):
        docs = docs_from([("war army war", "1592-04-13")])
        m = TP.build_term_date_matrix(docs, term_port=str.split)
        assert m.dates == ["1592-04"]
        row = dict(zip(m.terms, m.values[:, 0]))
        assert row == {"war": 2.0, "army": 1.0}

    def test_disjoint_dates_block_structure(self):
        docs = docs_from([("war army", "1592-01-01"), ("moon halo", "1700-01-01")])
        m = TP.build_term_date_matrix(docs, term_port=str.split)
        war = m.terms.index("war")
        moon = m.terms.index("moon")
        assert m.values[war, m.dates.index("1700-01")] == 0
        assert m.values[moon, m.dates.index("1592-01")] == 0

    def test_tfidf_zeroes_ubiquitous_terms(self):
        docs = docs_from(
            [("war everywhere", "1592-01-01"), ("moon everywhere", "1593-01-01")]
        )
        m = TP.build_term_date_matrix(docs, term_port=str.split, weighting="tfidf")
        assert "everywhere" not in m.terms  # idf ln(D/D)=0 -> row pruned
        assert "war" in m.terms

    def test_undated_doc_rejected(self):
        with pytest.raises(TP.TopicsError):
            TP.build_term_date_matrix([{"id": "x", "text": "war"}])

    def test_empty_corpus_rejected(self):
        with pytest.raises(TP.TopicsError):
            TP.build_term_date_matrix([])

    def test_date_granularity(self):
        docs = docs_from([("war", "1592-04-13"), ("army", "1592-05-02")])
        year = TP.build_term_date_matrix(docs, term_port=str.split, granularity="year")
        assert year.dates == ["1592"]
        day = TP.build_term_date_matrix(docs, term_port=str.split, granularity="day")
        assert day.dates == ["1592-04-13", "1592-05-02"]


def planted_rank1(seed=0, shape=(30, 20)):
    rng = np.random.default_rng(seed)
    w = rng.random(shape[0]) + 0.1
    h = rng.random(shape[1]) + 0.1
    v = np.outer(w, h)
    return TP.TermDateMatrix(
        values=v,
        terms=[f"t{i}" for i in range(shape[0])],
        dates=[f"16{i:02d}" for i in range(shape[1])],
    )


class TestNmf:
    def test_planted_rank1_recovery(self):
        m = planted_rank1()
        model = TP.nmf_fit(m, k=1, alpha=0.0, max_iter=800, tol=0.0, seed=1)
        recon = model.w @ model.h.T
        rel = np.linalg.norm(recon - m.values) / np.linalg.norm(m.values)
        assert rel < 1e-3

    def test_objective_non_increasing(self):
        rng = np.random.default_rng(7)
        for trial in range(5):
            v = rng.random((50, 30)) * 5
            m = TP.TermDateMatrix(
                values=v,
                terms=[f"t{i}" for i in range(50)],
                dates=[f"d{i:02d}" for i in range(30)],
            )
            model = TP.nmf_fit(m, k=5, alpha=0.1, max_iter=120, tol=0.0, seed=trial)
            trace = np.array(model.objective_trace)
            assert (np.diff(trace) <= 1e-9 * np.maximum(1.0, trace[:-1])).all()

    def test_factors_stay_nonnegative(self):
        m = planted_rank1(3)
        model = TP.nmf_fit(m, k=3, alpha=0.5, max_iter=100, seed=0)
        assert (model.w >= 0).all() and (model.h >= 0).all()

    def test_large_alpha_drives_factors_to_floor(self):
        m = planted_rank1(4)
        big = TP.nmf_fit(m, k=2, alpha=1e4, max_iter=60, seed=0)
        small = TP.nmf_fit(m, k=2, alpha=0.0, max_iter=60, seed=0)
        # sparsity pressure: the penalized factors collapse toward the floor
        # and the reconstruction with them goes to zero
        assert big.w.max() < 1e-6 < small.w.max()
        assert (big.w <= 2 * TP.EPS_FLOOR).mean() > 0.9
        assert (big.w @ big.h.T).max() < 1e-6

    def test_k_too_large_rejected(self):
        with pytest.raises(TP.TopicsError):
            TP.nmf_fit(planted_rank1(), k=25, alpha=0.1)

    def test_seeded_determinism(self):
        m = planted_rank1(5)
        a = TP.nmf_fit(m, k=2, alpha=0.1, max_iter=50, seed=9)
        b = TP.nmf_fit(m, k=2, alpha=0.1, max_iter=50, seed=9)
        np.testing.assert_array_equal(a.w, b.w)
        np.testing.assert_array_equal(a.h, b.h)


def two_topic_corpus():
    rows = []
    for month in range(1, 7):
        rows.append(("war army general war", f"1592-{month:02d}-01"))
    for month in range(1, 7):
        rows.append(("moon halo comet moon", f"1700-{month:02d}-01"))
    return docs_from(rows)


class TestReports:
    @pytest.fixture(scope="class")
    def model(self):
        m = TP.build_term_date_matrix(two_topic_corpus(), term_port=str.split)
        return TP.nmf_fit(m, k=2, alpha=0.1, max_iter=300, seed=0)

    def test_planted_topics_separate(self, model):
        report = TP.topic_report(model, top_n=2)
        groups = [{t["term"] for t in topic["terms"]} for topic in report]
        war, astro = {"war", "army", "general"}, {"moon", "halo", "comet"}
        assert any(g <= war for g in groups) and any(g <= astro for g in groups)

    def test_topn_one_is_argmax(self, model):
        report = TP.topic_report(model, top_n=1)
        w_norm, _ = TP.normalized_factors(model)
        for topic in report:
            k = topic["topic"]
            best = topic["terms"][0]["term"]
            assert model.terms.index(best) == int(np.argmax(w_norm[:, k]))

    def test_report_weights_non_increasing_and_normalized(self, model):
        report = TP.topic_report(model, top_n=len(model.terms))
        for topic in report:
            weights = [t["weight"] for t in topic["terms"]]
            assert all(a >= b for a, b in zip(weights, weights[1:]))
            assert sum(weights) == pytest.approx(1.0, abs=1e-9)

    def test_topn_clamped_with_warning(self, model):
        with pytest.warns(UserWarning):
            report = TP.topic_report(model, top_n=10_000)
        assert len(report[0]["terms"]) == len(model.terms)


class TestTimeseries:
    def impulse_model(self):
        dates = [f"d{i}" for i in range(7)]
        h = np.zeros((7, 1))
        h[3, 0] = 1.0
        return TP.TopicModel(
            w=np.ones((4, 1)), h=h, k=1, alpha=0.0,
            terms=list("abcd"), dates=dates,
        )

    def test_window_one_is_identity(self):
        model = self.impulse_model()
        series = TP.topic_timeseries(model, window=1)[0]
        assert [v for _, v in series] == model.h[:, 0].tolist()

    def test_impulse_spreads_one_third(self):
        series = TP.topic_timeseries(self.impulse_model(), window=3)[0]
        values = [v for _, v in series]
        assert values[2] == pytest.approx(1 / 3)
        assert values[3] == pytest.approx(1 / 3)
        assert values[4] == pytest.approx(1 / 3)
        assert values[0] == values[6] == 0.0

    def test_constant_column_stays_constant(self):
        model = self.impulse_model()
        model.h[:, 0] = 2.5
        series = TP.topic_timeseries(model, window=3)[0]
        assert all(v == pytest.approx(2.5) for _, v in series)

    def test_oversized_window_rejected(self):
        with pytest.raises(TP.TopicsError):
            TP.topic_timeseries(self.impulse_model(), window=8)

    def test_csv_and_json_outputs(self, tmp_path):
        m = TP.build_term_date_matrix(two_topic_corpus(), term_port=str.split)
        model = TP.nmf_fit(m, k=2, alpha=0.1, max_iter=100, seed=0)
        payload = TP.write_topics_json(tmp_path / "topics.json", model, top_n=3)
        assert len(payload["topics"]) == 2
        paths = TP.write_timeseries_csv(tmp_path / "series", model, window=3)
        assert len(paths) == 2
        header = open(paths[0]).readline().strip()
        assert header == "date,value"
