import numpy as np
import pytest
from scipy import stats

from eyedentify.errors import EnrollmentError, ProtocolError, TemplateMismatchError
from eyedentify.evaluation.identification import (
    EnrollmentTemplate,
    enroll,
    first_acceptance_time,
    identification_scores,
    load_template,
    match_embeddings,
    match_score,
    resample_protocol,
    run_identification,
    run_verification,
    save_template,
    time_to_identification,
)
from eyedentify.preprocessing.transforms import PreparedSequence
from eyedentify.pydantic_models.models import ProtocolSpec, WindowConfig

LENGTH = 64


def _sequence(user, session="sess0", n=640, seed=0):
    rng = np.random.default_rng(seed)
    return PreparedSequence(
        slow=np.tanh(0.3 * rng.standard_normal((n, 2))),
        fast=rng.standard_normal((n, 2)),
        rate=1000.0,
        subject_id=user,
        session_id=session,
    )


@pytest.fixture
def bundle(make_bundle):
    return make_bundle(seed=2, labels=("t1", "t2"), trained=True)


class TestEnroll:
    def test_window_count_and_determinism(self, bundle):
        seq = _sequence("u1")
        template = enroll(bundle, [seq], stride=LENGTH)
        assert template.user_id == "u1"
        assert template.embeddings.shape == (10, bundle.embedding_size)
        np.testing.assert_array_equal(enroll(bundle, [seq], stride=LENGTH).embeddings, template.embeddings)

    def test_several_sequences_are_pooled(self, bundle):
        template = enroll(bundle, [_sequence("u1", n=128), _sequence("u1", n=192, seed=1)], stride=LENGTH)
        assert len(template) == 5

    def test_mixed_users_rejected(self, bundle):
        with pytest.raises(EnrollmentError):
            enroll(bundle, [_sequence("u1"), _sequence("u2")], stride=LENGTH)

    def test_too_short_rejected(self, bundle):
        with pytest.raises(EnrollmentError):
            enroll(bundle, [_sequence("u1", n=LENGTH - 1)], stride=LENGTH)

    def test_self_match_is_one(self, bundle):
        seq = _sequence("u1")
        template = enroll(bundle, [seq], stride=LENGTH)
        trace = match_score(template, seq.windows(LENGTH, LENGTH), bundle)
        np.testing.assert_allclose(trace.scores, 1.0, atol=1e-9)

    def test_time_to_identification_on_enrolled_stream(self, bundle):
        seq = _sequence("u1")
        template = enroll(bundle, [seq], stride=LENGTH)
        assert time_to_identification(bundle, template, seq, threshold=0.99, stride=LENGTH) == pytest.approx(LENGTH / 1000.0)


class TestMatching:
    @pytest.fixture
    def trace(self):
        template = EnrollmentTemplate("u1", np.array([[1.0, 0.0]]))
        return match_embeddings(template, np.array([[0.0, 1.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]))

    def test_scores(self, trace):
        np.testing.assert_allclose(trace.scores, [0.0, 0.7071067811865475, 1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(trace.end_times, [1.0, 2.0, 3.0, 4.0])

    def test_running_max_is_monotone(self, trace):
        np.testing.assert_allclose(trace.running_max, [0.0, 0.7071067811865475, 1.0, 1.0], atol=1e-12)
        assert np.all(np.diff(trace.running_max) >= 0)

    def test_best_template_window_wins(self):
        template = EnrollmentTemplate("u1", np.array([[1.0, 0.0], [0.0, 1.0]]))
        np.testing.assert_allclose(match_embeddings(template, np.array([[0.0, 2.0]])).scores, [1.0])

    @pytest.mark.parametrize("threshold, expected", [(-1.0, 1.0), (0.5, 2.0), (0.99, 3.0), (1.0, None)])
    def test_first_acceptance_time(self, trace, threshold, expected):
        assert first_acceptance_time(trace, threshold) == expected

    def test_empty_template_rejected(self):
        with pytest.raises(EnrollmentError):
            EnrollmentTemplate("u1", np.empty((0, 4)))


def test_identification_scores():
    similarities = {
        ("a", "a"): np.array([0.2, 0.9]),
        ("a", "b"): np.array([0.4, 0.1]),
        ("b", "a"): np.array([0.3, 0.5]),
        ("b", "b"): np.array([0.8, 0.6]),
        ("c", "a"): np.array([0.7, 0.95]),
        ("c", "b"): np.array([0.1, 0.2]),
    }
    counts = {"a": 1, "b": 2, "c": 1}
    scores = identification_scores(similarities, counts, enrolled=["a", "b"], impostors=["c"])
    assert sorted(scores["genuine"]) == [0.2, 0.8]
    assert sorted(scores["confusion"]) == [0.4, 0.5]
    assert sorted(scores["impostor"]) == [0.1, 0.7]


def test_identification_scores_skip_users_without_windows():
    similarities = {(u, t): np.array([0.5]) for u in "ab" for t in "ab"}
    scores = identification_scores(similarities, {"a": 0, "b": 1}, enrolled=["a"], impostors=["b"])
    assert scores == {"genuine": [], "confusion": [], "impostor": [0.5]}


class TestResampleProtocol:
    IDENTITIES = [f"s{i}" for i in range(10)]

    def test_disjoint_sets_of_requested_sizes(self):
        split = resample_protocol(self.IDENTITIES, ProtocolSpec(), 0)
        assert (len(split.train), len(split.enrolled), len(split.impostors)) == (6, 3, 1)
        assert set(split.train) | set(split.enrolled) | set(split.impostors) == set(self.IDENTITIES)
        assert not set(split.train) & set(split.enrolled)
        assert not set(split.enrolled) & set(split.impostors)

    def test_same_seed_same_partition(self):
        assert resample_protocol(self.IDENTITIES, (6, 3, 1), 5) == resample_protocol(self.IDENTITIES, (6, 3, 1), 5)
        # input order does not matter
        assert resample_protocol(self.IDENTITIES[::-1], (6, 3, 1), 5) == resample_protocol(self.IDENTITIES, (6, 3, 1), 5)

    def test_too_few_identities(self):
        with pytest.raises(ProtocolError):
            resample_protocol(self.IDENTITIES[:9], (6, 3, 1), 0)

    def test_membership_is_hypergeometric(self):
        rng = np.random.default_rng(11)
        draws = 2000
        tracked = set(self.IDENTITIES[:4])
        observed = np.zeros(5)
        for _ in range(draws):
            observed[len(tracked & set(resample_protocol(self.IDENTITIES, (6, 3, 1), rng).train))] += 1
        expected = stats.hypergeom(10, 4, 6).pmf(np.arange(5)) * draws
        assert stats.chisquare(observed, expected).pvalue > 1e-3


class TestTemplateFiles:
    def test_save_and_load(self, tmp_path):
        template = EnrollmentTemplate("u1", np.arange(6.0).reshape(2, 3), checkpoint_digest="abc")
        path = save_template(str(tmp_path / "u1.npz"), template)
        loaded = load_template(path, expected_digest="abc")
        assert loaded.user_id == "u1"
        assert loaded.checkpoint_digest == "abc"
        np.testing.assert_array_equal(loaded.embeddings, template.embeddings)

    def test_digest_mismatch(self, tmp_path):
        path = save_template(str(tmp_path / "u1.npz"), EnrollmentTemplate("u1", np.ones((1, 3)), checkpoint_digest="abc"))
        with pytest.raises(TemplateMismatchError):
            load_template(path, expected_digest="def")

    def test_missing_digest_loads_as_none(self, tmp_path):
        path = save_template(str(tmp_path / "u1.npz"), EnrollmentTemplate("u1", np.ones((1, 3))))
        assert load_template(path).checkpoint_digest is None


class TestProtocol:
    USERS = ("u1", "u2", "u3", "u4")
    SPEC = ProtocolSpec(enrolled_identities=2, impostor_identities=1, iterations=3, durations=[0.128, 0.256])
    WINDOWS = WindowConfig(length=LENGTH, eval_stride=32, enroll_stride=LENGTH)

    @pytest.fixture
    def sessions(self):
        users = self.USERS + ("t1",)
        enroll_seqs = {u: [_sequence(u, "sess0", n=320, seed=i)] for i, u in enumerate(users)}
        test_seqs = {u: [_sequence(u, "sess1", n=256, seed=100 + i)] for i, u in enumerate(users)}
        return enroll_seqs, test_seqs

    def test_identification_report(self, bundle, sessions):
        report = run_identification(bundle, *sessions, self.SPEC, self.WINDOWS, seed=1)
        assert {(r["setting"], r["duration_s"]) for r in report.summary} == {
            (s, d) for s in ("confusion", "impostor") for d in (0.128, 0.256)
        }
        assert all(r["iterations"] == 3 for r in report.summary)
        assert all(0.0 <= r["auc"] <= 1.0 and 0.0 <= r["eer"] <= 1.0 for r in report.iterations)
        assert set(report.curves) == {(r["setting"], r["duration_s"]) for r in report.summary}
        assert [r["attempts"] for r in report.time_to_identification] == [6, 6]

    def test_pooled_curve_counts(self, bundle, sessions):
        report = run_identification(bundle, *sessions, self.SPEC, self.WINDOWS, seed=1)
        # 3 iterations of 2 genuine, 2 confusion and 2 impostor scores
        curve = report.curves[("confusion", 0.256)]
        assert (curve.genuine_count, curve.impostor_count) == (6, 6)
        assert report.curves[("impostor", 0.256)].impostor_count == 6

    def test_same_seed_same_report(self, bundle, sessions):
        a = run_identification(bundle, *sessions, self.SPEC, self.WINDOWS, seed=4)
        b = run_identification(bundle, *sessions, self.SPEC, self.WINDOWS, seed=4)
        assert a.iterations == b.iterations

    def test_verification_report(self, bundle, sessions):
        report = run_verification(bundle, *sessions, self.SPEC, self.WINDOWS, seed=1)
        assert {r["setting"] for r in report.summary} == {"verification"}
        assert report.time_to_identification[0]["attempts"] == 3

    def test_training_identities_are_left_out(self, bundle, sessions):
        spec = self.SPEC.model_copy(update={"enrolled_identities": 4})
        with pytest.raises(ProtocolError):
            run_identification(bundle, *sessions, spec, self.WINDOWS)
