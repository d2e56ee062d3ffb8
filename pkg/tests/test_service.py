from __future__ import annotations

import json

import pytest
from fastapi.testclient import TestClient

from casepath.explain import (
    VARIANT_BASIC,
    VARIANT_WITH_KB,
    BundleStore,
    GenerationSettings,
    MockBackend,
    default_knowledge_base,
    explain_case,
    render_case_data,
)
from casepath.service import create_app
from casepath.tree import Hyperparameters, train
from casepath.datamodel import build_matrix
from casepath.usability import DIMENSIONS, create_session
from helpers import make_panel


@pytest.fixture(scope="module")
def fixture_paths(tmp_path_factory):
    """Bundle store + session + empty rating store built from a real panel."""
    tmp = tmp_path_factory.mktemp("service")
    rows = []
    for i in range(12):
        outcome = "NoGrad4yr" if i % 4 == 0 else "Grad4yr"
        rows.append((f"s{i}", 1, float(i % 7), float(i * 13 % 90), "Full Time" if i % 3 else "Part Time", outcome))
    panel = make_panel(rows)
    matrix = build_matrix(panel, 1)
    tree = train(matrix, Hyperparameters("gini", 3, 2))
    backend = MockBackend()
    kb = default_knowledge_base()
    settings = GenerationSettings(backoff_seconds=0.0)

    bundles = []
    for i, rec in enumerate(panel.for_year(1)[:6]):
        rendering = render_case_data(panel, rec.student_id, 1)
        row = matrix.values[i]
        variant = VARIANT_WITH_KB if i % 2 else VARIANT_BASIC
        bundles.append(
            explain_case(
                tree, rec.student_id, row, rendering, variant, backend,
                kb=kb if variant == VARIANT_WITH_KB else None, settings=settings,
            )
        )
    bundles_path = tmp / "bundles.jsonl"
    store = BundleStore(str(bundles_path))
    for b in bundles:
        store.append(b)
    session = create_session(bundles, ["tok-r1", "tok-r2", "tok-r3"], session_id="s-fixture")
    session_path = tmp / "session.json"
    session.save(str(session_path))
    ratings_path = tmp / "ratings.jsonl"
    return str(bundles_path), str(session_path), str(ratings_path), bundles


@pytest.fixture()
def client(fixture_paths, tmp_path):
    bundles_path, session_path, _, _ = fixture_paths
    ratings_path = str(tmp_path / "ratings.jsonl")  # fresh store per test
    app = create_app(bundles_path, session_path, ratings_path)
    return TestClient(app)


def rating_body(bundle_id, rater="tok-r1", **overrides):
    scores = {dim: 4 for dim in DIMENSIONS}
    scores.update(overrides)
    return {"bundle_id": bundle_id, "rater_id": rater, "scores": scores, "comment": ""}


class TestHealthAndSession:
    def test_healthz(self, client):
        response = client.get("/healthz")
        assert response.status_code == 200
        assert response.json() == {"status": "ok"}

    def test_session_metadata_is_blinded(self, client):
        response = client.get("/api/session")
        assert response.status_code == 200
        payload = response.json()
        assert payload["session_id"] == "s-fixture"
        assert payload["blinded"] is True
        assert payload["n_bundles"] == 6
        assert payload["dimensions"] == list(DIMENSIONS)
        assert payload["anchors"]["1"] == "Strongly disagree"
        assert payload["anchors"]["5"] == "Strongly agree"
        assert "variant" not in json.dumps(payload)


class TestExplanations:
    def test_requires_known_rater(self, client):
        assert client.get("/api/explanations").status_code == 400
        response = client.get("/api/explanations", params={"rater": "who"})
        assert response.status_code == 400
        assert response.json()["code"] == "unknown_rater"

    def test_pending_payloads_blinded_across_all_fixtures(self, client, fixture_paths):
        kb = default_knowledge_base()
        response = client.get("/api/explanations", params={"rater": "tok-r1"})
        assert response.status_code == 200
        payload = response.json()
        assert payload["total"] == 6
        assert len(payload["pending"]) == 6
        text = json.dumps(payload)
        assert '"variant"' not in text
        assert "with_kb" not in text
        for entry in kb.best_practices:
            assert entry.text[:48] not in text
        for item in payload["pending"]:
            assert set(item) == {"bundle_id", "case_alias", "cohort_year", "case_data", "explanation"}

    def test_rated_bundles_drop_from_pending(self, client):
        first = client.get("/api/explanations", params={"rater": "tok-r1"}).json()["pending"][0]
        assert client.post("/api/ratings", json=rating_body(first["bundle_id"])).status_code == 201
        after = client.get("/api/explanations", params={"rater": "tok-r1"}).json()
        assert after["done"] == 1
        assert all(item["bundle_id"] != first["bundle_id"] for item in after["pending"])
        # other raters unaffected
        other = client.get("/api/explanations", params={"rater": "tok-r2"}).json()
        assert other["done"] == 0


class TestPostRating:
    def test_valid_rating_created(self, client, fixture_paths):
        *_, bundles = fixture_paths
        response = client.post("/api/ratings", json=rating_body(bundles[0].bundle_id))
        assert response.status_code == 201
        assert response.json()["rating_id"].startswith("r-")

    def test_score_zero_gives_400_with_pointer(self, client, fixture_paths):
        *_, bundles = fixture_paths
        response = client.post("/api/ratings", json=rating_body(bundles[0].bundle_id, Clarity=0))
        assert response.status_code == 400
        body = response.json()
        assert body["field"] == "/scores/Clarity"
        assert body["code"] == "invalid_rating"

    def test_unknown_bundle_404(self, client):
        response = client.post("/api/ratings", json=rating_body("b-nope"))
        assert response.status_code == 404
        assert response.json()["code"] == "unknown_bundle"

    def test_duplicate_409(self, client, fixture_paths):
        *_, bundles = fixture_paths
        body = rating_body(bundles[1].bundle_id)
        assert client.post("/api/ratings", json=body).status_code == 201
        response = client.post("/api/ratings", json=body)
        assert response.status_code == 409
        assert response.json()["code"] == "duplicate_rating"

    def test_unknown_rater_rejected(self, client, fixture_paths):
        *_, bundles = fixture_paths
        response = client.post("/api/ratings", json=rating_body(bundles[0].bundle_id, **{}) | {"rater_id": "nope"})
        assert response.status_code == 400
        assert response.json()["code"] == "unknown_rater"

    def test_invalid_json_400(self, client):
        response = client.post("/api/ratings", content=b"{not json", headers={"Content-Type": "application/json"})
        assert response.status_code == 400
        assert response.json()["code"] == "invalid_json"


class TestSummary:
    def test_empty_store(self, client):
        response = client.get("/api/summary")
        assert response.status_code == 200
        assert response.json() == {"n_ratings": 0, "summaries": []}

    def test_aggregates_after_ratings(self, client, fixture_paths):
        *_, bundles = fixture_paths
        client.post("/api/ratings", json=rating_body(bundles[0].bundle_id, Utility=3))
        client.post("/api/ratings", json=rating_body(bundles[1].bundle_id, Utility=5))
        payload = client.get("/api/summary").json()
        assert payload["n_ratings"] == 2
        utility = next(s for s in payload["summaries"] if s["dimension"] == "Utility")
        assert utility["mean"] == pytest.approx(4.0)
        assert utility["n"] == 2

    def test_session_missing_bundle_fails_fast(self, fixture_paths, tmp_path):
        bundles_path, session_path, _, bundles = fixture_paths
        session = json.loads(open(session_path).read())
        session["bundles"].append(
            {"bundle_id": "b-ghost", "case_alias": "case-99", "variant": "basic", "student_id": "sx", "cohort_year": 1}
        )
        bad_session = tmp_path / "bad_session.json"
        bad_session.write_text(json.dumps(session))
        with pytest.raises(ValueError, match="absent"):
            create_app(bundles_path, str(bad_session), str(tmp_path / "r.jsonl"))
