from __future__ import annotations

import numpy as np
import pytest

from casepath.datamodel import LABEL_ATRISK, default_schema, save_panel
from casepath.synthetic import PlantedRule, SyntheticConfig, evaluate_rules, generate_synthetic
from helpers import small_schema

RULES = (PlantedRule("gpa", 30.0, "le"), PlantedRule("debt", 60.0, "gt"))


def config(**overrides):
    base = dict(n_cases=200, positive_share=0.75, planted_rules=RULES, seed=42)
    base.update(overrides)
    return SyntheticConfig(**base)


def test_zero_cases_gives_empty_panel():
    panel = generate_synthetic(config(n_cases=0), small_schema())
    assert len(panel.records) == 0


def test_same_seed_byte_identical(tmp_path):
    schema = small_schema()
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    save_panel(generate_synthetic(config(), schema), str(a))
    save_panel(generate_synthetic(config(), schema), str(b))
    assert a.read_bytes() == b.read_bytes()


def test_different_seed_differs(tmp_path):
    schema = small_schema()
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    save_panel(generate_synthetic(config(), schema), str(a))
    save_panel(generate_synthetic(config(seed=43), schema), str(b))
    assert a.read_bytes() != b.read_bytes()


def test_noiseless_labels_match_planted_rules_row_by_row():
    schema = small_schema()
    panel = generate_synthetic(config(n_cases=500, label_noise=0.0), schema)
    assert len(panel.records) == 2000
    for rec in panel.records:
        rule_at_risk = evaluate_rules(RULES, rec, schema)
        assert (rec.outcome == LABEL_ATRISK) == rule_at_risk
    share = sum(1 for r in panel.records if r.outcome == "Grad4yr") / len(panel.records)
    assert 0.72 <= share <= 0.78


def test_label_noise_flip_rate():
    schema = small_schema()
    panel = generate_synthetic(config(n_cases=800, label_noise=0.2), schema)
    # one flip decision per student, applied to all four of their records
    students = {}
    for rec in panel.records:
        students.setdefault(rec.student_id, []).append(rec)
    flipped = 0
    for recs in students.values():
        rule_risk = evaluate_rules(RULES, recs[0], schema)
        label_risk = recs[0].outcome == LABEL_ATRISK
        assert all((r.outcome == LABEL_ATRISK) == label_risk for r in recs)
        assert all(evaluate_rules(RULES, r, schema) == rule_risk for r in recs)
        if rule_risk != label_risk:
            flipped += 1
    assert 0.15 <= flipped / len(students) <= 0.25


def test_missing_rate_applied_outside_rule_features():
    schema = small_schema()
    panel = generate_synthetic(
        config(n_cases=500, missing_rate={"enrollment": 0.3}), schema
    )
    missing = sum(1 for r in panel.records if r.panel_fields["enrollment"] is None)
    rate = missing / len(panel.records)
    assert 0.25 <= rate <= 0.35
    assert all(r.panel_fields["gpa"] is not None for r in panel.records)


def test_conditioned_sampling_with_tight_region():
    # the satisfying region has tiny marginal mass; labels must still be exact
    schema = small_schema()
    rules = (PlantedRule("gpa", -500.0, "le"),)
    panel = generate_synthetic(config(planted_rules=rules, n_cases=100), schema)
    for rec in panel.records:
        assert (rec.outcome == LABEL_ATRISK) == evaluate_rules(rules, rec, schema)


def test_categorical_rule():
    schema = small_schema()
    rules = (PlantedRule("enrollment", "Part Time", "eq"),)
    panel = generate_synthetic(config(planted_rules=rules, n_cases=300), schema)
    for rec in panel.records:
        assert (rec.outcome == LABEL_ATRISK) == (rec.panel_fields["enrollment"] == "Part Time")


def test_default_schema_marginals_roughly_calibrated():
    panel = generate_synthetic(
        SyntheticConfig(n_cases=400, positive_share=0.75, planted_rules=(), seed=7), default_schema()
    )
    year1 = [r.panel_fields["creditsTowardsdegree"] for r in panel.for_year(1)]
    year4 = [r.panel_fields["creditsTowardsdegree"] for r in panel.for_year(4)]
    assert 20 < np.mean(year1) < 50
    assert 90 < np.mean(year4) < 140
    gpas = [r.panel_fields["gpacumulativecurrent"] for r in panel.for_year(2)]
    assert all(0.0 <= g <= 4.0 for g in gpas)
    debt = [r.panel_fields["totalloandebt"] for r in panel.for_year(1)]
    assert np.median(debt) == 0.0


class TestConfigValidation:
    def test_unknown_rule_feature(self):
        with pytest.raises(ValueError, match="unknown feature"):
            generate_synthetic(config(planted_rules=(PlantedRule("nope", 1.0, "le"),)), small_schema())

    def test_wrong_direction_for_kind(self):
        with pytest.raises(ValueError, match="'le' or 'gt'"):
            generate_synthetic(config(planted_rules=(PlantedRule("gpa", 1.0, "eq"),)), small_schema())

    def test_category_outside_domain(self):
        with pytest.raises(ValueError, match="domain"):
            generate_synthetic(
                config(planted_rules=(PlantedRule("enrollment", "Night", "eq"),)), small_schema()
            )

    def test_noise_bounds(self):
        with pytest.raises(ValueError, match="label_noise"):
            generate_synthetic(config(label_noise=0.5), small_schema())

    def test_share_bounds(self):
        with pytest.raises(ValueError, match="positive_share"):
            generate_synthetic(config(positive_share=1.0), small_schema())
