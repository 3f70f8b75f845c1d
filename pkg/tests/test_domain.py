"""Tests for categories, vocabulary, record validation and datasets."""

import math
from datetime import date

import hypothesis.strategies as st
import pytest
from hypothesis import assume, given, settings

from bias_audit.domain import (
    RACE_ETHNICITY_LABELS,
    UNKNOWN,
    AuditDataset,
    DemographicCategory,
    GroupingMode,
    Phase,
    StageOutcome,
    VocabularyConfig,
    canonicalize_category,
    load_vocabulary,
    normalize_label,
    sort_categories,
    validate_record,
)
from bias_audit.errors import (
    ConfigError,
    DatasetErrors,
    EmptyDataset,
    UnknownLabel,
    UnknownStage,
)
from tests.builders import A, N, X, record


@pytest.fixture(scope="module")
def vocab() -> VocabularyConfig:
    return load_vocabulary()


# ── Categories ───────────────────────────────────────────────────────


def test_category_grouping_follows_collapsed_coordinates():
    assert DemographicCategory("female", "asian").grouping is GroupingMode.INTERSECTIONAL
    assert DemographicCategory("female", None).grouping is GroupingMode.BY_SEX
    assert DemographicCategory(None, "asian").grouping is GroupingMode.BY_RACE_ETHNICITY


def test_category_rejects_non_canonical_labels():
    with pytest.raises(ValueError):
        DemographicCategory("Female", "asian")
    with pytest.raises(ValueError):
        DemographicCategory(None, None)


def test_collapse_and_covers():
    cell = DemographicCategory("male", "hispanic_latino")
    by_sex = cell.collapse(GroupingMode.BY_SEX)
    assert by_sex == DemographicCategory("male", None)
    assert by_sex.covers(cell)
    assert not DemographicCategory("female", None).covers(cell)


def test_unknown_on_either_axis():
    assert DemographicCategory(UNKNOWN, "asian").is_unknown
    assert DemographicCategory(None, UNKNOWN).is_unknown
    assert not DemographicCategory("female", None).is_unknown


def test_canonical_order_is_race_then_sex():
    cats = [
        DemographicCategory("male", "white"),
        DemographicCategory("female", "white"),
        DemographicCategory("male", "asian"),
    ]
    labels = [c.label for c in sort_categories(cats)]
    assert labels == ["male / asian", "female / white", "male / white"]


def test_table_one_has_eight_race_labels():
    assert len(RACE_ETHNICITY_LABELS) == 8


# ── Vocabulary ───────────────────────────────────────────────────────


def test_normalize_label_collapses_case_and_whitespace():
    assert normalize_label("  Black   or African  American ") == "black or african american"
    assert normalize_label(None) == ""


def test_canonicalize_table_one_labels(vocab: VocabularyConfig):
    cat = canonicalize_category("Female", "Asian alone, not hispanic or latino", vocab)
    assert cat == DemographicCategory("female", "asian")


def test_canonicalize_empty_is_unknown(vocab: VocabularyConfig):
    assert canonicalize_category("", "", vocab) == DemographicCategory(UNKNOWN, UNKNOWN)


def test_canonicalize_unknown_label_raises_with_row(vocab: VocabularyConfig):
    with pytest.raises(UnknownLabel) as exc_info:
        canonicalize_category("MALE", "Martian", vocab, row=7)
    assert exc_info.value.row == 7
    assert exc_info.value.column == "race_ethnicity"
    assert exc_info.value.context["value"] == "Martian"


def test_vocabulary_stage_outcome_aliases(vocab: VocabularyConfig):
    assert vocab.outcome("Yes") is StageOutcome.ADVANCED
    assert vocab.outcome("rejected") is StageOutcome.NOT_ADVANCED
    assert vocab.outcome("") is StageOutcome.NOT_REACHED
    assert vocab.outcome("maybe") is None


def test_vocabulary_conflicting_alias_is_config_error():
    with pytest.raises(ConfigError):
        VocabularyConfig.from_dict({"sex": {"female": ["x"], "male": ["x"]}})


# ── Record validation ────────────────────────────────────────────────


def test_monotone_funnel_is_ok():
    assert validate_record(record(outcomes=(A, N, X))).ok


def test_advanced_after_rejection():
    result = validate_record(record(outcomes=(N, A), stages=("screen", "interview")))
    assert result.codes == ["advanced_after_rejection"]


def test_reached_after_truncation():
    result = validate_record(record(outcomes=(A, X, N)))
    assert "reached_after_truncation" in result.codes


def test_non_finite_score_and_feature():
    result = validate_record(record(score=math.inf, features={"x": math.nan}))
    assert set(result.codes) == {"non_finite_score", "non_finite_feature"}


def test_empty_id_violation():
    assert "empty_id" in validate_record(record(rid=" ")).codes


FIVE_STAGES = tuple(f"s{i}" for i in range(5))


@st.composite
def valid_funnels(draw):
    """Advanced at a prefix of stages, then one rejection or truncation."""
    advanced = draw(st.integers(0, len(FIVE_STAGES)))
    tail = len(FIVE_STAGES) - advanced
    if tail and draw(st.booleans()):
        return [A] * advanced + [N] + [X] * (tail - 1)
    return [A] * advanced + [X] * tail


@settings(max_examples=300, deadline=None)
@given(valid_funnels())
def test_generated_funnels_validate(outcomes):
    assert validate_record(record(outcomes=outcomes, stages=FIVE_STAGES)).ok


@settings(max_examples=300, deadline=None)
@given(valid_funnels(), st.data())
def test_advancing_after_the_funnel_ends_is_caught(outcomes, data):
    stop = next((i for i, o in enumerate(outcomes) if o is not A), None)
    assume(stop is not None and stop < len(outcomes) - 1)
    pos = data.draw(st.integers(stop + 1, len(outcomes) - 1))
    mutated = list(outcomes)
    mutated[pos] = A
    codes = validate_record(record(outcomes=mutated, stages=FIVE_STAGES)).codes
    expected = "advanced_after_rejection" if outcomes[stop] is N else "reached_after_truncation"
    assert expected in codes


# ── Datasets ─────────────────────────────────────────────────────────


def test_empty_dataset_rejected():
    with pytest.raises(EmptyDataset):
        AuditDataset(records=())


def test_dataset_collects_all_problems():
    with pytest.raises(DatasetErrors) as exc_info:
        AuditDataset(
            records=(
                record("R1"),
                record("R1"),
                record("R2", outcomes=(N, A)),
            )
        )
    codes = sorted(i.code for i in exc_info.value.issues)
    assert codes == ["duplicate_id", "invalid_record"]


def test_as_of_defaults_to_latest_event_date():
    ds = AuditDataset(
        records=(
            record("R1", event_date=date(2024, 1, 5)),
            record("R2", event_date=date(2024, 4, 30)),
        )
    )
    assert ds.as_of_date == date(2024, 4, 30)


def test_subset_by_phase():
    ds = AuditDataset(records=(record("R1"), record("R2", phase=Phase.INPUT)))
    assert ds.phases == frozenset({Phase.INPUT, Phase.OUTPUT})
    assert [r.id for r in ds.subset(Phase.INPUT).records] == ["R2"]
    with pytest.raises(EmptyDataset):
        AuditDataset(records=(record("R1"),)).subset(Phase.INPUT)


def test_unknown_stage_lookup():
    ds = AuditDataset(records=(record("R1"),))
    assert ds.stage_index("interview") == 1
    with pytest.raises(UnknownStage):
        ds.stage_index("onsite")
