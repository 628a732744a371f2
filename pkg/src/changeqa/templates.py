"""The fixed 40-question schedule: categories, templates, answer vocabulary.

Template texts are version-pinned; template_ids are the stable contract, so
golden files survive rewording. The answer vocabulary is the closure of every
rule output (including degenerate-scene sentinels) with stable indices.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum


class QuestionCategory(Enum):
    DAMAGE_DETECTION = "damage_detection"
    QUANTITATIVE = "quantitative"
    COMPARATIVE = "comparative"
    SEVERITY = "severity"
    SPATIAL = "spatial"
    CONTEXTUAL = "contextual"
    THRESHOLD = "threshold"
    RECOVERY = "recovery"


# Per-image question counts, in category order above. Sums to 40.
CATEGORY_SCHEDULE = {
    QuestionCategory.DAMAGE_DETECTION: 6,
    QuestionCategory.QUANTITATIVE: 8,
    QuestionCategory.COMPARATIVE: 6,
    QuestionCategory.SEVERITY: 4,
    QuestionCategory.SPATIAL: 2,
    QuestionCategory.CONTEXTUAL: 4,
    QuestionCategory.THRESHOLD: 6,
    QuestionCategory.RECOVERY: 4,
}

QUESTIONS_PER_IMAGE = sum(CATEGORY_SCHEDULE.values())

THRESHOLD_VALUES = (5, 10, 25, 50, 75, 90)


class SeverityLevel(Enum):
    NO_DAMAGE = "No damage"
    MINOR = "Minor damage"
    MODERATE = "Moderate damage"
    SEVERE = "Severe damage"
    EXTENSIVE = "Extensive damage"


class SpatialPattern(Enum):
    CONCENTRATED = "Concentrated in one area"
    SPREAD = "Spread throughout"
    NO_DESTRUCTION = "No destruction"


# Sentinel answers for degenerate scenes.
NO_BUILDINGS = "No buildings"

YES = "Yes"
NO = "No"

PERCENT_BUCKETS = tuple(f"{10 * k}-{10 * (k + 1)}%" for k in range(10))

RESILIENCE_CLASSES = ("High", "Moderate", "Low")

RESPONSE_CLASSES = ("Major", "Minor")


def bucket(p: int) -> str:
    """Decile bucket for an integer percent; half-open [10k, 10k+10), 100 clamps."""
    if not 0 <= p <= 100:
        raise ValueError(f"percent out of range: {p}")
    return PERCENT_BUCKETS[min(p // 10, 9)]


# Ordered, deduplicated closure of every answer a rule can emit.
ANSWER_VOCABULARY: tuple[str, ...] = (
    YES,
    NO,
    "Damaged",
    "Destroyed",
    "Intact",
    "Affected",
    *(s.value for s in SeverityLevel),
    *(s.value for s in SpatialPattern),
    *PERCENT_BUCKETS,
    *RESILIENCE_CLASSES,
    *RESPONSE_CLASSES,
    NO_BUILDINGS,
)

ANSWER_INDEX = {token: i for i, token in enumerate(ANSWER_VOCABULARY)}

assert len(ANSWER_INDEX) == len(ANSWER_VOCABULARY), "vocabulary tokens must be distinct"


@dataclass(frozen=True)
class QATemplate:
    template_id: str
    category: QuestionCategory
    question: str
    answer_rule: str
    threshold: int | None = None


@dataclass(frozen=True)
class QAItem:
    image_id: str
    template_id: str
    category: QuestionCategory
    question: str
    answer: str

    def __post_init__(self):
        if self.answer not in ANSWER_INDEX:
            raise ValueError(f"answer {self.answer!r} not in vocabulary")


def _t(tid, cat, question, rule, threshold=None):
    return QATemplate(tid, cat, question, rule, threshold)


TEMPLATE_REGISTRY: tuple[QATemplate, ...] = (
    # Damage detection (6)
    _t("dd_intact_present", QuestionCategory.DAMAGE_DETECTION,
       "Are there any intact buildings in the area?", "intact_present"),
    _t("dd_damaged_present", QuestionCategory.DAMAGE_DETECTION,
       "Are there any damaged buildings in the area?", "damaged_present"),
    _t("dd_destroyed_present", QuestionCategory.DAMAGE_DETECTION,
       "Are there any destroyed buildings in the area?", "destroyed_present"),
    _t("dd_buildings_present", QuestionCategory.DAMAGE_DETECTION,
       "Are there any buildings in the area?", "buildings_present"),
    _t("dd_damage_evidence", QuestionCategory.DAMAGE_DETECTION,
       "Is there any evidence of structural damage in the area?", "damage_evidence"),
    _t("dd_all_intact", QuestionCategory.DAMAGE_DETECTION,
       "Are all buildings in the area intact?", "all_intact"),
    # Quantitative (8)
    _t("qt_pct_intact_total", QuestionCategory.QUANTITATIVE,
       "What percentage of the area contains intact buildings?", "pct_total_intact"),
    _t("qt_pct_damaged_total", QuestionCategory.QUANTITATIVE,
       "What percentage of the area contains damaged buildings?", "pct_total_damaged"),
    _t("qt_pct_destroyed_total", QuestionCategory.QUANTITATIVE,
       "What percentage of the area contains destroyed buildings?", "pct_total_destroyed"),
    _t("qt_pct_background_total", QuestionCategory.QUANTITATIVE,
       "What percentage of the area is background?", "pct_total_background"),
    _t("qt_pct_intact_buildings", QuestionCategory.QUANTITATIVE,
       "What percentage of the buildings are intact?", "pct_building_intact"),
    _t("qt_pct_damaged_buildings", QuestionCategory.QUANTITATIVE,
       "What percentage of the buildings are damaged?", "pct_building_damaged"),
    _t("qt_pct_destroyed_buildings", QuestionCategory.QUANTITATIVE,
       "What percentage of the buildings are destroyed?", "pct_building_destroyed"),
    _t("qt_pct_buildings_total", QuestionCategory.QUANTITATIVE,
       "What percentage of the area is covered by buildings?", "pct_total_building"),
    # Comparative (6)
    _t("cp_dominant_destruction", QuestionCategory.COMPARATIVE,
       "What is the dominant destruction type, damaged or destroyed?", "dominant_destruction"),
    _t("cp_intact_vs_affected", QuestionCategory.COMPARATIVE,
       "Are buildings in the area mostly intact or affected?", "intact_vs_affected"),
    _t("cp_more_damaged_than_destroyed", QuestionCategory.COMPARATIVE,
       "Are there more damaged buildings than destroyed buildings?", "more_damaged_than_destroyed"),
    _t("cp_more_destroyed_than_damaged", QuestionCategory.COMPARATIVE,
       "Are there more destroyed buildings than damaged buildings?", "more_destroyed_than_damaged"),
    _t("cp_more_intact_than_damaged", QuestionCategory.COMPARATIVE,
       "Are there more intact buildings than damaged buildings?", "more_intact_than_damaged"),
    _t("cp_more_intact_than_destroyed", QuestionCategory.COMPARATIVE,
       "Are there more intact buildings than destroyed buildings?", "more_intact_than_destroyed"),
    # Severity (4)
    _t("sv_overall", QuestionCategory.SEVERITY,
       "What is the overall severity of destruction in the area?", "severity_overall"),
    _t("sv_widely_affected", QuestionCategory.SEVERITY,
       "Is the area widely affected by destruction?", "widely_affected"),
    _t("sv_catastrophic", QuestionCategory.SEVERITY,
       "Is the area catastrophically affected by destruction?", "catastrophically_affected"),
    _t("sv_affected_bucket", QuestionCategory.SEVERITY,
       "What percentage of the area is affected by destruction?", "affected_bucket"),
    # Spatial (2)
    _t("sp_pattern", QuestionCategory.SPATIAL,
       "How is the destruction distributed across the area?", "spatial_pattern"),
    _t("sp_concentrated_yn", QuestionCategory.SPATIAL,
       "Is the destruction concentrated in one area?", "concentrated_yn"),
    # Contextual (4)
    _t("cx_resilience", QuestionCategory.CONTEXTUAL,
       "What is the structural resilience of the area?", "resilience_class"),
    _t("cx_majority_intact", QuestionCategory.CONTEXTUAL,
       "Are the majority of buildings still intact?", "majority_intact"),
    _t("cx_buildings_present", QuestionCategory.CONTEXTUAL,
       "Does the area contain any buildings at all?", "any_buildings"),
    _t("cx_intact_bucket", QuestionCategory.CONTEXTUAL,
       "What share of the buildings remain intact?", "intact_share_bucket"),
    # Threshold (6)
    _t("th_5", QuestionCategory.THRESHOLD,
       "Is the destruction level below 5%?", "threshold", 5),
    _t("th_10", QuestionCategory.THRESHOLD,
       "Is the destruction level below 10%?", "threshold", 10),
    _t("th_25", QuestionCategory.THRESHOLD,
       "Does the destruction exceed 25% of the area?", "threshold", 25),
    _t("th_50", QuestionCategory.THRESHOLD,
       "Does the destruction exceed 50% of the area?", "threshold", 50),
    _t("th_75", QuestionCategory.THRESHOLD,
       "Does the destruction exceed 75% of the area?", "threshold", 75),
    _t("th_90", QuestionCategory.THRESHOLD,
       "Does the destruction exceed 90% of the area?", "threshold", 90),
    # Recovery assessment (4)
    _t("rc_reconstruction", QuestionCategory.RECOVERY,
       "Does the area require reconstruction?", "reconstruction_needed"),
    _t("rc_emergency", QuestionCategory.RECOVERY,
       "Are emergency services required in the area?", "emergency_needed"),
    _t("rc_habitable", QuestionCategory.RECOVERY,
       "Is the area habitable in its current state?", "habitable"),
    _t("rc_response", QuestionCategory.RECOVERY,
       "What level of response does the area require?", "response_level"),
)

TEMPLATE_INDEX = {t.template_id: i for i, t in enumerate(TEMPLATE_REGISTRY)}

assert len(TEMPLATE_REGISTRY) == QUESTIONS_PER_IMAGE
for _cat, _n in CATEGORY_SCHEDULE.items():
    assert sum(1 for _x in TEMPLATE_REGISTRY if _x.category is _cat) == _n


def registry_as_dicts() -> list[dict]:
    return [
        {
            "template_id": t.template_id,
            "category": t.category.value,
            "question": t.question,
            "answer_rule": t.answer_rule,
            **({"threshold": t.threshold} if t.threshold is not None else {}),
        }
        for t in TEMPLATE_REGISTRY
    ]


def dump_registry(path) -> None:
    """Write the template registry as a documentation JSON file."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(registry_as_dicts(), f, indent=2, ensure_ascii=False)
        f.write("\n")


def dump_vocabulary(path) -> None:
    """Write the answer vocabulary (token -> index) as JSON."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"answers": list(ANSWER_VOCABULARY)}, f, indent=2, ensure_ascii=False)
        f.write("\n")
