"""Answer rules for the eight question categories and the 40-item schedule.

Every answer is a deterministic function of the mask alone. Percentages that
the dataset rules floor are computed with exact integer arithmetic; ratios
used by thresholds and severity stay unfloored doubles.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .masks import ClassCounts, Label, SemanticMask, count_labels, destruction_percentage
from .templates import (
    CATEGORY_SCHEDULE,
    NO,
    NO_BUILDINGS,
    QAItem,
    QuestionCategory,
    SeverityLevel,
    SpatialPattern,
    TEMPLATE_REGISTRY,
    THRESHOLD_VALUES,
    YES,
    bucket,
)

_SENTINEL_NO_BUILDINGS = None  # percent_of_buildings returns None for this case


def _yn(flag: bool) -> str:
    return YES if flag else NO


def percent_of_total(counts: ClassCounts, label: Label) -> int:
    """floor(100 * N_label / N_total), exact integer arithmetic."""
    if counts.n_total <= 0:
        raise ValueError("n_total must be positive")
    return (100 * counts.of(label)) // counts.n_total


def percent_of_buildings(counts: ClassCounts, label: Label) -> int | None:
    """floor(100 * N_label / N_building); None when the scene has no buildings."""
    if label not in (Label.INTACT, Label.DAMAGED, Label.DESTROYED):
        raise ValueError(f"{label} is not a building class")
    if counts.n_building == 0:
        return None
    return (100 * counts.of(label)) // counts.n_building


def severity_level(os_percent: float) -> SeverityLevel:
    """Overall-severity class from the exact destruction percent."""
    if not 0.0 <= os_percent <= 100.0:
        raise ValueError(f"severity percent out of range: {os_percent}")
    if os_percent == 0:
        return SeverityLevel.NO_DAMAGE
    if os_percent < 10:
        return SeverityLevel.MINOR
    if os_percent < 30:
        return SeverityLevel.MODERATE
    if os_percent < 60:
        return SeverityLevel.SEVERE
    return SeverityLevel.EXTENSIVE


def resilience_ratio(counts: ClassCounts) -> float | None:
    """Intact share of building pixels; None when the scene has no buildings."""
    if counts.n_building == 0:
        return None
    return counts.n_intact / counts.n_building


def threshold_answer(p: float, t: int) -> str:
    """Piecewise threshold rule: low thresholds ask below, high ask above.

    T in {5,10}: Yes iff p < T. T in {25,50,75,90}: Yes iff p > T.
    Boundary p == T answers No for every T.
    """
    if t not in THRESHOLD_VALUES:
        raise ValueError(f"threshold {t} not in {THRESHOLD_VALUES}")
    if t in (5, 10):
        return _yn(p < t)
    return _yn(p > t)


def spatial_pattern(mask: SemanticMask, sigma_mode: str = "std") -> SpatialPattern:
    """Concentrated vs spread classification of the destruction pixels.

    Distances of destruction pixels from their centroid are compared against
    sigma; concentrated iff more than 70% fall strictly inside. ``sigma_mode``
    "std" uses the population standard deviation of the distances (default),
    "rms" uses the RMS distance from the centroid.
    """
    arr = mask.labels
    ys, xs = np.nonzero((arr == Label.DAMAGED) | (arr == Label.DESTROYED))
    n = xs.size
    if n == 0:
        return SpatialPattern.NO_DESTRUCTION
    xs = xs.astype(np.float64)
    ys = ys.astype(np.float64)
    d = np.hypot(xs - xs.mean(), ys - ys.mean())
    if sigma_mode == "std":
        sigma = float(d.std())
    elif sigma_mode == "rms":
        sigma = float(np.sqrt(np.mean(d * d)))
    else:
        raise ValueError(f"unknown sigma_mode {sigma_mode!r}")
    frac_inside = float(np.count_nonzero(d < sigma)) / n
    return SpatialPattern.CONCENTRATED if frac_inside > 0.7 else SpatialPattern.SPREAD


# ---------------------------------------------------------------------------
# Per-category generators. Each returns its templates' answers in registry
# order; generate_all stitches the full 40-item schedule together.
# ---------------------------------------------------------------------------


def _items(category: QuestionCategory, answers: dict[str, str], image_id: str) -> list[QAItem]:
    out = []
    for tpl in TEMPLATE_REGISTRY:
        if tpl.category is not category:
            continue
        out.append(QAItem(image_id, tpl.template_id, tpl.category, tpl.question,
                          answers[tpl.template_id]))
    assert len(out) == CATEGORY_SCHEDULE[category]
    return out


def gen_damage_detection(counts: ClassCounts, image_id: str = "") -> list[QAItem]:
    answers = {
        "dd_intact_present": _yn(counts.n_intact > 0),
        "dd_damaged_present": _yn(counts.n_damaged > 0),
        "dd_destroyed_present": _yn(counts.n_destroyed > 0),
        "dd_buildings_present": _yn(counts.n_building > 0),
        "dd_damage_evidence": _yn(counts.n_destruction > 0),
        "dd_all_intact": _yn(counts.n_building > 0 and counts.n_destruction == 0),
    }
    return _items(QuestionCategory.DAMAGE_DETECTION, answers, image_id)


def _bucket_or_sentinel(p: int | None) -> str:
    return NO_BUILDINGS if p is None else bucket(p)


def gen_quantitative(counts: ClassCounts, image_id: str = "") -> list[QAItem]:
    building_share = (100 * counts.n_building) // counts.n_total
    answers = {
        "qt_pct_intact_total": bucket(percent_of_total(counts, Label.INTACT)),
        "qt_pct_damaged_total": bucket(percent_of_total(counts, Label.DAMAGED)),
        "qt_pct_destroyed_total": bucket(percent_of_total(counts, Label.DESTROYED)),
        "qt_pct_background_total": bucket(percent_of_total(counts, Label.BACKGROUND)),
        "qt_pct_intact_buildings": _bucket_or_sentinel(percent_of_buildings(counts, Label.INTACT)),
        "qt_pct_damaged_buildings": _bucket_or_sentinel(percent_of_buildings(counts, Label.DAMAGED)),
        "qt_pct_destroyed_buildings": _bucket_or_sentinel(percent_of_buildings(counts, Label.DESTROYED)),
        "qt_pct_buildings_total": bucket(building_share),
    }
    return _items(QuestionCategory.QUANTITATIVE, answers, image_id)


def gen_comparative(counts: ClassCounts, image_id: str = "") -> list[QAItem]:
    # Ties land in the "otherwise" branch: Destroyed / Affected.
    answers = {
        "cp_dominant_destruction": "Damaged" if counts.n_damaged > counts.n_destroyed else "Destroyed",
        "cp_intact_vs_affected": "Intact" if counts.n_intact > counts.n_destruction else "Affected",
        "cp_more_damaged_than_destroyed": _yn(counts.n_damaged > counts.n_destroyed),
        "cp_more_destroyed_than_damaged": _yn(counts.n_destroyed > counts.n_damaged),
        "cp_more_intact_than_damaged": _yn(counts.n_intact > counts.n_damaged),
        "cp_more_intact_than_destroyed": _yn(counts.n_intact > counts.n_destroyed),
    }
    return _items(QuestionCategory.COMPARATIVE, answers, image_id)


def gen_severity(counts: ClassCounts, image_id: str = "") -> list[QAItem]:
    os_percent = destruction_percentage(counts)
    answers = {
        "sv_overall": severity_level(os_percent).value,
        "sv_widely_affected": _yn(os_percent >= 30),
        "sv_catastrophic": _yn(os_percent >= 60),
        "sv_affected_bucket": bucket(int(os_percent)),
    }
    return _items(QuestionCategory.SEVERITY, answers, image_id)


def gen_spatial(mask: SemanticMask, image_id: str = "", sigma_mode: str = "std") -> list[QAItem]:
    pattern = spatial_pattern(mask, sigma_mode=sigma_mode)
    answers = {
        "sp_pattern": pattern.value,
        "sp_concentrated_yn": _yn(pattern is SpatialPattern.CONCENTRATED),
    }
    return _items(QuestionCategory.SPATIAL, answers, image_id)


def gen_contextual(counts: ClassCounts, image_id: str = "") -> list[QAItem]:
    r = resilience_ratio(counts)
    if r is None:
        resilience = NO_BUILDINGS
        majority = NO_BUILDINGS
    else:
        resilience = "High" if r >= 0.8 else ("Moderate" if r >= 0.5 else "Low")
        majority = _yn(r > 0.5)
    answers = {
        "cx_resilience": resilience,
        "cx_majority_intact": majority,
        "cx_buildings_present": _yn(counts.n_building > 0),
        "cx_intact_bucket": _bucket_or_sentinel(percent_of_buildings(counts, Label.INTACT)),
    }
    return _items(QuestionCategory.CONTEXTUAL, answers, image_id)


def gen_threshold(counts: ClassCounts, image_id: str = "") -> list[QAItem]:
    p = destruction_percentage(counts)
    answers = {f"th_{t}": threshold_answer(p, t) for t in THRESHOLD_VALUES}
    return _items(QuestionCategory.THRESHOLD, answers, image_id)


def gen_recovery(counts: ClassCounts, image_id: str = "") -> list[QAItem]:
    p = destruction_percentage(counts)
    needed = p > 40
    answers = {
        "rc_reconstruction": _yn(needed),
        "rc_emergency": _yn(needed),
        "rc_habitable": _yn(not needed),
        "rc_response": "Major" if needed else "Minor",
    }
    return _items(QuestionCategory.RECOVERY, answers, image_id)


def generate_all(mask: SemanticMask, image_id: str, sigma_mode: str = "std") -> list[QAItem]:
    """All 40 QA items for one mask, in registry order."""
    counts = count_labels(mask)
    items = (
        gen_damage_detection(counts, image_id)
        + gen_quantitative(counts, image_id)
        + gen_comparative(counts, image_id)
        + gen_severity(counts, image_id)
        + gen_spatial(mask, image_id, sigma_mode=sigma_mode)
        + gen_contextual(counts, image_id)
        + gen_threshold(counts, image_id)
        + gen_recovery(counts, image_id)
    )
    assert len(items) == 40
    return items


# ---------------------------------------------------------------------------
# Dataset-level statistics
# ---------------------------------------------------------------------------

SEVERITY_ORDER = tuple(SeverityLevel)


@dataclass(frozen=True)
class DatasetStats:
    category_totals: dict[str, int]
    total_questions: int
    severity_frequencies: dict[str, float] | None
    imbalance_ratio: float | None  # None when some class frequency is zero
    spatial_split: dict[str, int]
    recovery_split: dict[str, int]


def imbalance_ratio(frequencies) -> float | None:
    """max(f_i) / min(f_i); None (undefined) when any frequency is zero."""
    f = [float(x) for x in frequencies]
    if not f or min(f) <= 0:
        return None
    return max(f) / min(f)


def dataset_stats(items: list[QAItem], severities=None) -> DatasetStats:
    """Aggregate statistics over a generated corpus.

    ``severities`` is an optional iterable of per-image exact os percents; when
    omitted, the severity class distribution is read off the per-image overall
    severity answers already present in ``items``.
    """
    if not items:
        raise ValueError("empty dataset")
    category_totals = {c.value: 0 for c in QuestionCategory}
    severity_counts = {s.value: 0 for s in SEVERITY_ORDER}
    spatial_split: dict[str, int] = {}
    recovery_split: dict[str, int] = {}
    for item in items:
        category_totals[item.category.value] += 1
        if item.template_id == "sv_overall" and severities is None:
            severity_counts[item.answer] += 1
        if item.template_id == "sp_pattern":
            spatial_split[item.answer] = spatial_split.get(item.answer, 0) + 1
        if item.template_id == "rc_reconstruction":
            recovery_split[item.answer] = recovery_split.get(item.answer, 0) + 1

    if severities is not None:
        severity_counts = {s.value: 0 for s in SEVERITY_ORDER}
        for os_percent in severities:
            severity_counts[severity_level(float(os_percent)).value] += 1

    n_sev = sum(severity_counts.values())
    if n_sev > 0:
        freq = {k: v / n_sev for k, v in severity_counts.items()}
        ir = imbalance_ratio(freq.values())
    else:
        freq, ir = None, None

    return DatasetStats(
        category_totals=category_totals,
        total_questions=len(items),
        severity_frequencies=freq,
        imbalance_ratio=ir,
        spatial_split=spatial_split,
        recovery_split=recovery_split,
    )
