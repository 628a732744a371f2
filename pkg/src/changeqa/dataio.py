"""File formats: masks (PGM/PNG), dataset manifests, QA and prediction JSONL.

Masks are 8-bit single-channel rasters whose pixel values are the labels
{0,1,2,3}; anything else is a hard load error naming the offending pixel.
JSONL records keep a stable field order and sorted line order so outputs are
byte-identical across runs and thread counts.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .masks import SemanticMask
from .templates import QAItem, QuestionCategory, TEMPLATE_INDEX

_CATEGORY_BY_VALUE = {c.value: c for c in QuestionCategory}


# ---------------------------------------------------------------------------
# Masks
# ---------------------------------------------------------------------------


def _read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if not data[:2] in (b"P2", b"P5"):
        raise ValueError(f"{path}: not a PGM file (magic {data[:2]!r})")
    binary = data[:2] == b"P5"

    # header tokens: magic, width, height, maxval (comments allowed)
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos] in b" \t\r\n":
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos] not in b" \t\r\n":
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    width, height, maxval = (int(t) for t in tokens)
    if maxval > 255:
        raise ValueError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    pos += 1  # single whitespace after maxval
    if binary:
        raw = data[pos:pos + width * height]
        if len(raw) < width * height:
            raise ValueError(f"{path}: truncated PGM payload")
        arr = np.frombuffer(raw, dtype=np.uint8)
    else:
        values = data[pos:].split()
        if len(values) < width * height:
            raise ValueError(f"{path}: truncated PGM payload")
        arr = np.array([int(v) for v in values[:width * height]], dtype=np.int64)
    return arr.reshape(height, width)


def write_pgm(path: str, mask: SemanticMask) -> None:
    with open(path, "wb") as f:
        f.write(f"P5\n{mask.width} {mask.height}\n255\n".encode())
        f.write(mask.labels.tobytes())


def _nearest_resize(arr: np.ndarray, size: int) -> np.ndarray:
    h, w = arr.shape
    ys = np.minimum(((np.arange(size) + 0.5) * h / size).astype(np.int64), h - 1)
    xs = np.minimum(((np.arange(size) + 0.5) * w / size).astype(np.int64), w - 1)
    return arr[np.ix_(ys, xs)]


def load_mask(path: str, resize: int | None = None) -> SemanticMask:
    """Load a label mask from PGM or any Pillow-readable lossless raster.

    Pixel values must be in {0,1,2,3}; multi-channel rasters are rejected.
    ``resize`` applies nearest-neighbor (center convention) to the label grid.
    """
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        arr = _read_pgm(path)
    else:
        from PIL import Image

        with Image.open(path) as img:
            if img.mode not in ("L", "P", "I", "I;16"):
                raise ValueError(
                    f"{path}: expected single-channel mask, got mode {img.mode!r}")
            arr = np.asarray(img.convert("I"), dtype=np.int64)
    if resize is not None:
        if resize < 1:
            raise ValueError("resize must be >= 1")
        arr = _nearest_resize(arr, resize)
    return SemanticMask(np.asarray(arr, dtype=np.int64))


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    mask_path: str
    region: str = ""
    description_path: str | None = None


def load_manifest(path: str) -> list[ManifestEntry]:
    """Manifest: JSON list of {image_id, mask_path, region?, description_path?}.

    Relative paths resolve against the manifest's directory; referenced files
    must exist; image_ids must be unique.
    """
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    if not isinstance(raw, list):
        raise ValueError(f"{path}: manifest must be a JSON list")
    entries = []
    seen = set()
    for i, item in enumerate(raw):
        if "image_id" not in item or "mask_path" not in item:
            raise ValueError(f"{path}: entry {i} needs image_id and mask_path")
        image_id = str(item["image_id"])
        if image_id in seen:
            raise ValueError(f"{path}: duplicate image_id {image_id!r}")
        seen.add(image_id)
        mask_path = os.path.join(base, item["mask_path"])
        if not os.path.exists(mask_path):
            raise ValueError(f"{path}: mask file missing for {image_id!r}: {mask_path}")
        desc = item.get("description_path")
        if desc is not None:
            desc = os.path.join(base, desc)
            if not os.path.exists(desc):
                raise ValueError(f"{path}: description missing for {image_id!r}: {desc}")
        entries.append(ManifestEntry(image_id, mask_path, str(item.get("region", "")),
                                     desc))
    return entries


# ---------------------------------------------------------------------------
# QA / prediction JSONL
# ---------------------------------------------------------------------------


def qa_record_line(item: QAItem) -> str:
    record = {
        "image_id": item.image_id,
        "template_id": item.template_id,
        "category": item.category.value,
        "question": item.question,
        "answer": item.answer,
    }
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def write_qa_jsonl(path: str, items: list[QAItem]) -> None:
    """Lines sorted by (image_id, registry order); UTF-8; trailing newline."""
    ordered = sorted(items, key=lambda x: (x.image_id, TEMPLATE_INDEX[x.template_id]))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for item in ordered:
            f.write(qa_record_line(item) + "\n")


def load_qa_jsonl(path: str) -> list[QAItem]:
    items = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: bad JSON ({e})") from None
            try:
                category = _CATEGORY_BY_VALUE[rec["category"]]
                items.append(QAItem(rec["image_id"], rec["template_id"], category,
                                    rec["question"], rec["answer"]))
            except KeyError as e:
                raise ValueError(f"{path}:{lineno}: missing/unknown field {e}") from None
    return items


def write_predictions_jsonl(path: str, entries) -> None:
    """entries: iterable of (image_id, template_id, answer)."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for image_id, template_id, answer in entries:
            f.write(json.dumps({"image_id": image_id, "template_id": template_id,
                                "answer": answer},
                               ensure_ascii=False, separators=(",", ":")) + "\n")


def load_predictions_jsonl(path: str) -> list[tuple[str, str, str]]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                out.append((rec["image_id"], rec["template_id"], rec["answer"]))
            except (json.JSONDecodeError, KeyError) as e:
                raise ValueError(f"{path}:{lineno}: bad prediction line ({e})") from None
    return out


def write_severity_json(path: str, severities: dict[str, float]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump({k: severities[k] for k in sorted(severities)}, f, indent=2)
        f.write("\n")


def load_severity_json(path: str) -> dict[str, float]:
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    return {str(k): float(v) for k, v in raw.items()}
