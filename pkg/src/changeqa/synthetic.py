"""Synthetic mask corpus and toy image rendering.

Masks are procedurally generated scenes of rectangular buildings over
background, with per-scene damage profiles spread across the severity range
(plus degenerate all-background / all-intact / noise scenes so every QA rule
path gets exercised). Rendering keeps answers recoverable from pixels:
intact = gray blocks, damaged = half intensity, destroyed = speckle,
background = dark. The post-event image is single-channel.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .masks import SemanticMask
from .qagen import generate_all
from .templates import ANSWER_INDEX, QAItem

_REGIONS = ("Avala", "Brinmore", "Caldera", "Duskvale", "Eastport",
            "Farrow", "Glenholt", "Harbor Flats")
_EVENTS = (
    "a powerful earthquake struck {region}, collapsing structures across the district",
    "severe flooding swept through {region} after days of heavy rain",
    "a wildfire moved through the outskirts of {region} overnight",
    "a hurricane made landfall near {region} with destructive winds",
)


def random_mask(rng: np.random.Generator, width: int, height: int) -> SemanticMask:
    """Random scene: mostly rectangle buildings, some degenerate/noise cases."""
    roll = rng.random()
    if roll < 0.05:
        return SemanticMask(np.zeros((height, width), dtype=np.int64))
    if roll < 0.13:
        # pure per-pixel noise; stresses every counting rule
        probs = rng.dirichlet(np.ones(4))
        grid = rng.choice(4, size=(height, width), p=probs)
        return SemanticMask(grid.astype(np.int64))
    grid = np.zeros((height, width), dtype=np.int64)
    n_buildings = int(rng.integers(2, 9))
    # per-scene damage profile; skewed draws spread the severity classes
    damage = rng.dirichlet((1.0, 0.7, 0.7))  # P(intact, damaged, destroyed)
    if rng.random() < 0.1:
        damage = np.array([1.0, 0.0, 0.0])  # untouched scene
    max_w = max(2, width // 3)
    max_h = max(2, height // 3)
    for _ in range(n_buildings):
        bw = int(rng.integers(2, max_w + 1))
        bh = int(rng.integers(2, max_h + 1))
        x0 = int(rng.integers(0, max(1, width - bw + 1)))
        y0 = int(rng.integers(0, max(1, height - bh + 1)))
        label = int(rng.choice((1, 2, 3), p=damage))
        grid[y0:y0 + bh, x0:x0 + bw] = label
    return SemanticMask(grid)


def render_pair(mask: SemanticMask, rng: np.random.Generator):
    """(pre, post) toy images: pre (3,H,W) RGB, post (1,H,W) single-channel.

    Images are drawn at mask resolution then stride-2 subsampled: the class
    textures (gray / half-intensity / speckle / dark) survive subsampling, so
    answers stay recoverable from pixels while the CNN works at half size.
    """
    labels = mask.labels
    h, w = labels.shape
    building = labels > 0

    pre = np.full((3, h, w), 0.10)
    tint = np.array([0.66, 0.62, 0.58])  # pre-event buildings are intact gray
    for ch in range(3):
        pre[ch][building] = tint[ch]
    pre += rng.normal(0.0, 0.02, size=pre.shape)

    post = np.full((h, w), 0.10)
    post[labels == 1] = 0.62
    post[labels == 2] = 0.33
    speckle = rng.random((h, w))
    destroyed = labels == 3
    post[destroyed] = speckle[destroyed]
    post = post + rng.normal(0.0, 0.02, size=post.shape)

    pre = np.clip(pre, 0.0, 1.0)[:, ::2, ::2]
    post = np.clip(post, 0.0, 1.0)[None, ::2, ::2]
    return np.ascontiguousarray(pre), np.ascontiguousarray(post)


@dataclass
class SyntheticSample:
    item: QAItem
    description: str
    pre: np.ndarray   # (3, H, W)
    post: np.ndarray  # (1, H, W)

    @property
    def answer_index(self) -> int:
        return ANSWER_INDEX[self.item.answer]


@dataclass
class SyntheticTask:
    train: list[SyntheticSample]
    held_out: list[SyntheticSample]
    mask_size: int
    seed: int


def _scene_samples(rng: np.random.Generator, scene_idx: int, mask_size: int,
                   split: str) -> list[SyntheticSample]:
    mask = random_mask(rng, mask_size, mask_size)
    image_id = f"{split}_{scene_idx:04d}"
    pre, post = render_pair(mask, rng)
    region = _REGIONS[int(rng.integers(len(_REGIONS)))]
    event = _EVENTS[int(rng.integers(len(_EVENTS)))]
    description = event.format(region=region)
    return [SyntheticSample(item, description, pre, post)
            for item in generate_all(mask, image_id)]


def build_task(seed: int = 0, n_train: int = 512, n_eval: int = 256,
               mask_size: int = 64) -> SyntheticTask:
    """Disjoint train / held-out scene pools, subsampled to the target sizes."""
    rng = np.random.default_rng(seed)
    per_scene = 40
    train_scenes = -(-n_train // per_scene) + 2
    eval_scenes = -(-n_eval // per_scene) + 1

    train_pool: list[SyntheticSample] = []
    for i in range(train_scenes):
        train_pool += _scene_samples(rng, i, mask_size, "train")
    eval_pool: list[SyntheticSample] = []
    for i in range(eval_scenes):
        eval_pool += _scene_samples(rng, i, mask_size, "eval")

    train_idx = rng.permutation(len(train_pool))[:n_train]
    eval_idx = rng.permutation(len(eval_pool))[:n_eval]
    return SyntheticTask(
        train=[train_pool[i] for i in train_idx],
        held_out=[eval_pool[i] for i in eval_idx],
        mask_size=mask_size,
        seed=seed,
    )
