"""Per-instance candidate filtering.

Every policy answers the same question: given one instance's candidate
views, which ``ceil(keep_fraction * n)`` survive into the next round? The
teacher-loss policy keeps the lowest-loss views, the similarity policy keeps
the views closest to the real view under a fixed cross-modal embedder, and
the random / keep-all policies are the ablation controls.

Filters never change view content; they only return copies with
``selected`` (and, upstream, ``teacher_loss``) updated. Ties break by
ascending candidate index, so results are stable under equal scores.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .datamodel import SyntheticView, View, ViewSpec
from .nn import featurize
from .rng import derive_rng

POLICY_NAMES = ("teacher_loss", "similarity", "random", "keep_all")


class SelectionError(ValueError):
    pass


def keep_count(keep_fraction: float, n: int) -> int:
    """``ceil(keep_fraction * n)`` computed exactly.

    The fraction is read back through its decimal representation so float
    artifacts (0.4 * 5 landing a hair above 2) cannot inflate the count.
    """
    if n < 0:
        raise SelectionError("negative candidate count")
    if not (0.0 < keep_fraction <= 1.0):
        raise SelectionError("keep_fraction must be in (0, 1]")
    product = Fraction(str(keep_fraction)) * n
    return -(-product.numerator // product.denominator)


def _split_by_rank(
    views: Sequence[SyntheticView], scores: Sequence[float], k: int
) -> tuple[list[SyntheticView], list[SyntheticView]]:
    order = sorted(range(len(views)), key=lambda i: (scores[i], i))
    kept_idx = set(order[:k])
    kept = [views[i].with_selected(True) for i in sorted(kept_idx)]
    discarded = [views[i].with_selected(False) for i in range(len(views)) if i not in kept_idx]
    return kept, discarded


def filter_by_loss(
    views: Sequence[SyntheticView], keep_fraction: float
) -> tuple[list[SyntheticView], list[SyntheticView]]:
    """Keep the lowest-teacher-loss views; every candidate must be scored."""
    views = list(views)
    for i, view in enumerate(views):
        if view.teacher_loss is None:
            raise SelectionError(f"candidate {i} has no teacher loss; score the pool first")
    k = keep_count(keep_fraction, len(views))
    return _split_by_rank(views, [v.teacher_loss for v in views], k)


class RandomLinearEmbedder:
    """Fixed random linear maps into a shared space, one per modality.

    A deterministic stand-in for a pretrained joint embedding model: it
    preserves geometry in expectation but learns nothing, which is the point
    of the similarity-selection ablation.
    """

    def __init__(self, u_spec: ViewSpec, v_spec: ViewSpec, dim: int = 8, seed: int = 0):
        rng = derive_rng(seed, "embedder")
        self.u_spec = u_spec
        self.v_spec = v_spec
        self.w_u = rng.normal(0.0, 1.0 / np.sqrt(u_spec.size), size=(dim, u_spec.size))
        self.w_v = rng.normal(0.0, 1.0 / np.sqrt(v_spec.size), size=(dim, v_spec.size))

    def embed(self, view: View) -> np.ndarray:
        if view.modality == "u":
            return self.w_u @ featurize(view, self.u_spec.size)
        return self.w_v @ featurize(view, self.v_spec.size)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return -1.0
    return float(a @ b) / (na * nb)


def similarity_scores(
    views: Sequence[SyntheticView | View], real_view: View, embedder
) -> list[float]:
    """Lower-is-better scores: negated cosine against the real view."""
    anchor = embedder.embed(real_view)
    unwrapped = [v.view if isinstance(v, SyntheticView) else v for v in views]
    return [-cosine_similarity(embedder.embed(v), anchor) for v in unwrapped]


def filter_by_similarity(
    views: Sequence[SyntheticView], real_view: View, embedder, keep_fraction: float
) -> tuple[list[SyntheticView], list[SyntheticView]]:
    """Keep the views most similar to the real view in embedding space."""
    views = list(views)
    k = keep_count(keep_fraction, len(views))
    return _split_by_rank(views, similarity_scores(views, real_view, embedder), k)


def random_scores(n: int, seed: int, *stream: int | str) -> list[float]:
    rng = derive_rng(seed, "random-selection", *stream)
    return list(rng.random(n))


def filter_random(
    views: Sequence[SyntheticView], keep_fraction: float, seed: int, *stream: int | str
) -> tuple[list[SyntheticView], list[SyntheticView]]:
    """Keep a uniform subset of size ``ceil(keep_fraction * n)``."""
    views = list(views)
    k = keep_count(keep_fraction, len(views))
    return _split_by_rank(views, random_scores(len(views), seed, *stream), k)


def filter_keep_all(views: Sequence[SyntheticView]) -> tuple[list[SyntheticView], list[SyntheticView]]:
    return [v.with_selected(True) for v in views], []


@dataclass(frozen=True)
class SelectionPolicy:
    """Named policy plus its keep fraction; ``apply`` routes to the filters."""

    name: str
    keep_fraction: float = 0.6
    embed_dim: int = 8

    def __post_init__(self):
        if self.name not in POLICY_NAMES:
            raise SelectionError(f"unknown policy {self.name!r}; choose one of {POLICY_NAMES}")
        if self.name != "keep_all" and not (0.0 < self.keep_fraction <= 1.0):
            raise SelectionError("keep_fraction must be in (0, 1]")

    @property
    def needs_teacher(self) -> bool:
        return self.name == "teacher_loss"
