"""Exact mutual information on small discrete spaces, and the two
diagnostics built on it: the non-increasing MI profile along a generation
chain, and the trained-classifier lower bound on I(V; Y).

Everything here is in nats. Exact quantities come from dense summation over
the joint table, which is the point: these functions are the oracles the
stochastic parts of the library are checked against, so they must not share
code with the estimators they judge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import derive_rng

DEFAULT_CELL_CAP = 1_000_000

_ATOL = 1e-12


class InfoError(ValueError):
    pass


class DataProcessingViolation(AssertionError):
    """An exact MI profile increased along the chain; that is a bug."""


@dataclass(frozen=True, eq=False)
class DiscreteJoint:
    """Dense joint distribution over a tuple of finite variables."""

    sizes: tuple[int, ...]
    table: np.ndarray

    def __post_init__(self):
        table = np.asarray(self.table, dtype=np.float64)
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if any(s < 1 for s in self.sizes):
            raise InfoError("variable sizes must be positive")
        cells = math.prod(self.sizes)
        if cells > DEFAULT_CELL_CAP:
            raise InfoError(f"joint table would need {cells} cells, cap is {DEFAULT_CELL_CAP}")
        if table.shape != self.sizes:
            raise InfoError(f"table shape {table.shape} does not match sizes {self.sizes}")
        if np.any(table < -_ATOL):
            raise InfoError("joint table has negative mass")
        if abs(table.sum() - 1.0) > 1e-9:
            raise InfoError(f"joint table sums to {table.sum()}, not 1")

    def pair_marginal(self, i: int, j: int) -> np.ndarray:
        """Marginal table over variables (i, j), in that axis order."""
        n = len(self.sizes)
        if not (0 <= i < n and 0 <= j < n) or i == j:
            raise InfoError(f"bad variable pair ({i}, {j}) for {n} variables")
        axes = tuple(k for k in range(n) if k not in (i, j))
        pair = self.table.sum(axis=axes) if axes else self.table
        if i > j:
            pair = pair.T
        return pair


def _mi_from_pair_table(pij: np.ndarray) -> float:
    pij = np.asarray(pij, dtype=np.float64)
    pi = pij.sum(axis=1)
    pj = pij.sum(axis=0)
    mask = pij > 0
    ratio = pij[mask] / (np.outer(pi, pj)[mask])
    return float(np.sum(pij[mask] * np.log(ratio)))


def exact_mi(joint: DiscreteJoint, i: int = 0, j: int = 1) -> float:
    """I(X_i; X_j) in nats by direct summation over the pair marginal.

    Symmetric in (i, j); zero for independent variables; equal to the
    marginal entropy when one variable determines the other. Float error
    keeps the result above -1e-12 but never meaningfully negative.
    """
    return _mi_from_pair_table(joint.pair_marginal(i, j))


def entropy(p) -> float:
    """Shannon entropy in nats of a probability vector."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < -_ATOL) or abs(p.sum() - 1.0) > 1e-9:
        raise InfoError("not a probability vector")
    mask = p > 0
    return float(-np.sum(p[mask] * np.log(p[mask])))


def _as_matrix(channel) -> np.ndarray:
    matrix = getattr(channel, "matrix", channel)
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or np.any(matrix < 0) or not np.allclose(matrix.sum(axis=1), 1.0, atol=1e-9):
        raise InfoError("chain stages must be row-stochastic matrices")
    return matrix


@dataclass(frozen=True, eq=False)
class MarkovChainSpec:
    """Y -> Z_1 -> Z_2 -> ... as an initial law plus transition matrices.

    Stages may be :class:`~chainviews.channels.DiscreteChannel` instances or
    raw row-stochastic arrays; only the matrices matter here.
    """

    initial: np.ndarray
    stages: tuple

    def __post_init__(self):
        initial = np.asarray(self.initial, dtype=np.float64)
        if initial.ndim != 1 or np.any(initial < 0) or abs(initial.sum() - 1.0) > 1e-9:
            raise InfoError("initial law must be a probability vector")
        object.__setattr__(self, "initial", initial)
        matrices = tuple(_as_matrix(stage) for stage in self.stages)
        object.__setattr__(self, "stages", matrices)
        size = initial.shape[0]
        for k, matrix in enumerate(matrices):
            if matrix.shape[0] != size:
                raise InfoError(f"stage {k} expects {matrix.shape[0]} input symbols, chain carries {size}")
            size = matrix.shape[1]


def chain_mi_profile(spec: MarkovChainSpec, tol: float = 1e-9) -> list[float]:
    """[I(Y;Y), I(Y;Z_1), ..., I(Y;Z_n)] in nats, exactly.

    The data-processing inequality makes this sequence non-increasing; the
    function checks that as it goes and raises
    :class:`DataProcessingViolation` on any increase beyond ``tol``, since
    exact summation cannot legitimately produce one.
    """
    p0 = spec.initial
    profile = [entropy(p0)]  # I(Y; Y) = H(Y)
    forward = np.eye(p0.shape[0])
    for k, matrix in enumerate(spec.stages):
        forward = forward @ matrix
        joint = p0[:, None] * forward
        value = _mi_from_pair_table(joint)
        if value > profile[-1] + tol:
            raise DataProcessingViolation(
                f"I(Y;Z_{k + 1}) = {value:.12f} exceeds I(Y;Z_{k}) = {profile[-1]:.12f}"
            )
        profile.append(value)
    return profile


def mi_lower_bound(f, samples, class_count: int) -> float:
    """Average of ``f(v, y) - logsumexp_y' f(v, y')`` over ``samples``.

    With ``f`` returning classifier logits this is exactly the negative mean
    cross-entropy, a lower bound on I(V; Y) minus log(class_count) under
    uniform labels; see :func:`verify_classifier_bound` for the shifted,
    tight form. Never positive.
    """
    samples = list(samples)
    if not samples:
        raise InfoError("need at least one sample")
    if class_count < 2:
        raise InfoError("need at least two classes")
    total = 0.0
    for view, label in samples:
        scores = np.array([float(f(view, y)) for y in range(class_count)])
        m = scores.max()
        lse = m + math.log(np.exp(scores - m).sum())
        total += scores[label] - lse
    return total / len(samples)


# --- trained-classifier bound verification ----------------------------------


@dataclass(frozen=True)
class DiscreteLabelWorld:
    """Uniform label Y over C classes, observation V ~ channel[y] over an alphabet."""

    class_count: int
    alphabet: int
    channel: np.ndarray  # (C, A) row-stochastic
    seed: int = 0

    def __post_init__(self):
        channel = _as_matrix(self.channel)
        if channel.shape != (self.class_count, self.alphabet):
            raise InfoError("channel shape must be (class_count, alphabet)")
        object.__setattr__(self, "channel", channel)

    def joint(self) -> DiscreteJoint:
        table = self.channel / self.class_count
        return DiscreteJoint(sizes=(self.class_count, self.alphabet), table=table)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        labels = rng.integers(self.class_count, size=n)
        draws = rng.random(n)
        cumulative = np.cumsum(self.channel, axis=1)
        symbols = np.empty(n, dtype=np.int64)
        for i in range(n):
            symbols[i] = np.searchsorted(cumulative[labels[i]], draws[i], side="right")
        np.minimum(symbols, self.alphabet - 1, out=symbols)
        return symbols, labels


@dataclass(frozen=True)
class BoundReport:
    bound: float
    exact: float
    se: float
    margin: float  # exact - bound; negative only within noise
    violation: bool  # bound > exact + 3 * se
    train_steps: int
    n_eval: int


def verify_classifier_bound(
    world: DiscreteLabelWorld,
    train_steps: int = 400,
    n_train: int = 20_000,
    n_eval: int = 20_000,
    learning_rate: float = 0.2,
) -> BoundReport:
    """Train a softmax scorer on world samples and compare its MI bound
    against the exact value.

    The reported bound is ``mean[f(v,y) - logsumexp f(v,.)] + log C``, valid
    for uniform labels. It must not exceed exact MI by more than sampling
    noise; ``violation`` flags a breach beyond three standard errors.
    """
    rng = derive_rng(world.seed, "bound-verify")
    v_train, y_train = world.sample(n_train, rng)
    v_eval, y_eval = world.sample(n_eval, rng)

    counts = np.zeros((world.class_count, world.alphabet))
    np.add.at(counts, (y_train, v_train), 1.0)
    col_total = counts.sum(axis=0)

    # full-batch gradient steps on W[y, v]; cheap because the loss only
    # depends on the (y, v) count table
    weights = np.zeros((world.class_count, world.alphabet))
    m = np.zeros_like(weights)
    v2 = np.zeros_like(weights)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    for t in range(1, train_steps + 1):
        z = weights - weights.max(axis=0, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=0, keepdims=True)
        grad = (p * col_total - counts) / n_train
        m = beta1 * m + (1 - beta1) * grad
        v2 = beta2 * v2 + (1 - beta2) * grad**2
        m_hat = m / (1 - beta1**t)
        v_hat = v2 / (1 - beta2**t)
        weights -= learning_rate * m_hat / (np.sqrt(v_hat) + eps)

    logits = weights[:, v_eval]  # (C, n_eval)
    shifted = logits - logits.max(axis=0, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=0)) + logits.max(axis=0)
    terms = logits[y_eval, np.arange(n_eval)] - lse + math.log(world.class_count)
    bound = float(terms.mean())
    se = float(terms.std(ddof=1) / math.sqrt(n_eval))
    exact = exact_mi(world.joint())
    return BoundReport(
        bound=bound,
        exact=exact,
        se=se,
        margin=exact - bound,
        violation=bound > exact + 3 * se,
        train_steps=train_steps,
        n_eval=n_eval,
    )


def random_label_world(class_count: int, alphabet: int, seed: int) -> DiscreteLabelWorld:
    """A random conditional law P(V | Y), rows drawn from a flat Dirichlet."""
    rng = derive_rng(seed, "random-world")
    raw = rng.gamma(1.0, size=(class_count, alphabet))
    channel = raw / raw.sum(axis=1, keepdims=True)
    return DiscreteLabelWorld(class_count=class_count, alphabet=alphabet, channel=channel, seed=seed)


def binary_symmetric_world(flip: float, seed: int = 0) -> DiscreteLabelWorld:
    channel = np.array([[1 - flip, flip], [flip, 1 - flip]])
    return DiscreteLabelWorld(class_count=2, alphabet=2, channel=channel, seed=seed)
