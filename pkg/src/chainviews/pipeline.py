"""End-to-end curation runs.

One run is: generate an initial batch of synthetic views per instance, then
alternate selection (train a fresh teacher on the candidate pool, score it,
keep the best fraction per instance) with generation (every kept view spawns
children through the v-to-u and u-to-v channels). After the last round the
student trains on each instance's best-scored views plus its real view, and
test instances are classified by generating fresh views, scoring them with
the final teacher, and fusing the winners.

With the stock schedule (30 initial views, keep 60%, spawn [4, 1]) the
per-instance pool evolves 30 -> keep 18 -> +72 -> 90 -> keep 54 -> +54 ->
108. ``ccg_rounds=0`` still performs the initial selection (it just spawns
nothing), which is the "no chained generation" ablation.

Everything is a pure function of (config, seed): worker threads only spread
per-instance work whose random streams are derived per item, so worker count
cannot change any output. Wall-clock timings in the report are the one
explicitly non-deterministic field.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .channels import sample_channel
from .datamodel import (
    MODALITY_V,
    REAL_PARENT,
    STEP_U_TO_V,
    STEP_V_TO_U,
    DatasetSchema,
    Instance,
    Label,
    SyntheticView,
    View,
)
from .diversity import StageDiversity, diversity_report, views_to_matrix
from .models import StudentModel, TeacherModel, TrainConfig, UnimodalModel, train
from .nn import log_softmax, softmax_xent
from .rng import derive_rng
from .selection import (
    RandomLinearEmbedder,
    SelectionPolicy,
    filter_by_loss,
    filter_by_similarity,
    filter_keep_all,
    filter_random,
    keep_count,
    random_scores,
    similarity_scores,
)

CONDITIONS = ("full", "no_ccg", "similarity_teacher", "random_teacher", "no_teacher", "unimodal")

METRIC_COLUMNS = ("condition", "accuracy", "precision", "recall", "f1")


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for one curation run; see the module docstring for the loop."""

    ccg_rounds: int = 2  # selection+generation rounds after the initial batch
    initial_views: int = 30
    spawn_per_kept: tuple[int, ...] = (4, 1)  # children per kept view, one entry per round
    keep_fraction: float = 0.6
    policy_name: str = "teacher_loss"
    train_views: int = 6  # synthetic views fed to the student per instance
    infer_views: int = 6  # synthetic views fused per test instance
    infer_generate: int | None = None  # candidates generated at test time (None: initial_views)
    teacher: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=0.02, steps=250, batch_size=48))
    student: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=0.01, steps=350, batch_size=32))
    seed: int = 0
    shared_attention: bool = True
    teacher_warm_start: bool = False  # reuse the previous round's teacher weights
    infer_full_chain: bool = False  # test-time views pass through the whole chain
    pca_dim: int = 2
    gmm_components: int = 3
    workers: int = 1

    def __post_init__(self):
        if self.ccg_rounds < 0:
            raise ValueError("ccg_rounds must be >= 0")
        if len(self.spawn_per_kept) != self.ccg_rounds:
            raise ValueError(
                f"spawn_per_kept needs exactly {self.ccg_rounds} entries, got {len(self.spawn_per_kept)}"
            )
        if any(g < 0 for g in self.spawn_per_kept):
            raise ValueError("spawn counts must be non-negative")
        if self.initial_views < 1 or self.train_views < 1 or self.infer_views < 1:
            raise ValueError("view counts must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        SelectionPolicy(self.policy_name, self.keep_fraction)  # validates both

    @property
    def policy(self) -> SelectionPolicy:
        return SelectionPolicy(self.policy_name, self.keep_fraction)

    def to_dict(self) -> dict:
        return {
            "ccg_rounds": self.ccg_rounds,
            "initial_views": self.initial_views,
            "spawn_per_kept": list(self.spawn_per_kept),
            "keep_fraction": self.keep_fraction,
            "policy_name": self.policy_name,
            "train_views": self.train_views,
            "infer_views": self.infer_views,
            "infer_generate": self.infer_generate,
            "teacher": vars(self.teacher).copy(),
            "student": vars(self.student).copy(),
            "seed": self.seed,
            "shared_attention": self.shared_attention,
            "teacher_warm_start": self.teacher_warm_start,
            "infer_full_chain": self.infer_full_chain,
            "pca_dim": self.pca_dim,
            "gmm_components": self.gmm_components,
        }


def config_hash(payload: dict) -> str:
    """sha256 of the canonical JSON rendering of a config mapping."""
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class InstanceSelectionRecord:
    instance_id: int
    candidate_ids: tuple[int, ...]  # pool indices scored this round
    scores: tuple[float, ...]  # lower is better; teacher losses under the default policy
    kept_ids: tuple[int, ...]


@dataclass(frozen=True)
class RoundRecord:
    selection_index: int
    pool_size: int  # candidates per instance entering the selection
    kept_size: int  # survivors per instance
    spawned: int  # children per kept view generated after the selection
    per_instance: tuple[InstanceSelectionRecord, ...]


@dataclass(frozen=True)
class RunReport:
    condition: str
    config_digest: str
    seed: int
    ccg_rounds: int  # configured K; 0 still runs one selection-only pass
    rounds: tuple[RoundRecord, ...]
    final_pool_size: int  # v-side candidates per instance after the last generation
    metrics: dict
    diversity: tuple[StageDiversity, ...]
    timing: dict  # wall-clock seconds; excluded from determinism guarantees


@dataclass
class RunResult:
    instances: list[Instance]
    report: RunReport
    teacher: TeacherModel | None
    student: object  # StudentModel or UnimodalModel


def parallel_map(fn, items: Sequence, workers: int) -> list:
    """Order-preserving map; thread count never affects the result because
    every item draws from its own derived random stream."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --- metrics -----------------------------------------------------------------


def compute_metrics(
    predictions: Sequence[int],
    labels: Sequence[int],
    schema: DatasetSchema,
    include_none: bool = False,
) -> dict:
    """Accuracy plus micro precision/recall/F1.

    When the schema names a none-of-the-above class it is excluded from the
    micro counts by default (predicting "none" for a "none" instance earns
    nothing); pass ``include_none=True`` to count it like any other class.
    Empty denominators yield 0.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape or predictions.ndim != 1 or predictions.shape[0] == 0:
        raise ValueError("predictions and labels must be equal-length non-empty vectors")
    accuracy = float(np.mean(predictions == labels))
    excluded = None if include_none else schema.none_class
    tp = fp = fn = 0
    for c in range(schema.class_count):
        if c == excluded:
            continue
        tp += int(np.sum((predictions == c) & (labels == c)))
        fp += int(np.sum((predictions == c) & (labels != c)))
        fn += int(np.sum((labels == c) & (predictions != c)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "accuracy": accuracy,
        "precision": float(precision),
        "recall": float(recall),
        "f1": float(f1),
        "count": int(labels.shape[0]),
    }


# --- scoring helpers ----------------------------------------------------------


def teacher_loss_of(teacher: TeacherModel, view: View, instance: Instance) -> float:
    loss, _ = softmax_xent(teacher.logits((view, instance.entities)), instance.label.value)
    return loss


def teacher_confidence_loss(teacher: TeacherModel, view: View, instance: Instance) -> float:
    """Label-free score for test-time use: the loss against the teacher's own
    most likely label, i.e. the best case over labels."""
    return float(-np.max(log_softmax(teacher.logits((view, instance.entities)))))


# --- the run ------------------------------------------------------------------


class _Run:
    def __init__(
        self,
        train_instances: Sequence[Instance],
        test_instances: Sequence[Instance],
        schema: DatasetSchema,
        g_uv,
        g_vu,
        config: PipelineConfig,
        condition: str,
    ):
        self.schema = schema
        self.g_uv = g_uv
        self.g_vu = g_vu
        self.config = config
        self.condition = condition
        self.seed = config.seed
        self.instances = list(train_instances)
        self.test_instances = list(test_instances)
        self.pools: list[list[SyntheticView]] = [list(inst.synthetic_pool) for inst in self.instances]
        self.candidates: list[list[int]] = [inst.v_side_views() for inst in self.instances]
        self.rounds: list[RoundRecord] = []
        self.teacher: TeacherModel | None = None
        self.policy = config.policy
        self.embedder = (
            RandomLinearEmbedder(schema.u_spec, schema.v_spec, self.policy.embed_dim, seed=self.seed)
            if self.policy.name == "similarity"
            else None
        )
        self.timing: dict[str, float] = {}

    # -- generation --

    def _spawn_initial(self, idx: int) -> None:
        instance = self.instances[idx]
        pool = self.pools[idx]
        for j in range(self.config.initial_views):
            rng = derive_rng(self.seed, "gen", instance.id, 0, j)
            view = sample_channel(self.g_uv, instance.real_view, rng)
            pool.append(SyntheticView(view=view, round=0, step=STEP_U_TO_V, parent_id=REAL_PARENT))
        self.candidates[idx] = [i for i, sv in enumerate(pool) if sv.step == STEP_U_TO_V]

    def _spawn_children(self, idx: int, round_index: int, spawn: int) -> None:
        instance = self.instances[idx]
        pool = self.pools[idx]
        new_candidates = []
        for parent_idx in self.candidates[idx]:
            parent = pool[parent_idx]
            for j in range(spawn):
                rng = derive_rng(self.seed, "gen", instance.id, round_index, parent_idx, j)
                u_view = sample_channel(self.g_vu, parent.view, rng)
                pool.append(
                    SyntheticView(view=u_view, round=round_index, step=STEP_V_TO_U, parent_id=parent_idx)
                )
                u_idx = len(pool) - 1
                v_view = sample_channel(self.g_uv, u_view, rng)
                pool.append(
                    SyntheticView(view=v_view, round=round_index, step=STEP_U_TO_V, parent_id=u_idx)
                )
                new_candidates.append(len(pool) - 1)
        self.candidates[idx] = self.candidates[idx] + new_candidates

    # -- scoring and selection --

    def _train_round_teacher(self, selection_index: int) -> list[list[float]]:
        """Fresh teacher on the whole candidate pool; returns per-instance
        frozen final-pass losses aligned with the candidate lists."""
        if self.config.teacher_warm_start and self.teacher is not None:
            teacher = self.teacher
        else:
            rng = derive_rng(self.seed, "teacher-init", selection_index)
            teacher = TeacherModel(rng, self.schema)
        samples = []
        for idx, instance in enumerate(self.instances):
            for cand in self.candidates[idx]:
                samples.append(((self.pools[idx][cand].view, instance.entities), instance.label.value))
        cfg = replace(self.config.teacher, seed=self.seed)
        _, losses = train(teacher, samples, cfg, rng_stream=("teacher-train", selection_index))
        self.teacher = teacher
        per_instance = []
        cursor = 0
        for idx in range(len(self.instances)):
            n = len(self.candidates[idx])
            per_instance.append([float(x) for x in losses[cursor : cursor + n]])
            cursor += n
        return per_instance

    def _selection_scores(self, selection_index: int) -> list[list[float]]:
        if self.policy.name == "teacher_loss":
            per_instance = self._train_round_teacher(selection_index)
            for idx in range(len(self.instances)):
                pool = self.pools[idx]
                for cand, loss in zip(self.candidates[idx], per_instance[idx]):
                    pool[cand] = pool[cand].scored(loss)
            return per_instance
        scores = []
        for idx, instance in enumerate(self.instances):
            views = [self.pools[idx][c] for c in self.candidates[idx]]
            if self.policy.name == "similarity":
                scores.append(similarity_scores(views, instance.real_view, self.embedder))
            elif self.policy.name == "random":
                scores.append(random_scores(len(views), self.seed, selection_index, instance.id))
            else:  # keep_all
                scores.append([0.0] * len(views))
        return scores

    def _select(self, selection_index: int, spawn: int) -> None:
        scores = self._selection_scores(selection_index)
        records = []
        pool_sizes = set()
        kept_sizes = set()
        for idx, instance in enumerate(self.instances):
            cand_ids = self.candidates[idx]
            pool = self.pools[idx]
            cand_views = [pool[c] for c in cand_ids]
            if self.policy.name == "keep_all":
                kept_local = list(range(len(cand_ids)))
            else:
                k = keep_count(self.policy.keep_fraction, len(cand_ids))
                order = sorted(range(len(cand_ids)), key=lambda i: (scores[idx][i], i))
                kept_local = sorted(order[:k])
            kept_set = set(kept_local)
            for local, cand in enumerate(cand_ids):
                pool[cand] = pool[cand].with_selected(local in kept_set)
            kept_ids = [cand_ids[i] for i in kept_local]
            records.append(
                InstanceSelectionRecord(
                    instance_id=instance.id,
                    candidate_ids=tuple(cand_ids),
                    scores=tuple(scores[idx]),
                    kept_ids=tuple(kept_ids),
                )
            )
            pool_sizes.add(len(cand_ids))
            kept_sizes.add(len(kept_ids))
            self.candidates[idx] = kept_ids
        if len(pool_sizes) != 1 or len(kept_sizes) != 1:
            raise PipelineError("instances diverged in pool size; balanced worlds cannot do that")
        self.rounds.append(
            RoundRecord(
                selection_index=selection_index,
                pool_size=pool_sizes.pop(),
                kept_size=kept_sizes.pop(),
                spawned=spawn,
                per_instance=tuple(records),
            )
        )
        if spawn > 0:
            parallel_map(
                lambda idx: self._spawn_children(idx, selection_index + 1, spawn),
                range(len(self.instances)),
                self.config.workers,
            )

    def _score_unscored_candidates(self) -> None:
        """Give trailing generated views a loss from the final teacher so the
        student's pick compares every candidate under one scorer."""
        if self.teacher is None:
            return

        def score(idx: int) -> None:
            instance = self.instances[idx]
            pool = self.pools[idx]
            for cand in self.candidates[idx]:
                if pool[cand].teacher_loss is None:
                    loss = teacher_loss_of(self.teacher, pool[cand].view, instance)
                    pool[cand] = pool[cand].scored(loss)

        parallel_map(score, range(len(self.instances)), self.config.workers)

    # -- student --

    def _student_pick(self, idx: int) -> list[View]:
        instance = self.instances[idx]
        pool = self.pools[idx]
        cand_ids = self.candidates[idx]
        if len(cand_ids) < self.config.train_views:
            raise PipelineError(
                f"instance {instance.id} has {len(cand_ids)} candidate views, "
                f"needs {self.config.train_views}"
            )
        views = [pool[c] for c in cand_ids]
        if self.policy.name == "teacher_loss":
            scores = [v.teacher_loss for v in views]
        elif self.policy.name == "similarity":
            scores = similarity_scores(views, instance.real_view, self.embedder)
        else:  # random and keep_all pick uniformly, seeded per instance
            scores = random_scores(len(views), self.seed, "student-pick", instance.id)
        order = sorted(range(len(views)), key=lambda i: (scores[i], i))
        return [views[i].view for i in order[: self.config.train_views]]

    def _train_student(self):
        rng = derive_rng(self.seed, "student-init")
        student = StudentModel(rng, self.schema, shared_attention=self.config.shared_attention)
        samples = []
        for idx, instance in enumerate(self.instances):
            chosen = tuple(self._student_pick(idx))
            samples.append(((instance.real_view, chosen, instance.entities), instance.label.value))
        cfg = replace(self.config.student, seed=self.seed)
        train(student, samples, cfg, rng_stream=("student-train",))
        return student

    # -- inference --

    def _infer_one(self, student, instance: Instance) -> int:
        n_gen = self.config.infer_generate or self.config.initial_views
        views = []
        for j in range(n_gen):
            rng = derive_rng(self.seed, "infer-gen", instance.id, j)
            view = sample_channel(self.g_uv, instance.real_view, rng)
            if self.config.infer_full_chain:
                for _ in range(self.config.ccg_rounds):
                    view = sample_channel(self.g_uv, sample_channel(self.g_vu, view, rng), rng)
            views.append(view)
        if self.policy.name == "teacher_loss":
            scores = [teacher_confidence_loss(self.teacher, v, instance) for v in views]
        elif self.policy.name == "similarity":
            scores = similarity_scores(views, instance.real_view, self.embedder)
        else:
            scores = random_scores(len(views), self.seed, "infer-pick", instance.id)
        order = sorted(range(len(views)), key=lambda i: (scores[i], i))
        chosen = tuple(views[i] for i in order[: self.config.infer_views])
        logits = student.logits((instance.real_view, chosen, instance.entities))
        return int(np.argmax(logits))

    # -- assembly --

    def _diversity(self) -> tuple[StageDiversity, ...]:
        stages = extract_stages(self._final_instances(), self.schema)
        usable = {name: m for name, m in stages.items() if m.shape[0] >= 2}
        if not usable:
            return ()
        pca_dim = min(self.config.pca_dim, self.schema.v_spec.size)
        report = diversity_report(usable, pca_dim, self.config.gmm_components, seed=self.seed)
        return tuple(report)

    def _final_instances(self) -> list[Instance]:
        return [inst.with_pool(pool) for inst, pool in zip(self.instances, self.pools)]

    def execute(self, digest: str) -> RunResult:
        t0 = time.perf_counter()
        parallel_map(self._spawn_initial, range(len(self.instances)), self.config.workers)
        self.timing["generate_initial"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        selections = self.config.ccg_rounds if self.config.ccg_rounds > 0 else 1
        spawns = list(self.config.spawn_per_kept) if self.config.ccg_rounds > 0 else [0]
        for s in range(selections):
            self._select(s, spawns[s])
        self._score_unscored_candidates()
        self.timing["rounds"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        student = self._train_student()
        self.timing["train_student"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        predictions = parallel_map(
            lambda inst: self._infer_one(student, inst), self.test_instances, self.config.workers
        )
        labels = [inst.label.value for inst in self.test_instances]
        metrics = compute_metrics(predictions, labels, self.schema)
        self.timing["evaluate"] = time.perf_counter() - t0

        report = RunReport(
            condition=self.condition,
            config_digest=digest,
            seed=self.seed,
            ccg_rounds=self.config.ccg_rounds,
            rounds=tuple(self.rounds),
            final_pool_size=len(self.candidates[0]) if self.candidates else 0,
            metrics=metrics,
            diversity=self._diversity(),
            timing=dict(self.timing),
        )
        return RunResult(instances=self._final_instances(), report=report, teacher=self.teacher, student=student)


def _run_unimodal(train_instances, test_instances, schema, config: PipelineConfig, digest: str) -> RunResult:
    t0 = time.perf_counter()
    rng = derive_rng(config.seed, "unimodal-init")
    model = UnimodalModel(rng, schema)
    samples = [((inst.real_view, inst.entities), inst.label.value) for inst in train_instances]
    cfg = replace(config.student, seed=config.seed)
    train(model, samples, cfg, rng_stream=("unimodal-train",))
    train_seconds = time.perf_counter() - t0

    t0 = time.perf_counter()
    predictions = [int(np.argmax(model.logits((inst.real_view, inst.entities)))) for inst in test_instances]
    labels = [inst.label.value for inst in test_instances]
    metrics = compute_metrics(predictions, labels, schema)
    report = RunReport(
        condition="unimodal",
        config_digest=digest,
        seed=config.seed,
        ccg_rounds=0,
        rounds=(),
        final_pool_size=0,
        metrics=metrics,
        diversity=(),
        timing={"train_student": train_seconds, "evaluate": time.perf_counter() - t0},
    )
    return RunResult(instances=list(train_instances), report=report, teacher=None, student=model)


def run_pipeline(
    train_instances: Sequence[Instance],
    test_instances: Sequence[Instance],
    schema: DatasetSchema,
    g_uv,
    g_vu,
    config: PipelineConfig,
    condition: str = "full",
    config_digest: str | None = None,
) -> RunResult:
    """Execute one condition end to end and return instances plus report."""
    if condition not in CONDITIONS:
        raise PipelineError(f"unknown condition {condition!r}; choose one of {CONDITIONS}")
    digest = config_digest or config_hash({"pipeline": config.to_dict(), "condition": condition})
    if condition == "unimodal":
        return _run_unimodal(train_instances, test_instances, schema, config, digest)
    run = _Run(train_instances, test_instances, schema, g_uv, g_vu, config, condition)
    return run.execute(digest)


def condition_config(base: PipelineConfig, condition: str) -> PipelineConfig:
    """Config tweaks per ablation condition; everything else stays shared."""
    if condition in ("full", "unimodal"):
        return base
    if condition == "no_ccg":
        return replace(base, ccg_rounds=0, spawn_per_kept=())
    if condition == "similarity_teacher":
        return replace(base, policy_name="similarity")
    if condition == "random_teacher":
        return replace(base, policy_name="random")
    if condition == "no_teacher":
        return replace(base, policy_name="keep_all")
    raise PipelineError(f"unknown condition {condition!r}")


# --- stepwise building blocks ---------------------------------------------------
#
# These mirror the phases of run_pipeline one call at a time, reading candidate
# state back out of view provenance: a v-side view is a live candidate while it
# is selected or not yet scored. Streams match the orchestrated run, so driving
# the steps by hand reproduces run_pipeline exactly.


def _candidate_ids(instance: Instance) -> list[int]:
    return [
        i
        for i, sv in enumerate(instance.synthetic_pool)
        if sv.step == STEP_U_TO_V and (sv.selected or sv.teacher_loss is None)
    ]


def run_round0(
    instances: Sequence[Instance], g_uv, config: PipelineConfig
) -> list[Instance]:
    """Give every instance its initial batch of generated views.

    Requires empty synthetic pools; each instance ends up with exactly
    ``config.initial_views`` round-0 views parented to the real view.
    """
    occupied = [inst.id for inst in instances if inst.synthetic_pool]
    if occupied:
        raise PipelineError(f"instances already hold synthetic views: {occupied[:5]}")

    def build(instance: Instance) -> Instance:
        pool = []
        for j in range(config.initial_views):
            rng = derive_rng(config.seed, "gen", instance.id, 0, j)
            view = sample_channel(g_uv, instance.real_view, rng)
            pool.append(SyntheticView(view=view, round=0, step=STEP_U_TO_V, parent_id=REAL_PARENT))
        return instance.with_pool(pool)

    return parallel_map(build, instances, config.workers)


def run_ccg_round(
    instances: Sequence[Instance],
    round_index: int,
    g_vu,
    g_uv,
    spawn: int,
    teacher_config: TrainConfig,
    keep_fraction: float,
    schema: DatasetSchema,
    seed: int = 0,
    workers: int = 1,
) -> list[Instance]:
    """One selection-plus-generation round under the teacher-loss policy.

    ``round_index`` is 1-based: round 1 judges the initial views. A fresh
    teacher trains on every live candidate, its frozen final-pass losses are
    written back as ``teacher_loss``, the best ``keep_fraction`` per instance
    keep their ``selected`` flag, and each kept view spawns ``spawn``
    children (u-side then v-side, both recorded).
    """
    if round_index < 1:
        raise PipelineError("round_index is 1-based")
    if spawn < 0:
        raise PipelineError("spawn must be non-negative")
    selection_index = round_index - 1
    instances = list(instances)
    pools = [list(inst.synthetic_pool) for inst in instances]
    candidates = [_candidate_ids(inst) for inst in instances]
    if any(not cand for cand in candidates):
        raise PipelineError("every instance needs at least one live candidate view")

    if teacher_config.seed != seed:
        teacher_config = replace(teacher_config, seed=seed)
    rng = derive_rng(seed, "teacher-init", selection_index)
    teacher = TeacherModel(rng, schema)
    samples = []
    for idx, instance in enumerate(instances):
        for cand in candidates[idx]:
            samples.append(((pools[idx][cand].view, instance.entities), instance.label.value))
    _, losses = train(teacher, samples, teacher_config, rng_stream=("teacher-train", selection_index))

    cursor = 0
    for idx, instance in enumerate(instances):
        cand_ids = candidates[idx]
        pool = pools[idx]
        scores = [float(x) for x in losses[cursor : cursor + len(cand_ids)]]
        cursor += len(cand_ids)
        k = keep_count(keep_fraction, len(cand_ids))
        order = sorted(range(len(cand_ids)), key=lambda i: (scores[i], i))
        kept_local = set(order[:k])
        for local, cand in enumerate(cand_ids):
            pool[cand] = pool[cand].scored(scores[local]).with_selected(local in kept_local)
        if spawn > 0:
            for local in sorted(kept_local):
                parent_idx = cand_ids[local]
                parent = pool[parent_idx]
                for j in range(spawn):
                    child_rng = derive_rng(seed, "gen", instance.id, round_index, parent_idx, j)
                    u_view = sample_channel(g_vu, parent.view, child_rng)
                    pool.append(
                        SyntheticView(
                            view=u_view, round=round_index, step=STEP_V_TO_U, parent_id=parent_idx
                        )
                    )
                    u_idx = len(pool) - 1
                    v_view = sample_channel(g_uv, u_view, child_rng)
                    pool.append(
                        SyntheticView(view=v_view, round=round_index, step=STEP_U_TO_V, parent_id=u_idx)
                    )
    return [inst.with_pool(pool) for inst, pool in zip(instances, pools)]


def train_student(
    instances: Sequence[Instance],
    n_train: int,
    student_config: TrainConfig,
    schema: DatasetSchema,
    seed: int = 0,
    teacher: TeacherModel | None = None,
    shared_attention: bool = True,
) -> StudentModel:
    """Train the fusion student on each instance's best synthetic views.

    Per instance the ``n_train`` lowest-teacher-loss live candidates join the
    real view and entities. Pass the final round's ``teacher`` to also score
    candidates generated after the last selection (the orchestrated run does);
    without one, only views that already carry a loss are ranked.
    """
    samples = []
    for instance in instances:
        ranked = []
        for cand in _candidate_ids(instance):
            sv = instance.synthetic_pool[cand]
            loss = sv.teacher_loss
            if loss is None and teacher is not None:
                loss = teacher_loss_of(teacher, sv.view, instance)
            if loss is not None:
                ranked.append((loss, cand, sv.view))
        if len(ranked) < n_train:
            raise PipelineError(
                f"instance {instance.id} has {len(ranked)} scored candidate views, needs {n_train}"
            )
        ranked.sort(key=lambda item: (item[0], item[1]))
        chosen = tuple(view for _, _, view in ranked[:n_train])
        samples.append(((instance.real_view, chosen, instance.entities), instance.label.value))
    rng = derive_rng(seed, "student-init")
    student = StudentModel(rng, schema, shared_attention=shared_attention)
    if student_config.seed != seed:
        student_config = replace(student_config, seed=seed)
    train(student, samples, student_config, rng_stream=("student-train",))
    return student


def infer(
    student: StudentModel,
    teacher: TeacherModel | None,
    instance: Instance,
    g_uv,
    config: PipelineConfig,
    g_vu=None,
    real_v: View | None = None,
) -> Label:
    """Classify one test instance.

    Fresh views come from the round-0 channel (or the whole chain when
    ``config.infer_full_chain`` and ``g_vu`` are given); the teacher keeps the
    ``config.infer_views`` most confidently classified ones. A real v-side
    view, when supplied, joins the set unscored. Without a teacher the first
    generated views are used as-is.
    """
    n_gen = config.infer_generate or config.initial_views
    views = []
    for j in range(n_gen):
        rng = derive_rng(config.seed, "infer-gen", instance.id, j)
        view = sample_channel(g_uv, instance.real_view, rng)
        if config.infer_full_chain and g_vu is not None:
            for _ in range(config.ccg_rounds):
                view = sample_channel(g_uv, sample_channel(g_vu, view, rng), rng)
        views.append(view)
    if teacher is not None:
        scores = [teacher_confidence_loss(teacher, v, instance) for v in views]
        order = sorted(range(len(views)), key=lambda i: (scores[i], i))
    else:
        order = list(range(len(views)))
    chosen = [views[i] for i in order[: config.infer_views]]
    if real_v is not None:
        if real_v.modality != MODALITY_V or not real_v.matches(student.schema.v_spec):
            raise PipelineError("appended real view does not match the synthetic-side spec")
        chosen.append(real_v)
    logits = student.logits((instance.real_view, tuple(chosen), instance.entities))
    return Label(int(np.argmax(logits)))


# --- stage extraction ---------------------------------------------------------


def extract_stages(instances: Sequence[Instance], schema: DatasetSchema) -> dict[str, np.ndarray]:
    """Per-stage view matrices recovered from provenance alone.

    Raw stages gather v-side views by generation round ("V1'", "V2'", ...).
    Kept stages ("V0", "V1", ...) are the parents of the next round's
    children -- a view was kept at selection s exactly when a round-(s+1)
    u-side view points at it -- with the final selection falling back to the
    stored ``selected`` flags when no later round exists to encode it.
    """
    rounds = set()
    for inst in instances:
        for sv in inst.synthetic_pool:
            rounds.add(sv.round)
    if not rounds:
        return {}
    max_round = max(rounds)

    kept_by_stage: dict[int, list[View]] = {}
    raw_by_round: dict[int, list[View]] = {}
    # A selection with no children after it leaves no parent links, but its
    # verdict is still in the selected flags (nothing later rewrote them).
    # That happened exactly when the newest round's views carry a True flag;
    # the kept set is then every currently-flagged v-side view.
    ended_with_selection = any(
        sv.selected
        for inst in instances
        for sv in inst.synthetic_pool
        if sv.step == STEP_U_TO_V and sv.round == max_round
    )
    flagged: list[View] = []
    for inst in instances:
        pool = inst.synthetic_pool
        for sv in pool:
            if sv.step == STEP_U_TO_V:
                raw_by_round.setdefault(sv.round, []).append(sv.view)
                if sv.selected:
                    flagged.append(sv.view)
        for s in range(max_round):
            parents = sorted(
                {
                    sv.parent_id
                    for sv in pool
                    if sv.round == s + 1 and sv.step == STEP_V_TO_U and sv.parent_id != REAL_PARENT
                }
            )
            if parents:
                kept_by_stage.setdefault(s, []).extend(pool[p].view for p in parents)
    if ended_with_selection:
        kept_by_stage.setdefault(max_round, []).extend(flagged)

    stages: dict[str, np.ndarray] = {}
    for s in range(max_round + 1):
        if s in kept_by_stage:
            stages[f"V{s}"] = views_to_matrix(kept_by_stage[s], schema.v_spec)
        if s + 1 in raw_by_round:
            stages[f"V{s + 1}'"] = views_to_matrix(raw_by_round[s + 1], schema.v_spec)
    return stages


# --- ablation -----------------------------------------------------------------


@dataclass(frozen=True)
class AblationRow:
    condition: str
    seed: int
    accuracy: float
    precision: float
    recall: float
    f1: float


def run_ablation(
    make_world,
    base_config: PipelineConfig,
    seeds: Sequence[int],
    conditions: Sequence[str] = CONDITIONS,
    n_train_per_class: int = 35,
    n_test_per_class: int = 75,
) -> tuple[list[AblationRow], list[RunReport]]:
    """Run every condition on shared per-seed benchmarks.

    ``make_world`` maps a seed to ``(world, g_uv, g_vu, v_spec)``; the same
    generated train/test instances and the same master seed feed every
    condition, so rows differ only in the condition itself.
    """
    for condition in conditions:
        if condition not in CONDITIONS:
            raise PipelineError(f"unknown condition {condition!r}")
    rows: list[AblationRow] = []
    reports: list[RunReport] = []
    for seed in seeds:
        world, g_uv, g_vu, v_spec = make_world(seed)
        from .channels import generate_benchmark  # local to avoid cycle at import time

        train_instances, schema = generate_benchmark(world, n_train_per_class, v_spec, stream="train")
        test_instances, _ = generate_benchmark(world, n_test_per_class, v_spec, stream="test")
        for condition in conditions:
            config = replace(condition_config(base_config, condition), seed=seed)
            result = run_pipeline(train_instances, test_instances, schema, g_uv, g_vu, config, condition)
            metrics = result.report.metrics
            rows.append(
                AblationRow(
                    condition=condition,
                    seed=seed,
                    accuracy=metrics["accuracy"],
                    precision=metrics["precision"],
                    recall=metrics["recall"],
                    f1=metrics["f1"],
                )
            )
            reports.append(result.report)
    return rows, reports


def ablation_table(rows: Sequence[AblationRow]) -> list[dict]:
    """Per-seed rows plus one ``<condition>_mean`` row per condition, all with
    the metric columns condition/accuracy/precision/recall/f1."""
    table = [
        {
            "condition": row.condition,
            "accuracy": row.accuracy,
            "precision": row.precision,
            "recall": row.recall,
            "f1": row.f1,
        }
        for row in rows
    ]
    seen: list[str] = []
    for row in rows:
        if row.condition not in seen:
            seen.append(row.condition)
    for condition in seen:
        group = [row for row in rows if row.condition == condition]
        table.append(
            {
                "condition": f"{condition}_mean",
                "accuracy": float(np.mean([r.accuracy for r in group])),
                "precision": float(np.mean([r.precision for r in group])),
                "recall": float(np.mean([r.recall for r in group])),
                "f1": float(np.mean([r.f1 for r in group])),
            }
        )
    return table


# --- report serialization ------------------------------------------------------


def report_to_dict(report: RunReport) -> dict:
    return {
        "condition": report.condition,
        "config_digest": report.config_digest,
        "seed": report.seed,
        "ccg_rounds": report.ccg_rounds,
        "final_pool_size": report.final_pool_size,
        "metrics": report.metrics,
        "rounds": [
            {
                "selection_index": r.selection_index,
                "pool_size": r.pool_size,
                "kept_size": r.kept_size,
                "spawned": r.spawned,
                "per_instance": [
                    {
                        "instance_id": p.instance_id,
                        "candidate_ids": list(p.candidate_ids),
                        "scores": list(p.scores),
                        "kept_ids": list(p.kept_ids),
                    }
                    for p in r.per_instance
                ],
            }
            for r in report.rounds
        ],
        "diversity": [
            {
                "stage": d.stage,
                "n_views": d.n_views,
                "pca_dim": d.pca_dim,
                "n_components": d.n_components,
                "statistic": d.statistic,
            }
            for d in report.diversity
        ],
        "timing": report.timing,
    }


def save_report(report: RunReport, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(report_to_dict(report), handle, indent=2, sort_keys=False)
        handle.write("\n")


def metrics_table_text(rows: Sequence[dict]) -> str:
    """Render metric rows as the canonical CSV (deterministic float text)."""
    lines = [",".join(METRIC_COLUMNS)]
    for row in rows:
        lines.append(
            ",".join(
                [str(row["condition"])]
                + [repr(float(row[c])) for c in ("accuracy", "precision", "recall", "f1")]
            )
        )
    return "\n".join(lines) + "\n"
