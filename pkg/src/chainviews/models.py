"""Teacher and student networks plus the shared training loop.

The teacher never sees the real view: it classifies a synthetic view from
the entity pair and the view alone, so its per-sample loss measures how much
label evidence survived the generation chain. The student fuses the real
view with a *set* of synthetic views through shared single-query
cross-attention: entity-conditioned queries built from the real encoding
attend over the synthetic encodings, the two attended vectors are
concatenated, and a feedforward stage plus linear head produce logits. The
unimodal baseline is the student with the synthetic branch removed.

All three expose the same surface -- ``params``, ``logits(inputs)``,
``loss_and_grads(sample)`` -- which is what :func:`train` and the gradient
checker operate on. Samples are ``(inputs, label)`` pairs where ``inputs``
is the tuple ``logits`` expects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .datamodel import MODALITY_U, MODALITY_V, DatasetSchema, EntityPair, View
from .nn import (
    Grads,
    Params,
    accumulate,
    attention_init,
    cross_attention,
    cross_attention_backward,
    featurize,
    finite_difference_check,
    linear_backward,
    linear_forward,
    linear_init,
    mlp_backward,
    mlp_forward,
    mlp_init,
    softmax_xent,
)

CHECKPOINT_VERSION = 1


class ModalityError(ValueError):
    """A view arrived on the wrong side of a model."""


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"loss became non-finite at optimizer step {step}")


def _spec_feature_dim(spec) -> int:
    return spec.size


def _entity_rows(params: Params, entities: EntityPair) -> tuple[np.ndarray, np.ndarray]:
    table = params["entity_emb"]
    return table[entities.subject], table[entities.object]


def _entity_grad(grads: Grads, table: np.ndarray, entities: EntityPair, d_subj, d_obj) -> None:
    g = np.zeros_like(table)
    g[entities.subject] += d_subj
    g[entities.object] += d_obj
    accumulate(grads, "entity_emb", g)


class TeacherModel:
    """Entity embeddings + synthetic-view encoder + fusion head."""

    def __init__(
        self,
        rng: np.random.Generator,
        schema: DatasetSchema,
        emb_dim: int = 8,
        enc_hidden: int = 16,
        enc_dim: int = 8,
        fuse_hidden: int = 16,
        fuse_dim: int = 12,
    ):
        self.schema = schema
        self.params: Params = {}
        self.params["entity_emb"] = rng.normal(0.0, 0.5, size=(schema.entity_vocab, emb_dim))
        feat = _spec_feature_dim(schema.v_spec)
        mlp_init(self.params, rng, "venc", feat, enc_hidden, enc_dim)
        mlp_init(self.params, rng, "fuse", 2 * emb_dim + enc_dim, fuse_hidden, fuse_dim)
        linear_init(self.params, rng, "head", fuse_dim, schema.class_count)

    def logits(self, inputs) -> np.ndarray:
        return self._forward(*inputs)[0]

    def _forward(self, view: View, entities: EntityPair):
        if view.modality != MODALITY_V:
            raise ModalityError("the teacher scores v-side views only")
        x = featurize(view, self.schema.v_spec.size)
        enc, c_enc = mlp_forward(self.params, "venc", x)
        subj, obj = _entity_rows(self.params, entities)
        fused_in = np.concatenate([subj, obj, enc])
        fused, c_fuse = mlp_forward(self.params, "fuse", fused_in)
        logits, c_head = linear_forward(self.params, "head", fused)
        cache = (entities, subj.shape[0], c_enc, c_fuse, c_head)
        return logits, cache

    def loss_and_grads(self, sample) -> tuple[float, Grads]:
        (view, entities), label = sample
        logits, cache = self._forward(view, entities)
        loss, dlogits = softmax_xent(logits, label)
        grads: Grads = {}
        entities, emb_dim, c_enc, c_fuse, c_head = cache
        dfused = linear_backward(self.params, c_head, dlogits, grads)
        dfused_in = mlp_backward(self.params, c_fuse, dfused, grads)
        d_subj = dfused_in[:emb_dim]
        d_obj = dfused_in[emb_dim : 2 * emb_dim]
        d_enc = dfused_in[2 * emb_dim :]
        mlp_backward(self.params, c_enc, d_enc, grads)
        _entity_grad(grads, self.params["entity_emb"], entities, d_subj, d_obj)
        return loss, grads

    def loss(self, view: View, entities: EntityPair, label: int) -> float:
        loss, _ = softmax_xent(self.logits((view, entities)), label)
        return loss


class StudentModel:
    """Real-view plus synthetic-set fusion via shared cross-attention.

    ``shared_attention=False`` gives the subject and object queries separate
    attention blocks; the default shares one block across both applications.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        schema: DatasetSchema,
        emb_dim: int = 8,
        real_hidden: int = 16,
        real_dim: int = 8,
        synth_hidden: int = 16,
        synth_dim: int = 8,
        query_dim: int = 8,
        key_dim: int = 8,
        value_dim: int = 8,
        ff_hidden: int = 16,
        ff_dim: int = 12,
        shared_attention: bool = True,
    ):
        if query_dim != value_dim:
            raise ValueError("the residual around the attention needs query_dim == value_dim")
        self.schema = schema
        self.shared_attention = shared_attention
        self.params: Params = {}
        self.params["entity_emb"] = rng.normal(0.0, 0.5, size=(schema.entity_vocab, emb_dim))
        mlp_init(self.params, rng, "uenc", _spec_feature_dim(schema.u_spec), real_hidden, real_dim)
        mlp_init(self.params, rng, "venc", _spec_feature_dim(schema.v_spec), synth_hidden, synth_dim)
        linear_init(self.params, rng, "qsub", real_dim + emb_dim, query_dim)
        linear_init(self.params, rng, "qobj", real_dim + emb_dim, query_dim)
        attention_init(self.params, rng, "attn", query_dim, synth_dim, key_dim, value_dim)
        if not shared_attention:
            attention_init(self.params, rng, "attn2", query_dim, synth_dim, key_dim, value_dim)
        mlp_init(self.params, rng, "ff", 2 * value_dim, ff_hidden, ff_dim)
        linear_init(self.params, rng, "head", ff_dim, schema.class_count)
        self._emb_dim = emb_dim

    def logits(self, inputs) -> np.ndarray:
        return self._forward(*inputs)[0]

    def _forward(self, real_view: View, synth_views: tuple[View, ...], entities: EntityPair):
        if real_view.modality != MODALITY_U:
            raise ModalityError("the student's primary input is the u-side real view")
        if not synth_views:
            raise ValueError("the student needs at least one synthetic view")
        for view in synth_views:
            if view.modality != MODALITY_V:
                raise ModalityError("synthetic inputs to the student must be v-side views")

        x_u = featurize(real_view, self.schema.u_spec.size)
        real_enc, c_real = mlp_forward(self.params, "uenc", x_u)
        subj, obj = _entity_rows(self.params, entities)

        q_sub_in = np.concatenate([real_enc, subj])
        q_obj_in = np.concatenate([real_enc, obj])
        q_sub, c_qsub = linear_forward(self.params, "qsub", q_sub_in)
        q_obj, c_qobj = linear_forward(self.params, "qobj", q_obj_in)

        rows = []
        row_caches = []
        for view in synth_views:
            x_v = featurize(view, self.schema.v_spec.size)
            row, c_row = mlp_forward(self.params, "venc", x_v)
            rows.append(row)
            row_caches.append(c_row)
        matrix = np.stack(rows)

        attn2 = "attn" if self.shared_attention else "attn2"
        att_sub, c_att_sub = cross_attention(self.params, "attn", q_sub, matrix, matrix)
        att_obj, c_att_obj = cross_attention(self.params, attn2, q_obj, matrix, matrix)

        # residual around the attention: the query (real view + entity) stays
        # on the path to the head even when every synthetic view is junk
        ff_in = np.concatenate([q_sub + att_sub, q_obj + att_obj])
        fused, c_ff = mlp_forward(self.params, "ff", ff_in)
        logits, c_head = linear_forward(self.params, "head", fused)
        cache = (
            entities,
            c_real,
            c_qsub,
            c_qobj,
            row_caches,
            c_att_sub,
            c_att_obj,
            c_ff,
            c_head,
            att_sub.shape[0],
        )
        return logits, cache

    def loss_and_grads(self, sample) -> tuple[float, Grads]:
        (real_view, synth_views, entities), label = sample
        logits, cache = self._forward(real_view, synth_views, entities)
        loss, dlogits = softmax_xent(logits, label)
        grads: Grads = {}
        (
            entities,
            c_real,
            c_qsub,
            c_qobj,
            row_caches,
            c_att_sub,
            c_att_obj,
            c_ff,
            c_head,
            value_dim,
        ) = cache
        dfused = linear_backward(self.params, c_head, dlogits, grads)
        dff_in = mlp_backward(self.params, c_ff, dfused, grads)
        d_att_sub = dff_in[:value_dim]
        d_att_obj = dff_in[value_dim:]

        dq_sub, dm_sub_k, dm_sub_v = cross_attention_backward(self.params, c_att_sub, d_att_sub, grads)
        dq_obj, dm_obj_k, dm_obj_v = cross_attention_backward(self.params, c_att_obj, d_att_obj, grads)
        dq_sub = dq_sub + d_att_sub
        dq_obj = dq_obj + d_att_obj
        dmatrix = dm_sub_k + dm_sub_v + dm_obj_k + dm_obj_v

        for c_row, drow in zip(row_caches, dmatrix):
            mlp_backward(self.params, c_row, drow, grads)

        dq_sub_in = linear_backward(self.params, c_qsub, dq_sub, grads)
        dq_obj_in = linear_backward(self.params, c_qobj, dq_obj, grads)
        emb = self._emb_dim
        d_real = dq_sub_in[:-emb] + dq_obj_in[:-emb]
        d_subj = dq_sub_in[-emb:]
        d_obj = dq_obj_in[-emb:]
        mlp_backward(self.params, c_real, d_real, grads)
        _entity_grad(grads, self.params["entity_emb"], entities, d_subj, d_obj)
        return loss, grads


class UnimodalModel:
    """Real-view encoder + entity embeddings + linear head (no synthetics)."""

    def __init__(
        self,
        rng: np.random.Generator,
        schema: DatasetSchema,
        emb_dim: int = 8,
        real_hidden: int = 16,
        real_dim: int = 8,
    ):
        self.schema = schema
        self.params: Params = {}
        self.params["entity_emb"] = rng.normal(0.0, 0.5, size=(schema.entity_vocab, emb_dim))
        mlp_init(self.params, rng, "uenc", _spec_feature_dim(schema.u_spec), real_hidden, real_dim)
        linear_init(self.params, rng, "head", real_dim + 2 * emb_dim, schema.class_count)
        self._emb_dim = emb_dim

    def logits(self, inputs) -> np.ndarray:
        return self._forward(*inputs)[0]

    def _forward(self, real_view: View, entities: EntityPair):
        if real_view.modality != MODALITY_U:
            raise ModalityError("the unimodal model consumes u-side views")
        x_u = featurize(real_view, self.schema.u_spec.size)
        real_enc, c_real = mlp_forward(self.params, "uenc", x_u)
        subj, obj = _entity_rows(self.params, entities)
        head_in = np.concatenate([real_enc, subj, obj])
        logits, c_head = linear_forward(self.params, "head", head_in)
        return logits, (entities, real_enc.shape[0], c_real, c_head)

    def loss_and_grads(self, sample) -> tuple[float, Grads]:
        (real_view, entities), label = sample
        logits, cache = self._forward(real_view, entities)
        loss, dlogits = softmax_xent(logits, label)
        grads: Grads = {}
        entities, real_dim, c_real, c_head = cache
        dhead_in = linear_backward(self.params, c_head, dlogits, grads)
        d_real = dhead_in[:real_dim]
        d_subj = dhead_in[real_dim : real_dim + self._emb_dim]
        d_obj = dhead_in[real_dim + self._emb_dim :]
        mlp_backward(self.params, c_real, d_real, grads)
        _entity_grad(grads, self.params["entity_emb"], entities, d_subj, d_obj)
        return loss, grads


# --- training -----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    steps: int = 200
    batch_size: int = 32
    weight_decay: float = 0.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    cosine_decay: bool = False

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be non-negative")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")


class AdamW:
    """Adam with decoupled weight decay; the decay term never enters the
    moment estimates."""

    def __init__(self, params: Params, config: TrainConfig):
        self.config = config
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Params, grads: Grads, lr: float) -> None:
        cfg = self.config
        self.t += 1
        for key, w in params.items():
            g = grads.get(key)
            if g is None:
                g = np.zeros_like(w)
            self.m[key] = cfg.beta1 * self.m[key] + (1 - cfg.beta1) * g
            self.v[key] = cfg.beta2 * self.v[key] + (1 - cfg.beta2) * g * g
            m_hat = self.m[key] / (1 - cfg.beta1**self.t)
            v_hat = self.v[key] / (1 - cfg.beta2**self.t)
            w -= lr * (m_hat / (np.sqrt(v_hat) + cfg.adam_eps) + cfg.weight_decay * w)


def _learning_rate(config: TrainConfig, step: int) -> float:
    if not config.cosine_decay or config.steps <= 1:
        return config.learning_rate
    progress = step / (config.steps - 1)
    return config.learning_rate * 0.5 * (1.0 + math.cos(math.pi * progress))


def train(model, samples, config: TrainConfig, rng_stream=("train",)):
    """Run AdamW on mean batch loss; returns (model, per_sample_losses).

    Batches are drawn as contiguous chunks of a per-epoch permutation, all
    from the model's own derived stream, so identical (config, samples)
    always produce identical parameters. The returned losses come from one
    final frozen pass in input order.
    """
    from .rng import derive_rng

    samples = list(samples)
    if not samples:
        raise ValueError("cannot train on an empty sample list")
    rng = derive_rng(config.seed, *rng_stream)
    optimizer = AdamW(model.params, config)
    order = rng.permutation(len(samples))
    cursor = 0
    for step in range(config.steps):
        if cursor >= len(samples):
            order = rng.permutation(len(samples))
            cursor = 0
        batch = order[cursor : cursor + config.batch_size]
        cursor += config.batch_size
        grads: Grads = {}
        total = 0.0
        for idx in batch:
            loss, sample_grads = model.loss_and_grads(samples[idx])
            total += loss
            for key, value in sample_grads.items():
                accumulate(grads, key, value)
        if not math.isfinite(total):
            raise TrainingDivergedError(step)
        scale = 1.0 / len(batch)
        for key in grads:
            grads[key] *= scale
        optimizer.step(model.params, grads, _learning_rate(config, step))

    losses = []
    for sample in samples:
        inputs, label = sample
        loss, _ = softmax_xent(model.logits(inputs), label)
        losses.append(loss)
    return model, np.array(losses)


def grad_check(model, sample, epsilon: float = 1e-5) -> float:
    """Max relative error of the model's analytic gradients on one sample."""
    _, analytic = model.loss_and_grads(sample)

    def loss_fn():
        inputs, label = sample
        loss, _ = softmax_xent(model.logits(inputs), label)
        return loss

    return finite_difference_check(model.params, loss_fn, analytic, epsilon=epsilon)


# --- checkpoints ---------------------------------------------------------------


def save_params(params: Params, path) -> None:
    """Write a flat named-tensor checkpoint (.npz with a version stamp)."""
    payload = {"__version__": np.array(CHECKPOINT_VERSION)}
    payload.update(params)
    np.savez(path, **payload)


def load_params(path) -> Params:
    with np.load(path) as data:
        version = int(data["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        return {k: data[k].copy() for k in data.files if k != "__version__"}
