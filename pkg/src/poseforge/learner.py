"""Desk-scale stand-in for the CNN head: linear softmax classifier plus
per-anchor linear regressors over externally supplied feature vectors,
trained by plain gradient descent on the labeling losses.

An optional two-pass mode feeds the first pass's outputs back in,
concatenated with the features, to a second linear head that produces
the final estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from poseforge.anchors import AnchorSet
from poseforge.labeling import (
    BACKGROUND,
    LabeledBox,
    apply_regression,
    smooth_l1,
    smooth_l1_grad,
)
from poseforge.pose import BoundingBox


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 300
    learning_rate: float = 0.5
    decay_factor: float = 0.1      # applied once, partway through
    decay_fraction: float = 0.6    # fraction of iterations at the base rate
    seed: int = 0
    init_scale: float = 0.01
    two_pass: bool = False


@dataclass(eq=False)
class _Head:
    """One linear classification + regression head."""

    w_cls: np.ndarray  # (D, C)
    b_cls: np.ndarray  # (C,)
    w_reg: np.ndarray  # (D, 5*J*C)
    b_reg: np.ndarray  # (5*J*C,)

    @classmethod
    def init(cls, rng, dim, n_classes, slot_width, scale):
        return cls(
            w_cls=rng.normal(0.0, scale, size=(dim, n_classes)),
            b_cls=np.zeros(n_classes),
            w_reg=rng.normal(0.0, scale, size=(dim, slot_width * n_classes)),
            b_reg=np.zeros(slot_width * n_classes),
        )

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        logits = x @ self.w_cls + self.b_cls
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        probs = e / e.sum(axis=1, keepdims=True)
        return probs, x @ self.w_reg + self.b_reg


@dataclass(eq=False)
class ToyModel:
    """Trained weights plus everything needed to reproduce the run."""

    head: _Head
    feature_dim: int
    n_classes: int
    joint_count: int
    config: TrainConfig
    loss_history: list[tuple[int, float, float, float]] = field(default_factory=list)
    refine_head: _Head | None = None

    @property
    def slot_width(self) -> int:
        return 5 * self.joint_count


def _train_head(head, x, labels, targets, config, loss_history, it_offset):
    """Gradient descent on mean (classification + regression) loss."""
    n, _ = x.shape
    c = head.b_cls.shape[0]
    w = head.b_reg.shape[0] // c
    pos = labels != BACKGROUND
    rows = np.arange(n)
    switch = int(config.decay_fraction * config.iterations)
    for it in range(config.iterations):
        lr = config.learning_rate * (1.0 if it < switch else config.decay_factor)
        probs, v = head.forward(x)

        cls_loss = float(
            -np.log(np.maximum(probs[rows, labels], 1e-12)).mean()
        )
        g_logits = probs.copy()
        g_logits[rows, labels] -= 1.0
        g_logits /= n

        g_v = np.zeros_like(v)
        reg_loss = 0.0
        for i in np.where(pos)[0]:
            sl = slice(labels[i] * w, (labels[i] + 1) * w)
            err = targets[i] - v[i, sl]
            reg_loss += float(smooth_l1(err).sum())
            g_v[i, sl] = -smooth_l1_grad(err)
        reg_loss /= n
        g_v /= n

        loss_history.append((it_offset + it, cls_loss, reg_loss, cls_loss + reg_loss))

        head.w_cls -= lr * (x.T @ g_logits)
        head.b_cls -= lr * g_logits.sum(axis=0)
        head.w_reg -= lr * (x.T @ g_v)
        head.b_reg -= lr * g_v.sum(axis=0)
    return loss_history


def train(
    examples: list[tuple[np.ndarray, LabeledBox]],
    anchors: AnchorSet,
    config: TrainConfig = TrainConfig(),
) -> ToyModel:
    """Fit the toy model on (feature, labeled box) pairs.

    Deterministic given config.seed. Raises on inconsistent feature or
    target dimensions.
    """
    if not examples:
        raise ValueError("no training examples")
    x = np.stack([np.asarray(f, dtype=np.float64) for f, _ in examples])
    if x.ndim != 2:
        raise ValueError("features must be fixed-dimension vectors")
    j = anchors.spec.joint_count
    n_classes = len(anchors) + 1
    slot = 5 * j
    labels = np.array([lab.class_label for _, lab in examples], dtype=int)
    if labels.max() >= n_classes:
        raise ValueError("class label exceeds anchor count")
    targets = np.zeros((len(examples), slot))
    for i, (_, lab) in enumerate(examples):
        if lab.class_label != BACKGROUND:
            if len(lab.target) != slot:
                raise ValueError(f"target length {len(lab.target)} != {slot}")
            targets[i] = lab.target

    rng = np.random.default_rng(config.seed)
    head = _Head.init(rng, x.shape[1], n_classes, slot, config.init_scale)
    model = ToyModel(
        head=head,
        feature_dim=x.shape[1],
        n_classes=n_classes,
        joint_count=j,
        config=config,
    )
    _train_head(head, x, labels, targets, config, model.loss_history, 0)

    if config.two_pass:
        probs, v = head.forward(x)
        x2 = np.concatenate([x, probs, v], axis=1)
        refine = _Head.init(rng, x2.shape[1], n_classes, slot, config.init_scale)
        _train_head(refine, x2, labels, targets, config,
                    model.loss_history, config.iterations)
        model.refine_head = refine
    return model


def model_outputs(model: ToyModel, feature: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Class probabilities and regression vector for one feature vector."""
    x = np.asarray(feature, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != model.feature_dim:
        raise ValueError(f"feature dim {x.shape[1]} != {model.feature_dim}")
    probs, v = model.head.forward(x)
    if model.refine_head is not None:
        x2 = np.concatenate([x, probs, v], axis=1)
        probs, v = model.refine_head.forward(x2)
    return probs[0], v[0]


def predict(model: ToyModel, feature: np.ndarray, box: BoundingBox,
            anchors: AnchorSet) -> list:
    """One scored PoseProposal per non-background class.

    Proposal k carries score u(k+1) and the pose reconstructed from
    anchor k's slice of the regression output; scores plus the
    background probability sum to 1.
    """
    from poseforge.ppi import PoseProposal  # local import to avoid a cycle

    probs, v = model_outputs(model, feature)
    w = model.slot_width
    proposals = []
    for a in anchors.anchors:
        c = a.id + 1
        pose2d, pose3d = apply_regression(a, box, v[c * w:(c + 1) * w])
        proposals.append(
            PoseProposal(
                anchor_id=a.id,
                box=box,
                pose2d=pose2d,
                pose3d=pose3d,
                score=float(probs[c]),
            )
        )
    return proposals
