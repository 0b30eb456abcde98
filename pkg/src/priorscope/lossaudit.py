"""Numerical evaluation of the detector training objective.

total = (L_conf + alpha * L_loc + beta * L_state) / N

* L_conf: two-class softmax cross-entropy (background vs object) over the
  matched priors plus the selected negatives.
* L_loc: smooth-L1 between predicted and encoded offsets, matched priors only.
* L_state: per-class sigmoid cross-entropy against the one-hot GT state
  (off, red, yellow, green), matched priors only.

Nothing here trains anything; values and logit gradients exist for audits.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .geometry import BoundingBox, as_array
from .matching import MatchResult
from .priors import PriorBoxSet

STATES = ("off", "red", "yellow", "green")
DEFAULT_VARIANCES = (0.1, 0.2)


def state_index(state) -> int:
    if isinstance(state, (int, np.integer)) and 0 <= state < len(STATES):
        return int(state)
    try:
        return STATES.index(str(state).lower())
    except ValueError:
        raise ValueError(f"unknown state label {state!r}; expected one of {STATES}") from None


def encode_offsets(prior, gt, variances=DEFAULT_VARIANCES) -> np.ndarray:
    """Center-size SSD encoding of ``gt`` relative to ``prior``.

    Accepts single boxes or aligned (N, 4) arrays.
    """
    p, g = as_array([prior] if isinstance(prior, BoundingBox) else prior), \
        as_array([gt] if isinstance(gt, BoundingBox) else gt)
    pw, ph = p[:, 2] - p[:, 0], p[:, 3] - p[:, 1]
    gw, gh = g[:, 2] - g[:, 0], g[:, 3] - g[:, 1]
    if np.any(pw <= 0) or np.any(ph <= 0):
        raise ValueError("prior must have positive width and height")
    if np.any(gw <= 0) or np.any(gh <= 0):
        raise ValueError("ground truth must have positive width and height")
    vc, vs = variances
    out = np.stack([
        ((g[:, 0] + g[:, 2]) / 2 - (p[:, 0] + p[:, 2]) / 2) / pw / vc,
        ((g[:, 1] + g[:, 3]) / 2 - (p[:, 1] + p[:, 3]) / 2) / ph / vc,
        np.log(gw / pw) / vs,
        np.log(gh / ph) / vs,
    ], axis=1)
    return out[0] if isinstance(gt, BoundingBox) else out


def decode_offsets(prior, offsets, variances=DEFAULT_VARIANCES):
    single = isinstance(prior, BoundingBox)
    p = as_array([prior] if single else prior)
    o = np.asarray(offsets, dtype=np.float64).reshape(-1, 4)
    pw, ph = p[:, 2] - p[:, 0], p[:, 3] - p[:, 1]
    if np.any(pw <= 0) or np.any(ph <= 0):
        raise ValueError("prior must have positive width and height")
    vc, vs = variances
    cx = (p[:, 0] + p[:, 2]) / 2 + o[:, 0] * vc * pw
    cy = (p[:, 1] + p[:, 3]) / 2 + o[:, 1] * vc * ph
    w = pw * np.exp(o[:, 2] * vs)
    h = ph * np.exp(o[:, 3] * vs)
    out = np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)
    return BoundingBox(*map(float, out[0])) if single else out


@dataclass(frozen=True)
class PredictionRows:
    conf: np.ndarray   # (P, 2) logits: background, object
    loc: np.ndarray    # (P, 4) encoded offsets
    state: np.ndarray  # (P, 4) logits: off, red, yellow, green

    def __post_init__(self):
        n = len(self.conf)
        shapes = {"conf": (n, 2), "loc": (n, 4), "state": (n, 4)}
        for name, shape in shapes.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")

    @classmethod
    def from_arrays(cls, conf, loc, state):
        return cls(np.asarray(conf, dtype=np.float64).reshape(-1, 2),
                   np.asarray(loc, dtype=np.float64).reshape(-1, 4),
                   np.asarray(state, dtype=np.float64).reshape(-1, 4))

    def __len__(self):
        return len(self.conf)


@dataclass(frozen=True)
class LossBreakdown:
    L_conf: float
    L_loc: float
    L_state: float
    N: int
    alpha: float
    beta: float
    total: float
    n_negatives: int

    def to_dict(self) -> dict:
        return asdict(self)

    def __add__(self, other: "LossBreakdown") -> "LossBreakdown":
        if (self.alpha, self.beta) != (other.alpha, other.beta):
            raise ValueError("cannot add breakdowns with different weights")
        n = self.N + other.N
        lc, ll, ls = self.L_conf + other.L_conf, self.L_loc + other.L_loc, self.L_state + other.L_state
        total = (lc + self.alpha * ll + self.beta * ls) / n if n else 0.0
        return LossBreakdown(lc, ll, ls, n, self.alpha, self.beta, total,
                             self.n_negatives + other.n_negatives)


def _log_softmax(z):
    m = z.max(axis=1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=1, keepdims=True))


def _bce_with_logits(s, y):
    return np.maximum(s, 0.0) - s * y + np.log1p(np.exp(-np.abs(s)))


def _smooth_l1(d):
    a = np.abs(d)
    return np.where(a < 1.0, 0.5 * d * d, a - 0.5)


def select_negatives(bg_loss, positive, policy="hard", neg_pos_ratio=3):
    """Indices of background priors entering L_conf.

    ``hard`` keeps the ``ratio * N`` highest background losses (ties to the
    lower index); ``all`` keeps every unmatched prior.
    """
    cand = np.nonzero(~positive)[0]
    if policy == "all":
        return cand
    if policy != "hard":
        raise ValueError(f"unknown negatives policy {policy!r}")
    n_neg = min(int(neg_pos_ratio * np.count_nonzero(positive)), cand.size)
    order = np.argsort(-bg_loss[cand], kind="stable")
    return np.sort(cand[order[:n_neg]])


def _targets(priors, match, gts, gt_states, variances):
    prior_boxes = priors.boxes if isinstance(priors, PriorBoxSet) else as_array(priors)
    if len(prior_boxes) != len(match.prior_gt):
        raise ValueError("match result does not belong to these priors")
    gts = as_array(gts)
    states = np.array([state_index(s) for s in gt_states], dtype=np.int64)
    if len(states) != len(gts):
        raise ValueError("need one state per ground truth")
    pos = np.nonzero(match.prior_gt >= 0)[0]
    gi = match.prior_gt[pos]
    enc = encode_offsets(prior_boxes[pos], gts[gi], variances) if pos.size else np.zeros((0, 4))
    onehot = np.zeros((pos.size, len(STATES)))
    onehot[np.arange(pos.size), states[gi]] = 1.0
    return prior_boxes, pos, enc, onehot


def evaluate_loss(priors, match: MatchResult, preds: PredictionRows, gts, gt_states,
                  alpha=1.0, beta=1.0, negatives="hard", neg_pos_ratio=3,
                  variances=DEFAULT_VARIANCES) -> LossBreakdown:
    prior_boxes, pos, enc, onehot = _targets(priors, match, gts, gt_states, variances)
    if len(preds) != len(prior_boxes):
        raise ValueError(f"{len(preds)} prediction rows for {len(prior_boxes)} priors")
    logp = _log_softmax(preds.conf)
    positive = match.prior_gt >= 0
    neg = select_negatives(-logp[:, 0], positive, negatives, neg_pos_ratio)
    l_conf = float(-logp[pos, 1].sum() - logp[neg, 0].sum())
    l_loc = float(_smooth_l1(preds.loc[pos] - enc).sum())
    l_state = float(_bce_with_logits(preds.state[pos], onehot).sum())
    n = int(pos.size)
    total = (l_conf + alpha * l_loc + beta * l_state) / n if n else 0.0
    return LossBreakdown(l_conf, l_loc, l_state, n, float(alpha), float(beta), total,
                         int(neg.size))


def loss_gradients(priors, match, preds, gts, gt_states, alpha=1.0, beta=1.0,
                   negatives="hard", neg_pos_ratio=3, variances=DEFAULT_VARIANCES):
    """Analytic d(total)/d(logits and offsets), negative selection held fixed."""
    prior_boxes, pos, enc, onehot = _targets(priors, match, gts, gt_states, variances)
    n = pos.size
    grads = {k: np.zeros_like(getattr(preds, k)) for k in ("conf", "loc", "state")}
    if n == 0:
        return grads
    logp = _log_softmax(preds.conf)
    prob = np.exp(logp)
    positive = match.prior_gt >= 0
    neg = select_negatives(-logp[:, 0], positive, negatives, neg_pos_ratio)
    grads["conf"][pos] = prob[pos] - np.array([0.0, 1.0])
    grads["conf"][neg] = prob[neg] - np.array([1.0, 0.0])
    d = preds.loc[pos] - enc
    grads["loc"][pos] = alpha * np.clip(d, -1.0, 1.0)
    grads["state"][pos] = beta * (1.0 / (1.0 + np.exp(-preds.state[pos])) - onehot)
    for k in grads:
        grads[k] /= n
    return grads


def multiclass_conf_loss(conf5, match: MatchResult, gt_states, negatives="hard",
                         neg_pos_ratio=3) -> float:
    """Confidence loss of the 5-way alternative (background + 4 states).

    Returns the summed softmax cross-entropy over positives and selected
    negatives, directly comparable to ``LossBreakdown.L_conf``.
    """
    z = np.asarray(conf5, dtype=np.float64).reshape(-1, 5)
    if len(z) != len(match.prior_gt):
        raise ValueError("one 5-way row per prior required")
    states = np.array([state_index(s) for s in gt_states], dtype=np.int64)
    logp = _log_softmax(z)
    positive = match.prior_gt >= 0
    pos = np.nonzero(positive)[0]
    labels = 1 + states[match.prior_gt[pos]]
    neg = select_negatives(-logp[:, 0], positive, negatives, neg_pos_ratio)
    return float(-logp[pos, labels].sum() - logp[neg, 0].sum())


def foreground_probability(conf5) -> np.ndarray:
    """Object probability under the 5-way head: 1 - P(background)."""
    z = np.asarray(conf5, dtype=np.float64).reshape(-1, 5)
    return 1.0 - np.exp(_log_softmax(z)[:, 0])
