"""Object-induced evidential network over region feature vectors.

Pipeline per scene:

1. every region goes through a shared ReLU encoder;
2. the global vector is projected to the encoder width and appended to the
   region set as one extra slot;
3. each action owns a selector (one hidden ReLU layer and a linear score)
   whose softmax over the slots gives that action's context vector;
4. action head ``a`` reads ``[context_a | projected global]``;
5. every explanation head reads the four action contexts concatenated.

Heads are two-layer MLPs whose two outputs pass through softplus to give
(present, absent) evidence; alpha = evidence + 1.

Stacked parameters keep one leading axis per action or explanation. The
selector hidden layer is a single ``(E, A * H_sel)`` matrix whose column
block ``a * H_sel:(a + 1) * H_sel`` belongs to action ``a``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import evidential as ev
from .nn import ParamStore, Rng, ShapeError, relu, sigmoid, softmax, softplus

__all__ = [
    "ModelConfig",
    "EvidentialOutput",
    "ScenePrediction",
    "Batch",
    "ForwardCache",
    "param_specs",
    "init_params",
    "collate",
    "forward",
    "forward_batch",
    "total_loss",
    "batch_losses",
    "backward",
    "loss_and_grad",
    "predict_labels",
    "onehot",
    "selector_param_slices",
    "Inference",
    "infer",
]


@dataclass(frozen=True)
class ModelConfig:
    region_feature_dim: int = 16
    encoder_hidden_dims: tuple = (32, 32)
    selector_hidden_dim: int = 16
    head_hidden_dim: int = 32
    n_actions: int = 4
    n_explanations: int = 21
    decision_threshold: float = 0.5
    explanation_loss_weight: float = 1.0
    kl_weight: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "encoder_hidden_dims", tuple(int(d) for d in self.encoder_hidden_dims))
        dims = (self.region_feature_dim, self.selector_hidden_dim, self.head_hidden_dim,
                self.n_actions, self.n_explanations, *self.encoder_hidden_dims)
        if not self.encoder_hidden_dims or min(dims) < 1:
            raise ValueError("all model dimensions must be >= 1")
        if not 0.0 < self.decision_threshold < 1.0:
            raise ValueError("decision_threshold must lie in (0, 1)")
        if self.explanation_loss_weight < 0 or self.kl_weight < 0:
            raise ValueError("loss weights must be >= 0")

    @property
    def global_dim(self) -> int:
        return 2 * self.region_feature_dim

    @property
    def encoded_dim(self) -> int:
        return self.encoder_hidden_dims[-1]

    def to_dict(self) -> dict:
        return {
            "region_feature_dim": self.region_feature_dim,
            "encoder_hidden_dims": list(self.encoder_hidden_dims),
            "selector_hidden_dim": self.selector_hidden_dim,
            "head_hidden_dim": self.head_hidden_dim,
            "n_actions": self.n_actions,
            "n_explanations": self.n_explanations,
            "decision_threshold": self.decision_threshold,
            "explanation_loss_weight": self.explanation_loss_weight,
            "kl_weight": self.kl_weight,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class EvidentialOutput:
    """Evidence for (present, absent) with every derived quantity.

    Arrays carry the head axis (and batch axis if any) before the final
    class axis of length 2; the scalar-per-head fields drop that axis.
    """

    evidence: np.ndarray
    alpha: np.ndarray
    belief: np.ndarray
    uncertainty: np.ndarray
    probability: np.ndarray
    entropy: np.ndarray

    @classmethod
    def from_evidence(cls, evidence: np.ndarray) -> "EvidentialOutput":
        alpha = evidence + 1.0
        strength = alpha.sum(axis=-1, keepdims=True)
        prob = alpha / strength
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = -np.sum(np.where(prob > 0, prob * np.log2(prob), 0.0), axis=-1)
        return cls(
            evidence=evidence,
            alpha=alpha,
            belief=evidence / strength,
            uncertainty=alpha.shape[-1] / strength[..., 0],
            probability=prob,
            entropy=ent,
        )

    def __getitem__(self, idx) -> "EvidentialOutput":
        return EvidentialOutput(self.evidence[idx], self.alpha[idx], self.belief[idx],
                                self.uncertainty[idx], self.probability[idx], self.entropy[idx])


@dataclass
class ScenePrediction:
    actions: EvidentialOutput
    explanations: EvidentialOutput
    # (n_actions, n_regions + 1); the last column is the global slot
    selector_weights: np.ndarray
    contexts: np.ndarray


@dataclass
class Batch:
    regions: np.ndarray          # (B, R, D), zero padded
    mask: np.ndarray             # (B, R) True for real regions
    global_features: np.ndarray  # (B, 2D)
    actions: np.ndarray          # (B, A) label bits
    explanations: np.ndarray     # (B, K)
    n_regions: np.ndarray        # (B,)

    def __len__(self) -> int:
        return self.regions.shape[0]


def collate(samples, config: ModelConfig) -> Batch:
    d = config.region_feature_dim
    counts = np.array([s.regions.shape[0] for s in samples])
    if counts.min() < 1:
        raise ShapeError("every sample needs at least one region")
    r = int(counts.max())
    regions = np.zeros((len(samples), r, d))
    mask = np.zeros((len(samples), r), dtype=bool)
    for i, s in enumerate(samples):
        if s.regions.shape[1] != d or s.global_features.shape != (2 * d,):
            raise ShapeError(
                f"sample {s.id}: feature dims {s.regions.shape[1]}/{s.global_features.shape}, "
                f"model expects {d}/{2 * d}"
            )
        regions[i, : counts[i]] = s.regions
        mask[i, : counts[i]] = True
    return Batch(
        regions=regions,
        mask=mask,
        global_features=np.stack([s.global_features for s in samples]),
        actions=np.stack([s.actions for s in samples]).astype(np.float64),
        explanations=np.stack([s.explanations for s in samples]).astype(np.float64),
        n_regions=counts,
    )


def param_specs(config: ModelConfig) -> list[tuple[str, tuple]]:
    d, e = config.region_feature_dim, config.encoded_dim
    a, k = config.n_actions, config.n_explanations
    hs, hh = config.selector_hidden_dim, config.head_hidden_dim
    specs = []
    fan = d
    for i, width in enumerate(config.encoder_hidden_dims):
        specs += [(f"encoder.{i}.weight", (fan, width)), (f"encoder.{i}.bias", (width,))]
        fan = width
    specs += [
        ("global.weight", (config.global_dim, e)),
        ("global.bias", (e,)),
        ("selector.hidden.weight", (e, a * hs)),
        ("selector.hidden.bias", (a * hs,)),
        ("selector.score.weight", (a, hs)),
        ("action_head.hidden.weight", (a, 2 * e, hh)),
        ("action_head.hidden.bias", (a, hh)),
        ("action_head.out.weight", (a, hh, 2)),
        ("action_head.out.bias", (a, 2)),
        ("explanation_head.hidden.weight", (a * e, k * hh)),
        ("explanation_head.hidden.bias", (k * hh,)),
        ("explanation_head.out.weight", (k, hh, 2)),
        ("explanation_head.out.bias", (k, 2)),
    ]
    return specs


_FAN_IN = {
    "selector.hidden.weight": 0,
    "selector.score.weight": 1,
    "action_head.hidden.weight": 1,
    "action_head.out.weight": 1,
    "explanation_head.hidden.weight": 0,
    "explanation_head.out.weight": 1,
}


def init_params(config: ModelConfig, rng: Rng, zero_heads: bool = False) -> ParamStore:
    """He-scaled Gaussian weights and zero biases, one named stream per tensor.

    ``zero_heads`` zeroes the output layer of every head, so an untrained
    model emits evidence softplus(0) = ln 2 everywhere.
    """
    params = ParamStore(param_specs(config))
    for name, shape in params.specs():
        if not name.endswith(".weight"):
            continue
        if zero_heads and name.endswith("head.out.weight"):
            continue
        fan_in = shape[_FAN_IN.get(name, 0)]
        params[name] = rng.stream("init", name).normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return params


def selector_param_slices(config: ModelConfig, action: int) -> dict[str, tuple]:
    """Index expressions selecting one action's selector parameters."""
    hs = config.selector_hidden_dim
    cols = slice(action * hs, (action + 1) * hs)
    return {
        "selector.hidden.weight": (slice(None), cols),
        "selector.hidden.bias": (cols,),
        "selector.score.weight": (action,),
    }


@dataclass
class ForwardCache:
    batch: Batch
    enc_inputs: list
    enc_pre: list
    g_pre: np.ndarray
    gp: np.ndarray
    slots: np.ndarray
    sel_pre: np.ndarray
    sel_hidden: np.ndarray
    weights: np.ndarray      # (B, S, A)
    contexts: np.ndarray     # (B, A, E)
    act_in: np.ndarray       # (A, B, 2E)
    act_pre: np.ndarray      # (A, B, Hh)
    act_out: np.ndarray      # (A, B, 2)
    exp_in: np.ndarray       # (B, A*E)
    exp_pre: np.ndarray      # (K, B, Hh)
    exp_out: np.ndarray      # (K, B, 2)
    actions: EvidentialOutput       # leading shape (B, A)
    explanations: EvidentialOutput  # leading shape (B, K)

    def prediction(self, i: int) -> ScenePrediction:
        n = int(self.batch.n_regions[i])
        w = self.weights[i].T  # (A, S)
        w = np.concatenate([w[:, :n], w[:, -1:]], axis=1)
        return ScenePrediction(self.actions[i], self.explanations[i], w, self.contexts[i])


def forward_batch(params: ParamStore, batch: Batch, config: ModelConfig) -> ForwardCache:
    b, r, d = batch.regions.shape
    a, k, e = config.n_actions, config.n_explanations, config.encoded_dim
    hs, hh = config.selector_hidden_dim, config.head_hidden_dim
    if d != config.region_feature_dim:
        raise ShapeError(f"region dim {d} does not match model ({config.region_feature_dim})")

    h = batch.regions.reshape(b * r, d)
    enc_inputs, enc_pre = [], []
    for i in range(len(config.encoder_hidden_dims)):
        enc_inputs.append(h)
        pre = h @ params[f"encoder.{i}.weight"] + params[f"encoder.{i}.bias"]
        enc_pre.append(pre)
        h = relu(pre)

    g_pre = batch.global_features @ params["global.weight"] + params["global.bias"]
    gp = relu(g_pre)
    slots = np.concatenate([h.reshape(b, r, e), gp[:, None, :]], axis=1)
    s = r + 1
    slot_mask = np.concatenate([batch.mask, np.ones((b, 1), dtype=bool)], axis=1)

    sel_pre = slots.reshape(b * s, e) @ params["selector.hidden.weight"] + params["selector.hidden.bias"]
    sel_hidden = relu(sel_pre).reshape(b, s, a, hs)
    scores = (sel_hidden * params["selector.score.weight"]).sum(axis=-1)
    weights = softmax(scores, axis=1, mask=slot_mask[:, :, None])
    contexts = weights.transpose(0, 2, 1) @ slots  # (B, A, E)

    act_in = np.concatenate([contexts, np.broadcast_to(gp[:, None, :], (b, a, e))], axis=2)
    act_in = np.ascontiguousarray(act_in.transpose(1, 0, 2))
    act_pre = act_in @ params["action_head.hidden.weight"] + params["action_head.hidden.bias"][:, None, :]
    act_out = relu(act_pre) @ params["action_head.out.weight"] + params["action_head.out.bias"][:, None, :]

    exp_in = contexts.reshape(b, a * e)
    exp_pre = exp_in @ params["explanation_head.hidden.weight"] + params["explanation_head.hidden.bias"]
    exp_pre = np.ascontiguousarray(exp_pre.reshape(b, k, hh).transpose(1, 0, 2))
    exp_out = relu(exp_pre) @ params["explanation_head.out.weight"] + params["explanation_head.out.bias"][:, None, :]

    act_ev = softplus(act_out).transpose(1, 0, 2)
    exp_ev = softplus(exp_out).transpose(1, 0, 2)
    if not (np.all(np.isfinite(act_ev)) and np.all(np.isfinite(exp_ev))):
        raise FloatingPointError("non-finite evidence in forward pass")
    return ForwardCache(
        batch, enc_inputs, enc_pre, g_pre, gp, slots, sel_pre, sel_hidden, weights,
        contexts, act_in, act_pre, act_out, exp_in, exp_pre, exp_out,
        EvidentialOutput.from_evidence(act_ev), EvidentialOutput.from_evidence(exp_ev),
    )


def forward(params: ParamStore, sample, config: ModelConfig) -> ScenePrediction:
    return forward_batch(params, collate([sample], config), config).prediction(0)


def onehot(bits) -> np.ndarray:
    """Label bit y -> (y, 1 - y): index 0 is present, index 1 absent."""
    y = np.asarray(bits, dtype=np.float64)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("label bits must be 0 or 1")
    return np.stack([y, 1.0 - y], axis=-1)


def _misleading(alpha: np.ndarray, target: np.ndarray) -> np.ndarray:
    # target-class evidence removed before the KL penalty
    return target + (1.0 - target) * alpha


def _head_weights(config: ModelConfig) -> np.ndarray:
    return np.concatenate([np.ones(config.n_actions),
                           np.full(config.n_explanations, config.explanation_loss_weight)])


def batch_losses(actions: EvidentialOutput, explanations: EvidentialOutput,
                 action_bits, explanation_bits, config: ModelConfig) -> np.ndarray:
    """Unweighted per-sample loss for a batch (or a single scene)."""
    # all 25 heads in one array: actions first, then explanations
    alpha = np.concatenate([actions.alpha, explanations.alpha], axis=-2)
    target = onehot(np.concatenate([np.asarray(action_bits), np.asarray(explanation_bits)], axis=-1))
    loss = (ev.edl_loss(alpha, target) * _head_weights(config)).sum(axis=-1)
    if config.kl_weight:
        loss = loss + config.kl_weight * ev.kl_to_uniform(_misleading(alpha, target)).sum(axis=-1)
    return loss


def total_loss(prediction: ScenePrediction, sample, config: ModelConfig,
               sample_weight: float = 1.0) -> float:
    loss = batch_losses(prediction.actions, prediction.explanations,
                        sample.actions, sample.explanations, config)
    return float(sample_weight * loss)


def _dalpha(alpha, target, head_weights, kl_weight):
    grad = head_weights[:, None] * ev.edl_loss_grad(alpha, target)
    if kl_weight:
        grad = grad + kl_weight * (1.0 - target) * ev.kl_to_uniform_grad(_misleading(alpha, target))
    return grad


def backward(params: ParamStore, cache: ForwardCache, config: ModelConfig, sample_weights) -> None:
    """Accumulate d(sum_b w_b * loss_b)/d(params) into ``params.grads``."""
    batch = cache.batch
    b, r, _ = batch.regions.shape
    a, k, e = config.n_actions, config.n_explanations, config.encoded_dim
    hs, hh = config.selector_hidden_dim, config.head_hidden_dim
    w = np.broadcast_to(np.asarray(sample_weights, dtype=np.float64), (b,))
    alpha = np.concatenate([cache.actions.alpha, cache.explanations.alpha], axis=1)
    target = onehot(np.concatenate([batch.actions, batch.explanations], axis=1))
    dalpha = _dalpha(alpha, target, _head_weights(config), config.kl_weight) * w[:, None, None]
    da, de = dalpha[:, :a], dalpha[:, a:]
    d_act_out = da.transpose(1, 0, 2) * sigmoid(cache.act_out)  # (A, B, 2)
    d_exp_out = de.transpose(1, 0, 2) * sigmoid(cache.exp_out)  # (K, B, 2)

    # action heads
    act_hidden = relu(cache.act_pre)
    params.grad("action_head.out.weight")[...] += act_hidden.transpose(0, 2, 1) @ d_act_out
    params.grad("action_head.out.bias")[...] += d_act_out.sum(axis=1)
    d_pre = (d_act_out @ params["action_head.out.weight"].transpose(0, 2, 1)) * (cache.act_pre > 0)
    params.grad("action_head.hidden.weight")[...] += cache.act_in.transpose(0, 2, 1) @ d_pre
    params.grad("action_head.hidden.bias")[...] += d_pre.sum(axis=1)
    d_act_in = d_pre @ params["action_head.hidden.weight"].transpose(0, 2, 1)  # (A, B, 2E)
    d_ctx = d_act_in[:, :, :e].transpose(1, 0, 2).copy()
    d_gp = d_act_in[:, :, e:].sum(axis=0)

    # explanation heads
    exp_hidden = relu(cache.exp_pre)
    params.grad("explanation_head.out.weight")[...] += exp_hidden.transpose(0, 2, 1) @ d_exp_out
    params.grad("explanation_head.out.bias")[...] += d_exp_out.sum(axis=1)
    d_xpre = (d_exp_out @ params["explanation_head.out.weight"].transpose(0, 2, 1)) * (cache.exp_pre > 0)
    d_xpre = d_xpre.transpose(1, 0, 2).reshape(b, k * hh)
    params.grad("explanation_head.hidden.weight")[...] += cache.exp_in.T @ d_xpre
    params.grad("explanation_head.hidden.bias")[...] += d_xpre.sum(axis=0)
    d_ctx += (d_xpre @ params["explanation_head.hidden.weight"].T).reshape(b, a, e)

    # selectors: contexts = weights^T @ slots
    d_weights = cache.slots @ d_ctx.transpose(0, 2, 1)  # (B, S, A)
    d_slots = cache.weights @ d_ctx                     # (B, S, E)
    wts = cache.weights
    d_scores = wts * (d_weights - (wts * d_weights).sum(axis=1, keepdims=True))
    params.grad("selector.score.weight")[...] += (cache.sel_hidden * d_scores[..., None]).sum(axis=(0, 1))
    d_sel = (d_scores[..., None] * params["selector.score.weight"]).reshape(b * (r + 1), a * hs)
    d_sel *= cache.sel_pre > 0
    flat_slots = cache.slots.reshape(b * (r + 1), e)
    params.grad("selector.hidden.weight")[...] += flat_slots.T @ d_sel
    params.grad("selector.hidden.bias")[...] += d_sel.sum(axis=0)
    d_slots += (d_sel @ params["selector.hidden.weight"].T).reshape(b, r + 1, e)

    # global projection
    d_gp += d_slots[:, r]
    d_gpre = d_gp * (cache.g_pre > 0)
    params.grad("global.weight")[...] += batch.global_features.T @ d_gpre
    params.grad("global.bias")[...] += d_gpre.sum(axis=0)

    # shared region encoder
    dh = d_slots[:, :r].reshape(b * r, e)
    for i in reversed(range(len(config.encoder_hidden_dims))):
        dpre = dh * (cache.enc_pre[i] > 0)
        params.grad(f"encoder.{i}.weight")[...] += cache.enc_inputs[i].T @ dpre
        params.grad(f"encoder.{i}.bias")[...] += dpre.sum(axis=0)
        if i:
            dh = dpre @ params[f"encoder.{i}.weight"].T

    if not np.all(np.isfinite(params.grads)):
        raise FloatingPointError("non-finite gradient in backward pass")


def loss_and_grad(params: ParamStore, batch: Batch, config: ModelConfig, sample_weights=1.0):
    """Forward, weighted loss sum and fresh gradients; returns (loss, cache)."""
    cache = forward_batch(params, batch, config)
    per_sample = batch_losses(cache.actions, cache.explanations,
                              batch.actions, batch.explanations, config)
    w = np.broadcast_to(np.asarray(sample_weights, dtype=np.float64), per_sample.shape)
    params.zero_grad()
    backward(params, cache, config, w)
    return float(np.sum(w * per_sample)), cache


def predict_labels(prediction, config: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Bit = 1 iff the expected probability of "present" reaches the threshold."""
    t = config.decision_threshold
    return (
        (prediction.actions.probability[..., 0] >= t).astype(np.int8),
        (prediction.explanations.probability[..., 0] >= t).astype(np.int8),
    )


@dataclass
class Inference:
    """Stacked predictions for a list of samples (leading axis = sample)."""

    actions: EvidentialOutput
    explanations: EvidentialOutput
    selector_weights: list  # per sample, (A, n_regions + 1)

    def __len__(self) -> int:
        return self.actions.alpha.shape[0]


def infer(params: ParamStore, samples, config: ModelConfig, chunk_size: int = 256) -> Inference:
    """Forward every sample in fixed-size chunks; no gradients."""
    act, exp, sel = [], [], []
    for start in range(0, len(samples), chunk_size):
        cache = forward_batch(params, collate(samples[start:start + chunk_size], config), config)
        act.append(cache.actions.evidence)
        exp.append(cache.explanations.evidence)
        for i in range(len(cache.batch)):
            n = int(cache.batch.n_regions[i])
            w = cache.weights[i].T
            sel.append(np.concatenate([w[:, :n], w[:, -1:]], axis=1))
    d = config.n_actions
    if not act:
        empty = EvidentialOutput.from_evidence(np.zeros((0, d, 2)))
        return Inference(empty, EvidentialOutput.from_evidence(np.zeros((0, config.n_explanations, 2))), [])
    return Inference(
        EvidentialOutput.from_evidence(np.concatenate(act)),
        EvidentialOutput.from_evidence(np.concatenate(exp)),
        sel,
    )
