"""Two-phase training.

Phase 1 trains the evidential model from scratch with stochastic feature
augmentation. Phase 2 starts from the best Phase-1 weights and, every
epoch, recomputes per-sample uncertainties to drive the optional
strategies: separate selectors (SP), uncertainty-guided reweighting (RW)
and most-uncertain-variant augmentation (AG).
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .checkpoint import save_checkpoint
from .metrics import auc, evaluate
from .model import (
    ModelConfig,
    collate,
    infer,
    init_params,
    loss_and_grad,
    selector_param_slices,
)
from .nn import AdamState, ParamStore, Rng, adam_step
from .scenesim import perturb, random_perturbation, split_samples

__all__ = [
    "TrainConfig",
    "Strategies",
    "TrainingError",
    "UncertaintyReport",
    "ThresholdChoice",
    "SampleWeightTable",
    "PhaseState",
    "TrainResult",
    "THRESHOLD_CRITERIA",
    "learning_rate",
    "compute_uncertainties",
    "select_threshold",
    "reweight",
    "augment_most_uncertain",
    "most_uncertain_variants",
    "tie_selector_grads",
    "share_selectors",
    "augment_conventional",
    "train_phase1",
    "train_phase2",
]

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


def _default_quantiles():
    return tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass
class TrainConfig:
    batch_size: int = 4
    max_epochs: int = 50
    patience: int = 8
    phase1_lr: float = 1e-3
    phase1_weight_decay: float = 1e-4
    phase1_lr_period: int = 10
    phase2_lr: float = 1e-5
    phase2_weight_decay: float = 1e-6
    phase2_lr_period: int = 5
    lr_factor: float = 0.5
    augment_probability: float = 0.5
    augment_families: tuple = ("brightness", "contrast", "channel_scale", "noise")
    # keep the Phase-1 stochastic augmentation running during Phase 2
    phase2_conventional_augmentation: bool = True
    candidates: int = 8
    down_weight: float = 0.5
    tau_d_quantile: float = 0.95
    threshold_quantiles: tuple = field(default_factory=_default_quantiles)
    threshold_criterion: str = "balanced_accuracy"
    fallback_quantile: float = 0.9
    # ramp the model's kl_weight linearly over this many epochs (0 = full weight at once)
    kl_anneal_epochs: int = 0
    zero_init_heads: bool = False
    eval_chunk: int = 256
    seed: int = 7

    def __post_init__(self):
        self.augment_families = tuple(self.augment_families)
        self.threshold_quantiles = tuple(self.threshold_quantiles)
        if min(self.phase1_lr, self.phase2_lr) <= 0 or not 0 < self.lr_factor <= 1:
            raise ValueError("learning rates must be positive and lr_factor in (0, 1]")
        if self.patience < 1 or self.candidates < 1 or self.batch_size < 1:
            raise ValueError("patience, candidates and batch_size must be >= 1")
        if not 0 < self.down_weight <= 1:
            raise ValueError("down_weight must lie in (0, 1]")
        if self.max_epochs < 0 or self.kl_anneal_epochs < 0:
            raise ValueError("max_epochs and kl_anneal_epochs must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augment_families"] = list(self.augment_families)
        d["threshold_quantiles"] = list(self.threshold_quantiles)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Strategies:
    sp: bool = False
    rw: bool = False
    ag: bool = False

    @classmethod
    def parse(cls, text: str | None) -> "Strategies":
        names = {t.strip().lower() for t in (text or "").split(",") if t.strip()}
        unknown = names - {"sp", "rw", "ag"}
        if unknown:
            raise ValueError(f"unknown strategies: {sorted(unknown)}")
        return cls("sp" in names, "rw" in names, "ag" in names)

    def label(self) -> str:
        return "+".join(n.upper() for n in ("sp", "ag", "rw") if getattr(self, n)) or "none"


def learning_rate(epoch: int, base: float, period: int, factor: float = 0.5) -> float:
    """Step schedule: base * factor ** floor((epoch - 1) / period), epochs 1-based."""
    return base * factor ** ((epoch - 1) // period)


@dataclass
class UncertaintyReport:
    ids: np.ndarray
    head_uncertainty: np.ndarray   # (N, A + K) model uncertainty K/S per head
    head_entropy: np.ndarray       # (N, A + K) entropy (bits) of the expected probability
    head_correct: np.ndarray       # (N, A + K)
    n_actions: int

    @property
    def u_bar(self) -> np.ndarray:
        return self.head_uncertainty[:, : self.n_actions].mean(axis=1)

    @property
    def h_bar(self) -> np.ndarray:
        return self.head_entropy[:, : self.n_actions].mean(axis=1)

    @property
    def correct(self) -> np.ndarray:
        # a scene counts as correct when all action bits are right
        return self.head_correct[:, : self.n_actions].all(axis=1)

    def __len__(self) -> int:
        return self.ids.shape[0]


def compute_uncertainties(params: ParamStore, samples, config: ModelConfig,
                          chunk_size: int = 256) -> UncertaintyReport:
    out = infer(params, samples, config, chunk_size)
    t = config.decision_threshold
    pred = np.concatenate([out.actions.probability[..., 0] >= t,
                           out.explanations.probability[..., 0] >= t], axis=1)
    truth = np.stack([np.concatenate([s.actions, s.explanations]) for s in samples]).astype(bool)
    return UncertaintyReport(
        ids=np.array([s.id for s in samples]),
        head_uncertainty=np.concatenate([out.actions.uncertainty, out.explanations.uncertainty], axis=1),
        head_entropy=np.concatenate([out.actions.entropy, out.explanations.entropy], axis=1),
        head_correct=pred == truth,
        n_actions=config.n_actions,
    )


def _balanced_accuracy(u, errors, tau) -> float:
    flagged = u > tau
    tpr = np.mean(flagged[errors]) if errors.any() else 0.0
    tnr = np.mean(~flagged[~errors]) if (~errors).any() else 0.0
    return float(0.5 * (tpr + tnr))


def _youden(u, errors, tau) -> float:
    return 2.0 * _balanced_accuracy(u, errors, tau) - 1.0


# criterion(u_bar, error_flags, tau) -> score to maximise
THRESHOLD_CRITERIA: dict[str, Callable] = {
    "balanced_accuracy": _balanced_accuracy,
    "youden": _youden,
}


@dataclass
class ThresholdChoice:
    tau: float
    quantile: float
    auc: float
    fallback: bool
    candidates: list = field(default_factory=list)  # (quantile, tau, score)


def select_threshold(report_or_u, errors=None, quantiles=None, criterion="balanced_accuracy",
                     fallback_quantile: float = 0.9) -> ThresholdChoice:
    """Pick the model-uncertainty threshold on validation data.

    Accepts an :class:`UncertaintyReport` or raw (u_bar, error_flags).
    Candidates are quantiles of u_bar; the best-scoring one wins, ties going
    to the lower quantile. The AUC of u_bar as an error ranker is returned as
    a diagnostic.
    """
    if isinstance(report_or_u, UncertaintyReport):
        u, err = report_or_u.u_bar, ~report_or_u.correct
    else:
        u, err = np.asarray(report_or_u, dtype=np.float64), np.asarray(errors).astype(bool)
    quantiles = tuple(quantiles or _default_quantiles())
    score_fn = THRESHOLD_CRITERIA[criterion]
    n_err = int(err.sum())
    degenerate = n_err < 2 or err.size - n_err < 2
    flat = u.size == 0 or float(u.max()) == float(u.min())
    # the AUC stays defined with a single error; only the threshold search needs two
    detector_auc = 0.5 if (flat or n_err == 0 or n_err == err.size) else auc(u, err)
    if degenerate or flat:
        warnings.warn("validation errors are degenerate or uncertainty is constant; "
                      f"falling back to the {fallback_quantile} quantile", RuntimeWarning,
                      stacklevel=2)
        tau = float(np.quantile(u, fallback_quantile)) if u.size else 1.0
        return ThresholdChoice(tau, fallback_quantile, detector_auc, True)
    best = None
    table = []
    for q in quantiles:
        tau = float(np.quantile(u, q))
        score = score_fn(u, err, tau)
        table.append((q, tau, score))
        if best is None or score > best[2]:
            best = (q, tau, score)
    return ThresholdChoice(best[1], best[0], detector_auc, False, table)


@dataclass
class SampleWeightTable:
    ids: np.ndarray
    raw: np.ndarray       # before normalisation
    weights: np.ndarray   # mean 1 over the table

    def __getitem__(self, sample_id) -> float:
        idx = np.flatnonzero(self.ids == sample_id)
        if idx.size == 0:
            raise KeyError(sample_id)
        return float(self.weights[idx[0]])

    def as_dict(self) -> dict:
        return {int(i): float(w) for i, w in zip(self.ids, self.weights)}

    def stats(self) -> dict:
        return {"weight_mean": float(self.weights.mean()), "weight_min": float(self.weights.min()),
                "weight_max": float(self.weights.max())}


def reweight(report_or_u, tau_m: float, tau_d: float, rho: float = 0.5,
             correct=None, h_bar=None, ids=None) -> SampleWeightTable:
    """Up-weight wrong or confidently-uncertain scenes, down-weight noisy ones.

    w = 1; w *= (1 + u_bar) if the scene is wrong, or right with
    u_bar > tau_m; w *= rho if h_bar > tau_d; then normalise to mean 1.
    """
    if isinstance(report_or_u, UncertaintyReport):
        u, ok, h, ids = report_or_u.u_bar, report_or_u.correct, report_or_u.h_bar, report_or_u.ids
    else:
        u = np.asarray(report_or_u, dtype=np.float64)
        ok, h = np.asarray(correct).astype(bool), np.asarray(h_bar, dtype=np.float64)
        ids = np.arange(u.size) if ids is None else np.asarray(ids)
    raw = np.ones_like(u)
    up = ~ok | (ok & (u > tau_m))
    raw[up] *= 1.0 + u[up]
    raw[h > tau_d] *= rho
    return SampleWeightTable(ids, raw, raw / raw.mean())


def _candidate_specs(rng: np.random.Generator, families, m: int, seed: int, stream: tuple):
    specs = []
    for j in range(m):
        fam = families[int(rng.integers(len(families)))]
        specs.append(random_perturbation(fam, rng, seed, (*stream, j)))
    return specs


@dataclass
class MostUncertain:
    original: object
    variant: object
    index: int
    candidate_uncertainty: np.ndarray


def most_uncertain_variants(params, samples, config: ModelConfig, m: int, rng: np.random.Generator,
                            families=("brightness", "contrast", "channel_scale", "noise"),
                            seed: int = 0, stream: tuple = (), chunk_size: int = 256):
    """For each sample draw ``m`` perturbations and keep the one with the highest u_bar."""
    families = tuple(families)
    candidates = []
    for i, s in enumerate(samples):
        for spec in _candidate_specs(rng, families, m, seed, (*stream, int(s.id))):
            candidates.append(perturb(s, spec))
    if not candidates:
        return []
    out = infer(params, candidates, config, chunk_size)
    u = out.actions.uncertainty.mean(axis=1).reshape(len(samples), m)
    results = []
    for i, s in enumerate(samples):
        k = int(np.argmax(u[i]))  # first maximum wins ties
        results.append(MostUncertain(s, candidates[i * m + k], k, u[i]))
    return results


def augment_most_uncertain(params, sample, config: ModelConfig, m: int, rng: np.random.Generator,
                           families=("brightness", "contrast", "channel_scale", "noise"),
                           seed: int = 0, stream: tuple = ()) -> MostUncertain:
    return most_uncertain_variants(params, [sample], config, m, rng, families, seed, stream)[0]


def tie_selector_grads(params: ParamStore, config: ModelConfig) -> None:
    """Replace every action's selector gradient by the mean over actions."""
    slices = [selector_param_slices(config, a) for a in range(config.n_actions)]
    for name in slices[0]:
        g = params.grad(name)
        mean = sum(g[sl[name]] for sl in slices) / config.n_actions
        for sl in slices:
            g[sl[name]] = mean


def share_selectors(params: ParamStore, config: ModelConfig) -> None:
    """Set every action's selector to the mean selector, in place."""
    slices = [selector_param_slices(config, a) for a in range(config.n_actions)]
    for name in slices[0]:
        p = params[name]
        mean = sum(p[sl[name]] for sl in slices) / config.n_actions
        for sl in slices:
            p[sl[name]] = mean


def augment_conventional(sample, rng: np.random.Generator, families, probability: float,
                         seed: int, stream: tuple):
    """Apply each family independently with the given probability."""
    for fam in families:
        if rng.random() < probability:
            sample = perturb(sample, random_perturbation(fam, rng, seed, stream))
    return sample


@dataclass
class PhaseState:
    epoch: int = 0
    best_score: float = -math.inf
    best_epoch: int = 0
    epochs_since_improvement: int = 0
    lr: float = 0.0
    checkpoint_path: str | None = None


@dataclass
class TrainResult:
    params: ParamStore
    log: list
    state: PhaseState


def _split(dataset, samples_val=None):
    if samples_val is not None:
        return list(dataset), list(samples_val)
    return split_samples(dataset, "train"), split_samples(dataset, "val")


def _write_log(path, records) -> None:
    if path is None:
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _run_phase(params: ParamStore, train, val, mcfg: ModelConfig, tcfg: TrainConfig, phase: int,
               strategies: Strategies, out_dir=None, provenance=None) -> TrainResult:
    rng = Rng(tcfg.seed)
    if phase == 1:
        base_lr, wd, period = tcfg.phase1_lr, tcfg.phase1_weight_decay, tcfg.phase1_lr_period
        conventional = True
    else:
        base_lr, wd, period = tcfg.phase2_lr, tcfg.phase2_weight_decay, tcfg.phase2_lr_period
        conventional = tcfg.phase2_conventional_augmentation
    adam = AdamState(lr=base_lr, weight_decay=wd)
    state = PhaseState()
    records = []
    best = params.copy()
    ckpt_path = None if out_dir is None else Path(out_dir) / f"phase{phase}_best.ckpt"
    prov = dict(provenance or {})
    prov.update({"phase": phase, "strategies": strategies.label(), "seed": tcfg.seed})

    def save_best():
        if ckpt_path is not None:
            save_checkpoint(ckpt_path, best, mcfg, {**prov, "epoch": state.best_epoch,
                                                    "val_macro_f1": state.best_score})
            state.checkpoint_path = str(ckpt_path)

    if phase == 2:
        # the starting point competes as epoch 0
        rep = evaluate(params, val, mcfg, tcfg.eval_chunk)
        state.best_score, state.best_epoch = rep.macro_f1, 0
        records.append({"phase": phase, "epoch": 0, "lr": None, "train_loss": None,
                        "val_macro_f1": rep.macro_f1, "val_micro_f1": rep.action_micro.f1,
                        "val_auc": rep.error_auc, "improved": True})
        save_best()

    for epoch in range(1, tcfg.max_epochs + 1):
        state.epoch = epoch
        if phase == 2 and epoch == 1 and not strategies.sp:
            # SP off: one selector shared by all actions; tied gradients keep it shared
            share_selectors(params, mcfg)
        adam.lr = state.lr = learning_rate(epoch, base_lr, period, tcfg.lr_factor)
        step_cfg = mcfg
        if mcfg.kl_weight and tcfg.kl_anneal_epochs:
            ramp = min(1.0, epoch / tcfg.kl_anneal_epochs)
            step_cfg = replace(mcfg, kl_weight=mcfg.kl_weight * ramp)
        weights = np.ones(len(train))
        items = list(range(len(train)))
        extra = []
        rec = {"phase": phase, "epoch": epoch, "lr": adam.lr}

        if phase == 2:
            report = compute_uncertainties(params, train, mcfg, tcfg.eval_chunk)
            val_report = compute_uncertainties(params, val, mcfg, tcfg.eval_chunk)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                choice = select_threshold(val_report, quantiles=tcfg.threshold_quantiles,
                                          criterion=tcfg.threshold_criterion,
                                          fallback_quantile=tcfg.fallback_quantile)
            tau_d = float(np.quantile(report.h_bar, tcfg.tau_d_quantile))
            rec.update({"tau_m": choice.tau, "tau_m_quantile": choice.quantile,
                        "threshold_auc": choice.auc, "threshold_fallback": choice.fallback,
                        "tau_d": tau_d, "train_mean_u": float(report.u_bar.mean()),
                        "train_error_rate": float(1.0 - report.correct.mean())})
            if strategies.rw:
                table = reweight(report, choice.tau, tau_d, tcfg.down_weight)
                weights = table.weights
                rec.update(table.stats())
                rec["n_upweighted"] = int(np.sum(~report.correct | (report.u_bar > choice.tau)))
                rec["n_downweighted"] = int(np.sum(report.h_bar > tau_d))
            if strategies.ag:
                flagged = np.flatnonzero(report.u_bar > choice.tau)
                variants = most_uncertain_variants(
                    params, [train[i] for i in flagged], mcfg, tcfg.candidates,
                    rng.stream("ag", epoch), tcfg.augment_families, tcfg.seed, ("ag", epoch),
                    tcfg.eval_chunk)
                extra = [(v.variant, weights[i]) for i, v in zip(flagged, variants)]
                rec["n_augmented"] = len(extra)

        pool = [(train[i], weights[i]) for i in items] + extra
        order = rng.stream("shuffle", phase, epoch).permutation(len(pool))
        aug_rng = rng.stream("augment", phase, epoch)
        total, count = 0.0, 0
        for start in range(0, len(order), tcfg.batch_size):
            chunk = [pool[j] for j in order[start:start + tcfg.batch_size]]
            batch_samples = []
            for pos, (s, _) in enumerate(chunk):
                if conventional:
                    s = augment_conventional(s, aug_rng, tcfg.augment_families,
                                             tcfg.augment_probability, tcfg.seed,
                                             (phase, epoch, start + pos))
                batch_samples.append(s)
            w = np.array([wt for _, wt in chunk]) / len(chunk)
            try:
                loss, _ = loss_and_grad(params, collate(batch_samples, mcfg), step_cfg, w)
            except FloatingPointError as exc:
                raise TrainingError(f"phase {phase} epoch {epoch} batch {start // tcfg.batch_size}: "
                                    f"{exc}") from None
            if not math.isfinite(loss):
                raise TrainingError(f"phase {phase} epoch {epoch} batch "
                                    f"{start // tcfg.batch_size}: non-finite loss")
            if phase == 2 and not strategies.sp:
                tie_selector_grads(params, mcfg)
            adam_step(params, adam)
            total += loss * len(chunk)
            count += len(chunk)

        rep = evaluate(params, val, mcfg, tcfg.eval_chunk)
        score = rep.macro_f1
        improved = score > state.best_score
        if improved:
            state.best_score, state.best_epoch = score, epoch
            state.epochs_since_improvement = 0
            best = params.copy()
            save_best()
        else:
            state.epochs_since_improvement += 1
        rec.update({"train_loss": total / max(count, 1), "val_macro_f1": score,
                    "val_micro_f1": rep.action_micro.f1, "val_auc": rep.error_auc,
                    "best_macro_f1": state.best_score, "improved": improved})
        records.append(rec)
        log.info("phase %d epoch %d lr %.2e loss %.4f val macro-F1 %.4f%s", phase, epoch, adam.lr,
                 rec["train_loss"], score, " *" if improved else "")
        if state.epochs_since_improvement >= tcfg.patience:
            break

    best.zero_grad()
    return TrainResult(best, records, state)


def train_phase1(dataset, model_config: ModelConfig, train_config: TrainConfig,
                 params: ParamStore | None = None, val=None, out_dir=None,
                 log_path=None) -> TrainResult:
    """Conventional evidential training from scratch (or from ``params``)."""
    train, val = _split(dataset, val)
    if not train or not val:
        raise TrainingError("phase 1 needs non-empty train and val splits")
    if params is None:
        params = init_params(model_config, Rng(train_config.seed), train_config.zero_init_heads)
    else:
        params = params.copy()
    result = _run_phase(params, train, val, model_config, train_config, 1, Strategies(),
                        out_dir)
    _write_log(log_path, result.log)
    return result


def train_phase2(params: ParamStore, dataset, model_config: ModelConfig, train_config: TrainConfig,
                 strategies: Strategies = Strategies(), val=None, out_dir=None,
                 log_path=None) -> TrainResult:
    """Uncertainty-guided fine-tuning starting from the best Phase-1 weights."""
    train, val = _split(dataset, val)
    if not train or not val:
        raise TrainingError("phase 2 needs non-empty train and val splits")
    result = _run_phase(params.copy(), train, val, model_config, train_config, 2, strategies,
                        out_dir)
    _write_log(log_path, result.log)
    return result
