"""Two-stage optimization: series-encoder pretraining, then full-model training."""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .corpus import EventScript
from .counterfactual import CounterfactualSet
from .errors import ConfigError, ContractError, DataError, NumericDomainError, TrainingError
from .market import AlignedSample
from .model import network as net
from .model.config import ModelConfig
from .model.losses import time_loss, total_loss, triplet_loss
from .model.tokenizer import encode_batch
from .numerics import ParameterSet, Tensor, backward, grad, no_grad

# component -> learning rate, seeded from the published table
DEFAULT_RATES = {
    "series-encoder": 1e-6,
    "text-encoder": 5e-7,
    "decoder": 1e-5,
    "embedding": 1e-5,
    "residual": 1e-5,
    "fusion": 5e-7,
    "output": 1e-5,
}

# parameter-name prefix -> component; the longest matching prefix wins
COMPONENT_PREFIXES = {
    net.SERIES_ENCODER: "series-encoder",
    net.TEXT_ENCODER: "text-encoder",
    net.TEXT_PROJ: "residual",
    net.RESIDUAL: "residual",
    net.FUSION: "fusion",
    net.FUSION_RESIZE: "fusion",
    net.DECODER: "decoder",
    net.DECODER_EMBED: "embedding",
    net.REGRESSOR: "output",
}

HISTORY_FIELDS = ("step", "epoch", "train_time", "train_causal", "train_total", "val_time")
BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


def component_of(name: str) -> str:
    best = max((p for p in COMPONENT_PREFIXES if name.startswith(p)), key=len, default=None)
    if best is None:
        raise ConfigError(f"parameter {name!r} belongs to no component")
    return COMPONENT_PREFIXES[best]


@dataclass
class TrainConfig:
    stage: str = "full"
    epochs: int = 10
    batch_size: int = 10
    learning_rates: dict = field(default_factory=lambda: dict(DEFAULT_RATES))
    lr_scale: float = 1.0
    patience: int = 3
    seed: int = 0
    mask_ratio: float = 0.3
    pretrain_lr: float = 1e-3
    clip_norm: float = 1.0
    time_weight: float = 1.0
    causal_weight: float = 1.0
    n_counterfactuals: int = 15  # identical-type first, then diverse-type
    max_steps: int | None = None
    shuffle: bool = True
    checkpoint_every: int = 0  # epochs; 0 disables
    schedule: str = "constant"  # or "cosine": decay to zero over the planned steps

    def __post_init__(self):
        if self.stage not in ("pretrain", "full"):
            raise ConfigError(f"stage must be 'pretrain' or 'full', got {self.stage!r}")
        if self.batch_size < 1:
            raise ConfigError("batch size must be at least 1")
        if self.epochs < 1 or self.patience < 1:
            raise ConfigError("epochs and patience must be positive")
        unknown = set(self.learning_rates) - set(DEFAULT_RATES)
        if unknown:
            raise ConfigError(f"unknown learning-rate components: {sorted(unknown)}")
        rates = {**DEFAULT_RATES, **self.learning_rates}
        if any(not r > 0 for r in rates.values()) or not self.lr_scale > 0 or not self.pretrain_lr > 0:
            raise ConfigError("learning rates must be positive")
        self.learning_rates = rates
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ConfigError("mask ratio must be in [0, 1)")
        if self.schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.n_counterfactuals < 0 or self.causal_weight < 0:
            raise ConfigError("counterfactual count and causal weight must be non-negative")

    @property
    def causal_enabled(self) -> bool:
        return self.causal_weight > 0 and self.n_counterfactuals > 0

    def rate_for(self, name: str) -> float:
        return self.learning_rates[component_of(name)] * self.lr_scale

    def planned_steps(self, n_train: int) -> int:
        per_epoch = math.ceil(n_train / self.batch_size)
        total = self.epochs * per_epoch
        return total if self.max_steps is None else min(total, self.max_steps)

    def schedule_factor(self, step: int, total: int) -> float:
        if self.schedule == "constant" or total <= 0:
            return 1.0
        return 0.5 * (1.0 + math.cos(math.pi * min(step, total) / total))

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# Training presets. The published rates were tuned for pretrained full-width
# encoders; at desk scale every component runs at one uniform rate instead.
TRAIN_PRESETS = {
    "paper": {},
    "desk": {"learning_rates": {k: 1.0 for k in DEFAULT_RATES}, "lr_scale": 1e-3},
}


def train_preset(name: str, **overrides) -> TrainConfig:
    if name not in TRAIN_PRESETS:
        raise ConfigError(f"unknown training preset {name!r}")
    return TrainConfig(**{**TRAIN_PRESETS[name], **overrides})


@dataclass(frozen=True)
class FreezePolicy:
    frozen: frozenset = frozenset()

    @classmethod
    def default(cls, config: ModelConfig) -> "FreezePolicy":
        """Series encoder, text encoder except its final block, decoder token embedding."""
        prefixes = {net.SERIES_ENCODER, net.TEXT_ENCODER + "tok_emb", net.TEXT_ENCODER + "pos_emb", net.DECODER_EMBED}
        prefixes |= {f"{net.TEXT_ENCODER}blocks.{i}." for i in range(config.text_layers - 1)}
        if not config.use_decoder:
            prefixes.discard(net.DECODER_EMBED)
        return cls(frozenset(prefixes))

    @classmethod
    def none(cls) -> "FreezePolicy":
        return cls(frozenset())

    def matches(self, name: str) -> bool:
        return any(name.startswith(p) for p in self.frozen)

    def validate(self, params: ParameterSet) -> None:
        names = params.names()
        dangling = [p for p in self.frozen if not any(n.startswith(p) for n in names)]
        if dangling:
            raise ConfigError(f"freeze prefixes match no parameter: {sorted(dangling)}")

    def apply(self, params: ParameterSet) -> list[str]:
        self.validate(params)
        return params.freeze(sorted(self.frozen))


class AdamState:
    """First/second moments and per-parameter step counts."""

    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for n in self.t:
            out[f"m/{n}"] = self.m[n]
            out[f"v/{n}"] = self.v[n]
            out[f"t/{n}"] = np.array(self.t[n])
        return out

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "AdamState":
        st = cls()
        for key, value in arrays.items():
            kind, name = key.split("/", 1)
            if kind == "t":
                st.t[name] = int(value)
            else:
                getattr(st, kind)[name] = np.array(value, dtype=np.float64)
        return st


def optimizer_step(
    grads: Mapping[str, np.ndarray],
    params: ParameterSet,
    rates: Callable[[str], float] | Mapping[str, float],
    freeze: FreezePolicy | None = None,
    state: AdamState | None = None,
) -> ParameterSet:
    """One Adam update in place; frozen or non-trainable parameters are skipped."""
    unknown = [n for n in grads if n not in params]
    if unknown:
        raise ContractError(f"gradients for unknown parameters: {unknown[:5]}")
    state = AdamState() if state is None else state
    rate = rates if callable(rates) else rates.__getitem__
    for name, g in grads.items():
        if not params.is_trainable(name) or (freeze is not None and freeze.matches(name)):
            continue
        p = params[name]
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ContractError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name, np.zeros_like(g))
        v = state.v.get(name, np.zeros_like(g))
        t = state.t.get(name, 0) + 1
        m = BETA1 * m + (1 - BETA1) * g
        v = BETA2 * v + (1 - BETA2) * g * g
        m_hat = m / (1 - BETA1 ** t)
        v_hat = v / (1 - BETA2 ** t)
        p.data = p.data - rate(name) * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        state.m[name], state.v[name], state.t[name] = m, v, t
    return params


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for k in grads:
            grads[k] = grads[k] * scale
    return total


# -- stage 1 -----------------------------------------------------------------

def pretrain_series_encoder(
    windows: np.ndarray,
    params: ParameterSet,
    model_config: ModelConfig,
    config: TrainConfig,
    steps: int | None = None,
) -> tuple[ParameterSet, list[float]]:
    """Masked patch reconstruction on windows shaped (N, T, d).

    Updates the series-encoder parameters in place whatever their trainable
    flags say, and leaves those flags untouched. Returns the parameters and
    the per-step masked MSE.
    """
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or len(windows) < config.batch_size:
        raise DataError(f"pretraining needs at least {config.batch_size} windows shaped (N, T, d)")
    names = [n for n in params.names() if n.startswith(net.SERIES_ENCODER)]
    tensors = [params[n] for n in names]
    flags = {n: params.is_trainable(n) for n in names}
    for t in tensors:
        t.requires_grad = True
    rng = np.random.default_rng(config.seed)
    n_steps = steps if steps is not None else config.max_steps or config.epochs * math.ceil(len(windows) / config.batch_size)
    state = AdamState()
    losses = []
    try:
        for step in range(n_steps):
            idx = rng.choice(len(windows), size=config.batch_size, replace=False)
            loss = net.reconstruction_loss(windows[idx], params, model_config, config.mask_ratio, rng)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"pretraining loss diverged at step {step}", step=step)
            losses.append(value)
            if not tensors or not loss.requires_grad:
                continue
            grads = dict(zip(names, grad(loss, tensors)))
            clip_by_global_norm(grads, config.clip_norm)
            optimizer_step(grads, _Unfrozen(params), lambda _: config.pretrain_lr, None, state)
    finally:
        for n, t in zip(names, tensors):
            t.requires_grad = flags[n]
    return params, losses


class _Unfrozen:
    """View of a ParameterSet that reports every parameter as trainable."""

    def __init__(self, params: ParameterSet):
        self._params = params

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name):
        return self._params[name]

    def is_trainable(self, name):
        return True


# -- stage 2 -----------------------------------------------------------------

@dataclass
class Example:
    key: str
    text: str
    window: np.ndarray  # (tau, d) normalized pre-window
    full: np.ndarray  # (2 tau, d) pre + post, the causal-loss series
    target: np.ndarray  # (d, pred_len)
    cf_texts: list[str]


def prepare_examples(
    samples: Sequence[AlignedSample],
    events: Mapping[str, EventScript],
    cf_sets: Mapping[str, CounterfactualSet] | None,
    model_config: ModelConfig,
    n_counterfactuals: int = 15,
) -> list[Example]:
    out = []
    ch = list(model_config.channels)
    for s in samples:
        if s.event_id not in events:
            raise DataError(f"sample {s.key} refers to unknown event {s.event_id}")
        if not s.normalized:
            raise DataError(f"sample {s.key} is not normalized")
        if model_config.pred_len > s.tau:
            raise DataError(f"pred_len {model_config.pred_len} exceeds window {s.tau} of {s.key}")
        cfs: list[str] = []
        if n_counterfactuals > 0:
            cset = None if cf_sets is None else cf_sets.get(s.event_id)
            if cset is None:
                raise DataError(f"no counterfactual set for sample {s.key}")
            cfs = cset.texts()[:n_counterfactuals]
            if len(cfs) < n_counterfactuals:
                raise DataError(f"{s.key}: {len(cfs)} counterfactuals available, need {n_counterfactuals}")
        out.append(Example(
            key=s.key,
            text=events[s.event_id].text,
            window=s.pre[:, ch],
            full=np.concatenate([s.pre, s.post])[:, ch],
            target=s.post[:model_config.pred_len, ch].T.copy(),
            cf_texts=cfs,
        ))
    if len({e.window.shape for e in out}) > 1:
        raise DataError("samples of different window lengths cannot share a run")
    return out


def _texts(texts: Sequence[str], config: ModelConfig):
    return encode_batch(texts, config.vocab_size, config.max_text_len)


def batch_losses(batch: Sequence[Example], params, model_config: ModelConfig, config: TrainConfig,
                 training: bool, rng: np.random.Generator | None):
    """(L_Time, L_Causal) for a batch; L_Causal is a zero tensor when disabled."""
    ids, mask = _texts([e.text for e in batch], model_config)
    windows = np.stack([e.window for e in batch])
    target = np.stack([e.target for e in batch])
    pred = net.forward(ids, mask, windows, params, model_config, training=training, rng=rng)
    l_time = time_loss(pred, target)
    if not config.causal_enabled:
        return l_time, Tensor(0.0)
    k = config.n_counterfactuals
    p_gt = net.encode_text(ids, params, model_config, mask)
    cf_ids, cf_mask = _texts([t for e in batch for t in e.cf_texts[:k]], model_config)
    p_cf = net.encode_text(cf_ids, params, model_config, cf_mask).reshape(len(batch), k, model_config.text_embed_dim)
    series = np.stack([e.full if model_config.causal_window == "full" else e.window for e in batch])
    t = net.encode_series(series, params, model_config)
    return l_time, triplet_loss(p_gt, p_cf, t, model_config.margin, model_config.distance)


def validation_loss(examples: Sequence[Example], params, model_config: ModelConfig, batch_size: int) -> float:
    """Mean eval-mode L_Time weighted by batch size."""
    total, count = 0.0, 0
    nc = TrainConfig(causal_weight=0.0)
    with no_grad():
        for i in range(0, len(examples), batch_size):
            batch = examples[i:i + batch_size]
            l_time, _ = batch_losses(batch, params, model_config, nc, False, None)
            total += l_time.item() * len(batch)
            count += len(batch)
    return total / count


@dataclass
class TrainResult:
    params: ParameterSet
    history: list[dict]
    best_epoch: int
    best_val: float | None
    steps: int


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def write_history(history: Iterable[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for row in history:
            w.writerow([row["step"], row["epoch"]] + [_fmt(row.get(k)) for k in HISTORY_FIELDS[2:]])


def read_history(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"history file {path} not found")
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {"step": int(rec["step"]), "epoch": int(rec["epoch"])}
            for k in HISTORY_FIELDS[2:]:
                row[k] = float(rec[k]) if rec[k] else None
            rows.append(row)
    return rows


def save_checkpoint(directory: Path, params: ParameterSet, best: ParameterSet, state: AdamState,
                    history: list[dict], meta: dict) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    params.save(directory / "params.zip")
    best.save(directory / "best.zip")
    np.savez(directory / "optimizer.npz", **state.to_arrays())
    write_history(history, directory / "history.csv")
    (directory / "progress.csv").write_text(
        "".join(f"{k},{v}\n" for k, v in sorted(meta.items())), encoding="utf-8"
    )


def load_checkpoint(directory: str | Path):
    directory = Path(directory)
    for name in ("params.zip", "best.zip", "history.csv", "progress.csv"):
        if not (directory / name).exists():
            raise DataError(f"checkpoint file {directory / name} not found")
    meta = {}
    for line in (directory / "progress.csv").read_text(encoding="utf-8").splitlines():
        k, v = line.split(",", 1)
        meta[k] = v
    opt = directory / "optimizer.npz"
    state = AdamState.from_arrays(dict(np.load(opt))) if opt.exists() else AdamState()
    return (ParameterSet.load(directory / "params.zip"), ParameterSet.load(directory / "best.zip"),
            state, read_history(directory / "history.csv"), meta)


def train_full(
    params: ParameterSet,
    train: Sequence[Example],
    validation: Sequence[Example],
    model_config: ModelConfig,
    config: TrainConfig,
    freeze: FreezePolicy | None = None,
    checkpoint_dir: str | Path | None = None,
    resume: bool = False,
) -> TrainResult:
    """Minimize L_Time + w * L_Causal with per-component Adam rates and early stopping.

    The input parameters are not modified. With a validation set the
    parameters with the lowest validation L_Time are returned; without one
    the final parameters are.
    """
    if not train:
        raise DataError("empty training set")
    params = params.copy()
    freeze = freeze or FreezePolicy.none()
    freeze.apply(params)
    state = AdamState()
    history: list[dict] = []
    best = params.copy()
    best_val, best_epoch, bad_epochs, step, start_epoch = None, -1, 0, 0, 0
    ckpt = Path(checkpoint_dir) if checkpoint_dir else None
    if resume:
        if ckpt is None:
            raise ContractError("resume requires a checkpoint directory")
        loaded, best, state, history, meta = load_checkpoint(ckpt)
        params.load_state(loaded.state())
        start_epoch = int(meta["epoch"]) + 1
        step = int(meta["step"])
        best_epoch, bad_epochs = int(meta["best_epoch"]), int(meta["bad_epochs"])
        best_val = float(meta["best_val"]) if meta["best_val"] else None

    order = list(range(len(train)))
    planned = config.planned_steps(len(train))
    for epoch in range(start_epoch, config.epochs):
        if config.max_steps is not None and step >= config.max_steps:
            break
        if config.shuffle:
            order = list(np.random.default_rng([config.seed, epoch]).permutation(len(train)))
        for i in range(0, len(order), config.batch_size):
            if config.max_steps is not None and step >= config.max_steps:
                break
            batch = [train[j] for j in order[i:i + config.batch_size]]
            rng = np.random.default_rng([config.seed, epoch, step])
            l_time, l_causal = batch_losses(batch, params, model_config, config, True, rng)
            try:
                loss = total_loss(l_time, l_causal, config.time_weight, config.causal_weight)
            except NumericDomainError as exc:
                raise TrainingError(f"loss became non-finite at step {step}", step=step) from exc
            if loss.requires_grad:
                grads = backward(loss, params)
                clip_by_global_norm(grads, config.clip_norm)
                factor = config.schedule_factor(step, planned)
                optimizer_step(grads, params, lambda n: config.rate_for(n) * factor, freeze, state)
            history.append({
                "step": step, "epoch": epoch, "train_time": l_time.item(),
                "train_causal": l_causal.item(), "train_total": loss.item(), "val_time": None,
            })
            step += 1
        if validation:
            val = validation_loss(validation, params, model_config, config.batch_size)
            history[-1]["val_time"] = val
            if best_val is None or val < best_val:
                best_val, best_epoch, bad_epochs = val, epoch, 0
                best = params.copy()
            else:
                bad_epochs += 1
        else:
            best, best_epoch = params.copy(), epoch
        if ckpt is not None and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            save_checkpoint(ckpt, params, best, state, history, {
                "epoch": epoch, "step": step, "best_epoch": best_epoch,
                "bad_epochs": bad_epochs, "best_val": _fmt(best_val),
            })
        if validation and bad_epochs >= config.patience:
            break
    return TrainResult(best, history, best_epoch, best_val, step)
