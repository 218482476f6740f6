"""Scoring, persistence baseline, component and event-type ablations, sensitivity sweeps."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import EventScript, EventType, format_timestamp
from .counterfactual import CounterfactualSet
from .errors import DataError, SpecError
from .market import AlignedSample, DatasetSplit, denormalize, split_dataset, _from_epoch
from .model import network as net
from .model.config import ModelConfig
from .model.tokenizer import encode_batch
from .numerics import ParameterSet, no_grad
from .training import Example, FreezePolicy, TrainConfig, TrainResult, prepare_examples, train_full

log = logging.getLogger(__name__)

FULL_LABEL = "Full Model"
FULL_SELECTION = "Full Selection"
HORIZONS = (35, 70, 140)
ROW_FIELDS = ("asset_id", "pred_len", "variant", "mse", "mae", "n", "note")


@dataclass
class EvaluationReport:
    rows: list[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    per_sample: list[dict] = field(default_factory=list)

    def row(self, asset_id: str, pred_len: int, variant: str) -> dict:
        for r in self.rows:
            if (r["asset_id"], r["pred_len"], r["variant"]) == (asset_id, pred_len, variant):
                return r
        raise KeyError((asset_id, pred_len, variant))

    def extend(self, other: "EvaluationReport") -> "EvaluationReport":
        self.rows += other.rows
        self.per_sample += other.per_sample
        return self

    def to_json(self) -> dict:
        return {"metadata": self.metadata, "rows": self.rows}

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    def write_csv(self, path: str | Path) -> None:
        extra = sorted({k for r in self.rows for k in r} - set(ROW_FIELDS))
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ROW_FIELDS + tuple(extra))
            for r in self.rows:
                w.writerow([_cell(r.get(k)) for k in ROW_FIELDS + tuple(extra)])


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_hash(*configs) -> str:
    blob = json.dumps([c.to_dict() if hasattr(c, "to_dict") else c for c in configs], sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def data_timestamp(samples: Iterable[AlignedSample]) -> str:
    """Latest event time in the data; keeps report metadata reproducible."""
    return format_timestamp(_from_epoch(max(s.event_time for s in samples)))


def _aggregate(per_sample: list[dict], variant: str) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for rec in per_sample:
        groups.setdefault((rec["asset_id"], rec["pred_len"]), []).append(rec)
    rows = []
    for (asset, p), recs in sorted(groups.items()):
        rows.append({
            "asset_id": asset, "pred_len": p, "variant": variant,
            "mse": float(np.mean([r["mse"] for r in recs])),
            "mae": float(np.mean([r["mae"] for r in recs])),
            "n": len(recs), "note": "",
        })
    return rows


def _score(key, asset, p, pred, target) -> dict:
    err = pred - target
    return {"key": key, "asset_id": asset, "pred_len": p,
            "mse": float(np.mean(err ** 2)), "mae": float(np.mean(np.abs(err)))}


def evaluate(
    params: ParameterSet,
    samples: Sequence[AlignedSample],
    events: Mapping[str, EventScript],
    config: ModelConfig,
    pred_lens: Sequence[int] | None = None,
    variant: str = FULL_LABEL,
    original_units: bool = False,
    seed: int | None = None,
    batch_size: int = 32,
) -> EvaluationReport:
    """Eval-mode forecasts scored by MSE/MAE per (asset, horizon).

    Horizons shorter than the model's ``pred_len`` score the leading part of
    the forecast.
    """
    if not samples:
        raise DataError("cannot evaluate an empty split")
    pred_lens = tuple(pred_lens or (config.pred_len,))
    if max(pred_lens) > config.pred_len:
        raise DataError(f"horizon {max(pred_lens)} exceeds the model's pred_len {config.pred_len}")
    ch = list(config.channels)
    per_sample = []
    with no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            missing = [s.event_id for s in chunk if s.event_id not in events]
            if missing:
                raise DataError(f"unknown events: {missing[:3]}")
            ids, mask = encode_batch([events[s.event_id].text for s in chunk], config.vocab_size, config.max_text_len)
            windows = np.stack([s.pre[:, ch] for s in chunk])
            preds = net.forward(ids, mask, windows, params, config).data  # (B, d, pred_len)
            for s, pred in zip(chunk, preds):
                for p in pred_lens:
                    if p > s.tau:
                        raise DataError(f"horizon {p} exceeds window of {s.key}")
                    y_hat = pred[:, :p].T
                    y = s.post[:p, ch]
                    if original_units:
                        y_hat, y = denormalize(y_hat, s, ch), denormalize(y, s, ch)
                    per_sample.append(_score(s.key, s.asset_id, p, y_hat, y))
    return EvaluationReport(
        rows=_aggregate(per_sample, variant),
        metadata={"config_hash": config_hash(config), "seed": seed, "timestamp": data_timestamp(samples)},
        per_sample=per_sample,
    )


def persistence_baseline(samples: Sequence[AlignedSample], pred_lens: Sequence[int],
                         channels: Sequence[int] = (3,), original_units: bool = False) -> EvaluationReport:
    """Repeat the last pre-window value over each horizon, scored like :func:`evaluate`."""
    if not samples:
        raise DataError("cannot evaluate an empty split")
    ch = list(channels)
    per_sample = []
    for s in samples:
        for p in pred_lens:
            y = s.post[:p, ch]
            y_hat = np.repeat(s.pre[-1:, ch], len(y), axis=0)
            if original_units:
                y_hat, y = denormalize(y_hat, s, ch), denormalize(y, s, ch)
            per_sample.append(_score(s.key, s.asset_id, p, y_hat, y))
    return EvaluationReport(
        rows=_aggregate(per_sample, "Persistence"),
        metadata={"config_hash": config_hash({"baseline": "persistence", "channels": ch}), "seed": None,
                  "timestamp": data_timestamp(samples)},
        per_sample=per_sample,
    )


# -- training + evaluation runs ------------------------------------------------

@dataclass
class Dataset:
    events: dict[str, EventScript]
    split: DatasetSplit
    cf_sets: dict[str, CounterfactualSet] | None = None

    @classmethod
    def build(cls, events: Iterable[EventScript], samples: Sequence[AlignedSample],
              cf_sets: Mapping[str, CounterfactualSet] | None = None) -> "Dataset":
        return cls({e.id: e for e in events}, split_dataset(samples), None if cf_sets is None else dict(cf_sets))

    def sample_keys(self) -> list[str]:
        return [s.key for part in (self.split.train, self.split.validation, self.split.test) for s in part]


@dataclass
class RunResult:
    label: str
    seed: int
    report: EvaluationReport
    history: list[dict]
    sample_keys: list[str]
    params: ParameterSet | None = None


def train_and_evaluate(
    data: Dataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    freeze: FreezePolicy | None = None,
    label: str = FULL_LABEL,
    params: ParameterSet | None = None,
    keep_params: bool = False,
) -> RunResult:
    """One run: init from the train seed (or given params), train, score the test split."""
    n_cf = train_config.n_counterfactuals if train_config.causal_enabled else 0
    train = prepare_examples(data.split.train, data.events, data.cf_sets, model_config, n_cf)
    val = prepare_examples(data.split.validation, data.events, data.cf_sets, model_config, n_cf)
    start = params if params is not None else net.init_params(model_config, train_config.seed)
    if freeze is None:
        freeze = FreezePolicy.default(model_config)
        freeze = FreezePolicy(frozenset(p for p in freeze.frozen if any(n.startswith(p) for n in start.names())))
    result: TrainResult = train_full(start, train, val, model_config, train_config, freeze)
    report = evaluate(result.params, data.split.test, data.events, model_config, variant=label, seed=train_config.seed)
    report.metadata["config_hash"] = config_hash(model_config, train_config)
    return RunResult(label, train_config.seed, report, result.history, data.sample_keys(),
                     result.params if keep_params else None)


def counterfactual_ranking(params: ParameterSet, examples: Sequence[Example], config: ModelConfig) -> float:
    """Fraction of examples whose true text embeds closer to the series than every counterfactual."""
    if not examples or any(not e.cf_texts for e in examples):
        raise DataError("ranking needs examples that carry counterfactual texts")
    hits = 0
    with no_grad():
        ids, mask = encode_batch([e.text for e in examples], config.vocab_size, config.max_text_len)
        p_gt = net.encode_text(ids, params, config, mask).data
        t = net.encode_series(np.stack([e.full for e in examples]), params, config).data
        for i, e in enumerate(examples):
            cf_ids, cf_mask = encode_batch(e.cf_texts, config.vocab_size, config.max_text_len)
            p_cf = net.encode_text(cf_ids, params, config, cf_mask).data
            d_gt = np.linalg.norm(p_gt[i] - t[i])
            hits += bool(d_gt < np.linalg.norm(p_cf - t[i], axis=1).min())
    return hits / len(examples)


def _median_rows(runs: Sequence[RunResult], label: str) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for run in runs:
        for r in run.report.rows:
            groups.setdefault((r["asset_id"], r["pred_len"]), []).append(r)
    return [{
        "asset_id": asset, "pred_len": p, "variant": label,
        "mse": float(np.median([r["mse"] for r in rs])), "mae": float(np.median([r["mae"] for r in rs])),
        "n": rs[0]["n"], "note": f"median of {len(rs)} seeds",
    } for (asset, p), rs in sorted(groups.items())]


def _run_all(jobs: list, workers: int) -> list:
    if workers <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return [f.result() for f in [pool.submit(job) for job in jobs]]


# -- component ablation ---------------------------------------------------------

TOGGLES = ("textual", "causal", "fusion", "decoder", "post_regressor")
_TOGGLE_NAMES = {
    "textual": "Textual", "causal": "Causal", "fusion": "Feature Fusion",
    "decoder": "Decoder", "post_regressor": "Post-Regressor",
}


@dataclass(frozen=True)
class AblationSpec:
    textual: bool = True
    causal: bool = True
    fusion: bool = True
    decoder: bool = True
    post_regressor: bool = True

    def __post_init__(self):
        if not any(getattr(self, t) for t in TOGGLES):
            raise SpecError("an ablation cannot switch off every component")

    @classmethod
    def without(cls, *names: str) -> "AblationSpec":
        unknown = set(names) - set(TOGGLES)
        if unknown:
            raise SpecError(f"unknown components {sorted(unknown)}; choose from {TOGGLES}")
        return cls(**{n: False for n in names})

    @property
    def label(self) -> str:
        off = [_TOGGLE_NAMES[t] for t in TOGGLES if not getattr(self, t)]
        return FULL_LABEL if not off else "w/o " + " + ".join(off)

    def apply(self, model_config: ModelConfig, train_config: TrainConfig) -> tuple[ModelConfig, TrainConfig]:
        model_config = model_config.replace(
            use_text=self.textual, use_fusion=self.fusion,
            use_decoder=self.decoder, use_regressor=self.post_regressor,
        )
        if not self.causal:
            train_config = train_config.replace(causal_weight=0.0)
        return model_config, train_config


def single_ablations() -> list[AblationSpec]:
    """The full model followed by one variant per switched-off component."""
    return [AblationSpec()] + [AblationSpec.without(t) for t in TOGGLES]


def run_ablation(
    model_config: ModelConfig,
    train_config: TrainConfig,
    specs: Sequence[AblationSpec],
    data: Dataset,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    workers: int = 1,
    freeze: FreezePolicy | None = None,
    keep_params: bool = False,
) -> tuple[EvaluationReport, list[RunResult]]:
    """Train and score every variant from scratch at every seed; rows hold seed medians."""
    jobs, labels = [], []
    for spec in specs:
        mc, tc = spec.apply(model_config, train_config)
        for seed in seeds:
            jobs.append(lambda mc=mc, tc=tc.replace(seed=seed), label=spec.label: train_and_evaluate(
                data, mc, tc, freeze=freeze, label=label, keep_params=keep_params))
            labels.append(spec.label)
    runs = _run_all(jobs, workers)
    report = EvaluationReport(metadata={
        "config_hash": config_hash(model_config, train_config), "seeds": list(seeds),
        "timestamp": data_timestamp(data.split.test),
    })
    for spec in specs:
        report.rows += _median_rows([r for r in runs if r.label == spec.label], spec.label)
    return report, runs


# -- event-type ablation -----------------------------------------------------------

def _marker(value: float, reference: float) -> str:
    if value < reference:
        return "down"
    if value > reference:
        return "up"
    return "equal"


def run_event_type_ablation(
    events: Iterable[EventScript],
    samples: Sequence[AlignedSample],
    cf_sets: Mapping[str, CounterfactualSet] | None,
    model_config: ModelConfig,
    train_config: TrainConfig,
    workers: int = 1,
) -> tuple[EvaluationReport, dict[str, list[str]]]:
    """Train and score on each single event type and on the union.

    Returns the report and an audit map of label -> sample keys touched. Rows
    carry ``mse_vs_full``/``mae_vs_full`` markers relative to the union.
    """
    events = list(events)
    by_id = {e.id: e for e in events}
    partitions: dict[str, list[AlignedSample]] = {t.value: [] for t in EventType}
    for s in samples:
        partitions[by_id[s.event_id].type.value].append(s)
    partitions[FULL_SELECTION] = list(samples)

    report = EvaluationReport(metadata={
        "config_hash": config_hash(model_config, train_config), "seed": train_config.seed,
        "timestamp": data_timestamp(samples),
    })
    audit: dict[str, list[str]] = {}
    jobs, labels, skipped = [], [], []
    for label, part in partitions.items():
        if len(part) < 5:
            log.warning("event-type partition %s has %d samples; skipped", label, len(part))
            skipped.append((label, len(part)))
            continue
        data = Dataset.build(events, part, cf_sets)
        audit[label] = data.sample_keys()
        jobs.append(lambda data=data, label=label: train_and_evaluate(data, model_config, train_config, label=label))
        labels.append(label)
    runs = dict(zip(labels, _run_all(jobs, workers)))

    full = {(r["asset_id"], r["pred_len"]): r for r in runs[FULL_SELECTION].report.rows} if FULL_SELECTION in runs else {}
    for label in partitions:
        if label not in runs:
            continue
        for r in runs[label].report.rows:
            ref = full.get((r["asset_id"], r["pred_len"]))
            r = dict(r)
            r["mse_vs_full"] = "" if ref is None or label == FULL_SELECTION else _marker(r["mse"], ref["mse"])
            r["mae_vs_full"] = "" if ref is None or label == FULL_SELECTION else _marker(r["mae"], ref["mae"])
            report.rows.append(r)
    pred_lens = sorted({r["pred_len"] for r in report.rows}) or [model_config.pred_len]
    for label, n in skipped:
        for p in pred_lens:
            report.rows.append({"asset_id": "", "pred_len": p, "variant": label, "mse": None, "mae": None,
                                "n": n, "note": f"skipped: only {n} samples", "mse_vs_full": "", "mae_vs_full": ""})
    return report, audit


# -- sensitivity sweeps --------------------------------------------------------------

@dataclass
class SweepRecord:
    knob: str
    value: int
    seed: int
    mse: float
    mae: float
    history: list[dict] = field(repr=False, default_factory=list)

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "history"}


def sweep_configs(knob: str, value: int, model_config: ModelConfig,
                  train_config: TrainConfig) -> tuple[ModelConfig, TrainConfig]:
    """``alpha`` is the counterfactual count per sample (identical-type first, then
    diverse-type; 0 drops the causal term); ``k`` is the post-regressor depth."""
    if knob == "alpha":
        if value < 0:
            raise SpecError("alpha must be non-negative")
        if value == 0:
            return model_config, train_config.replace(causal_weight=0.0)
        return model_config, train_config.replace(n_counterfactuals=value)
    if knob == "k":
        if value < 0:
            raise SpecError("k must be non-negative")
        return model_config.replace(regressor_layers=value), train_config
    raise SpecError(f"unknown sweep knob {knob!r}")


def run_sensitivity(
    model_config: ModelConfig,
    train_config: TrainConfig,
    alphas: Sequence[int],
    ks: Sequence[int],
    data: Dataset,
    seeds: Sequence[int] = (0,),
    workers: int = 1,
) -> list[SweepRecord]:
    if not alphas and not ks:
        raise SpecError("sensitivity sweep needs at least one alpha or k value")
    grid = [("alpha", a) for a in alphas] + [("k", k) for k in ks]
    jobs = []
    for knob, value in grid:
        mc, tc = sweep_configs(knob, value, model_config, train_config)
        for seed in seeds:
            jobs.append((knob, value, seed, lambda mc=mc, tc=tc.replace(seed=seed), label=f"{knob}={value}":
                         train_and_evaluate(data, mc, tc, label=label)))
    runs = _run_all([j[3] for j in jobs], workers)
    out = []
    for (knob, value, seed, _), run in zip(jobs, runs):
        rows = run.report.rows
        n = sum(r["n"] for r in rows)
        out.append(SweepRecord(knob, value, seed,
                               float(sum(r["mse"] * r["n"] for r in rows) / n),
                               float(sum(r["mae"] * r["n"] for r in rows) / n), run.history))
    return out


def write_sweep(records: Sequence[SweepRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("knob", "value", "seed", "mse", "mae"))
        for r in records:
            w.writerow((r.knob, r.value, r.seed, repr(r.mse), repr(r.mae)))


# -- plots -----------------------------------------------------------------------------

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "eventcast"
    return plt


def plot_history(history: Sequence[dict], path: str | Path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    steps = [r["step"] for r in history]
    for key in ("train_time", "train_causal", "train_total"):
        ax.plot(steps, [r[key] for r in history], label=key)
    val = [(r["step"], r["val_time"]) for r in history if r.get("val_time") is not None]
    if val:
        ax.plot(*zip(*val), "o-", label="val_time")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_sweep(records: Sequence[SweepRecord], path: str | Path) -> None:
    plt = _pyplot()
    knobs = sorted({r.knob for r in records})
    fig, axes = plt.subplots(1, len(knobs), figsize=(4 * len(knobs), 3.5), squeeze=False)
    for ax, knob in zip(axes[0], knobs):
        values = sorted({r.value for r in records if r.knob == knob})
        med = [float(np.median([r.mse for r in records if r.knob == knob and r.value == v])) for v in values]
        ax.plot(values, med, "o-")
        ax.set_xlabel(knob)
        ax.set_ylabel("test MSE (median over seeds)")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
