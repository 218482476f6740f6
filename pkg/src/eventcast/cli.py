"""Command-line entry point. Stages talk to each other only through files."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .corpus import ingest_archive, read_events, write_events
from .counterfactual import (
    EventIndex,
    augment_event,
    group_by_parent,
    make_backend,
    read_counterfactuals,
    sample_counterfactuals,
    write_counterfactuals,
)
from .errors import AugmentationError, ConfigError, DataError, EventcastError, IngestError, MissingArtifactError
from .evaluation import (
    TOGGLES,
    AblationSpec,
    Dataset,
    evaluate,
    persistence_baseline,
    plot_history,
    plot_sweep,
    run_ablation,
    run_sensitivity,
    write_sweep,
)
from .market import align_all, normalize_sample, read_bars, read_samples, split_dataset, write_samples
from .model import network as net
from .model.config import PRESETS, preset
from .numerics import ParameterSet
from .synthetic import write_fixture
from .training import (
    FreezePolicy,
    TrainConfig,
    prepare_examples,
    pretrain_series_encoder,
    train_full,
    train_preset,
    write_history,
)

log = logging.getLogger("eventcast")


@dataclass
class PipelineConfig:
    preset: str = "desk"
    seed: int = 0
    tau: int = 35
    backend: str = "stub"
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    def model_config(self):
        return preset(self.preset, pred_len=self.tau, init_seed=self.seed, **self.model)

    def train_config(self, **changes) -> TrainConfig:
        return train_preset(self.preset, seed=self.seed, **{**self.train, **changes})


def load_config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise MissingArtifactError(f"config file {path} not found")
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        unknown = set(raw) - set(PipelineConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = PipelineConfig(**raw)
    for key in ("preset", "seed", "tau", "backend"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if cfg.preset not in PRESETS:
        raise ConfigError(f"unknown preset {cfg.preset!r}")
    return cfg


def _need(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"missing input {path}")
    return path


def _plan(args, cfg: PipelineConfig, action: str) -> bool:
    if not args.dry_run:
        return False
    plan = {"command": args.command, "action": action, "config": cfg.__dict__,
            "inputs": {k: str(v) for k, v in vars(args).items() if k not in ("func", "command", "dry_run") and v is not None}}
    print(json.dumps(plan, sort_keys=True, default=str))
    return True


def _dataset(args, cfg: PipelineConfig, need_cf: bool = True) -> Dataset:
    events = read_events(_need(args.events))
    samples = [normalize_sample(s) for s in read_samples(_need(args.samples)) if s.tau == cfg.tau]
    if not samples:
        raise DataError(f"no samples with tau {cfg.tau} in {args.samples}")
    cf_sets = None
    if need_cf:
        store = group_by_parent(read_counterfactuals(_need(args.counterfactuals)))
        index = EventIndex(events)
        by_id = {e.id: e for e in events}
        cf_sets = {eid: sample_counterfactuals(by_id[eid], index, store) for eid in {s.event_id for s in samples}}
    return Dataset.build(events, samples, cf_sets)


# -- commands -------------------------------------------------------------------

def cmd_ingest(args, cfg):
    if _plan(args, cfg, f"normalize documents under {args.archive} into {args.out}"):
        return 0
    events, skipped = ingest_archive(args.archive)
    if not events:
        raise IngestError(f"no events ingested from {args.archive}")
    write_events(events, args.out)
    counts = {}
    for e in events:
        counts[e.type.value] = counts.get(e.type.value, 0) + 1
    print(json.dumps({"events": len(events), "skipped": len(skipped), "by_type": counts}, sort_keys=True))
    return 0


def cmd_align(args, cfg):
    if _plan(args, cfg, f"align events to every bar file in {args.bars} with tau {cfg.tau}"):
        return 0
    events = read_events(_need(args.events))
    files = sorted(_need(args.bars).glob("*.csv"))
    if not files:
        raise MissingArtifactError(f"no bar files in {args.bars}")
    samples, skipped = [], 0
    for path in files:
        got, bad = align_all(read_bars(path), events, cfg.tau)
        samples += [normalize_sample(s) for s in got]
        skipped += len(bad)
    if not samples:
        raise DataError("no event could be aligned")
    samples.sort(key=lambda s: (s.event_time, s.event_id, s.asset_id))
    write_samples(samples, args.out)
    print(json.dumps({"samples": len(samples), "skipped": skipped, "tau": cfg.tau}))
    return 0


def cmd_augment(args, cfg):
    if _plan(args, cfg, f"generate counterfactuals with the {cfg.backend} backend"):
        return 0
    events = read_events(_need(args.events))
    backend = make_backend(cfg.backend)
    records, failed = [], 0
    for ev in events:
        try:
            records += augment_event(ev, backend, max_in_flight=args.workers)
        except AugmentationError as exc:
            log.warning("%s", exc)
            records += exc.records
            failed += 1
    write_counterfactuals(records, args.out)
    print(json.dumps({"events": len(events), "counterfactuals": len(records), "failed_events": failed}))
    return 0


def cmd_pretrain(args, cfg):
    if _plan(args, cfg, "masked-reconstruction pretraining of the series encoder"):
        return 0
    samples = [normalize_sample(s) for s in read_samples(_need(args.samples)) if s.tau == cfg.tau]
    mc = cfg.model_config()
    train = split_dataset(samples).train
    windows = np.stack([s.pre[:, list(mc.channels)] for s in train])
    tc = cfg.train_config(stage="pretrain", batch_size=min(cfg.train_config().batch_size, len(windows)))
    params, losses = pretrain_series_encoder(windows, net.init_params(mc), mc, tc, steps=args.steps)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params.save(out / "pretrained.zip")
    (out / "pretrain_loss.csv").write_text(
        "step,masked_mse\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(losses)), encoding="utf-8")
    print(json.dumps({"steps": len(losses), "first": losses[0] if losses else None, "last": losses[-1] if losses else None}))
    return 0


def cmd_train(args, cfg):
    if _plan(args, cfg, "train the full model"):
        return 0
    tc = cfg.train_config()
    data = _dataset(args, cfg, need_cf=tc.causal_enabled)
    mc = cfg.model_config()
    params = ParameterSet.load(_need(args.init)) if args.init else net.init_params(mc)
    n_cf = tc.n_counterfactuals if tc.causal_enabled else 0
    train = prepare_examples(data.split.train, data.events, data.cf_sets, mc, n_cf)
    val = prepare_examples(data.split.validation, data.events, data.cf_sets, mc, n_cf)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = train_full(params, train, val, mc, tc, FreezePolicy.default(mc),
                        checkpoint_dir=out / "checkpoint", resume=args.resume)
    result.params.save(out / "params.zip")
    write_history(result.history, out / "history.csv")
    (out / "model.json").write_text(json.dumps(mc.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    if args.plots:
        plot_history(result.history, out / "loss.svg")
    print(json.dumps({"steps": result.steps, "best_epoch": result.best_epoch, "best_val": result.best_val}))
    return 0


def cmd_eval(args, cfg):
    if _plan(args, cfg, "score the test split"):
        return 0
    params = ParameterSet.load(_need(args.params))
    model_json = _need(args.params).with_name("model.json")
    mc = cfg.model_config()
    if model_json.exists():
        mc = mc.replace(**json.loads(model_json.read_text(encoding="utf-8")))
    data = _dataset(args, cfg, need_cf=False)
    report = evaluate(params, data.split.test, data.events, mc, seed=cfg.seed, original_units=args.original_units)
    report.extend(persistence_baseline(data.split.test, (mc.pred_len,), mc.channels, args.original_units))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "report.csv")
    report.write_json(out / "report.json")
    print(json.dumps(report.rows, sort_keys=True))
    return 0


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from None


def cmd_ablate(args, cfg):
    names = [n for n in args.variants.split(",") if n]
    specs = [AblationSpec()] + [AblationSpec.without(n) for n in names]
    if _plan(args, cfg, "ablation variants: " + "; ".join(s.label for s in specs)):
        return 0
    data = _dataset(args, cfg)
    report, runs = run_ablation(cfg.model_config(), cfg.train_config(), specs, data,
                                seeds=[cfg.seed + i for i in range(args.seeds)], workers=args.workers)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "ablation.csv")
    report.write_json(out / "ablation.json")
    print(json.dumps(report.rows, sort_keys=True))
    return 0


def cmd_sweep(args, cfg):
    alphas, ks = _ints(args.alphas), _ints(args.ks)
    if _plan(args, cfg, f"sensitivity sweep alpha={alphas} k={ks}"):
        return 0
    data = _dataset(args, cfg)
    records = run_sensitivity(cfg.model_config(), cfg.train_config(), alphas, ks, data,
                              seeds=[cfg.seed + i for i in range(args.seeds)], workers=args.workers)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep(records, out / "sweep.csv")
    if args.plots:
        plot_sweep(records, out / "sweep.svg")
    print(json.dumps([r.to_json() for r in records], sort_keys=True))
    return 0


def cmd_synth(args, cfg):
    if _plan(args, cfg, f"write a planted-sentiment fixture of {args.events} events to {args.out_dir}"):
        return 0
    archive, bars = write_fixture(args.out_dir, args.events, cfg.tau, cfg.seed)
    print(json.dumps({"archive": str(archive), "bars": str(bars)}))
    return 0


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file with preset/seed/tau/backend/model/train keys")
    common.add_argument("--seed", type=int)
    common.add_argument("--preset", choices=sorted(PRESETS))
    common.add_argument("--tau", type=int, choices=(35, 70, 140))
    common.add_argument("--backend", choices=("stub", "http"))
    common.add_argument("--dry-run", action="store_true", help="print the resolved plan and exit")

    parser = argparse.ArgumentParser(prog="eventcast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "normalize an archive of release documents")
    p.add_argument("archive")
    p.add_argument("--out", default="events.jsonl")

    p = add("align", cmd_align, "cut pre/post windows around each event")
    p.add_argument("--events", default="events.jsonl")
    p.add_argument("--bars", required=True, help="directory of <asset>.csv bar files")
    p.add_argument("--out", default="samples.jsonl")

    p = add("augment", cmd_augment, "generate counterfactual events")
    p.add_argument("--events", default="events.jsonl")
    p.add_argument("--out", default="counterfactuals.jsonl")
    p.add_argument("--workers", type=int, default=4)

    p = add("pretrain", cmd_pretrain, "pretrain the series encoder")
    p.add_argument("--samples", default="samples.jsonl")
    p.add_argument("--steps", type=int)
    p.add_argument("--out-dir", default="run")

    def data_args(p, cf=True):
        p.add_argument("--events", default="events.jsonl")
        p.add_argument("--samples", default="samples.jsonl")
        if cf:
            p.add_argument("--counterfactuals", default="counterfactuals.jsonl")
        p.add_argument("--out-dir", default="run")

    p = add("train", cmd_train, "train the full model")
    data_args(p)
    p.add_argument("--init", help="parameter archive to start from (e.g. pretrained.zip)")
    p.add_argument("--resume", action="store_true", help="continue from <out-dir>/checkpoint")
    p.add_argument("--plots", action="store_true")

    p = add("eval", cmd_eval, "score trained parameters on the test split")
    data_args(p, cf=False)
    p.add_argument("--params", default="run/params.zip")
    p.add_argument("--original-units", action="store_true")

    p = add("ablate", cmd_ablate, "component ablation study")
    data_args(p)
    p.add_argument("--variants", default=",".join(TOGGLES), help=f"components to switch off, from {TOGGLES}")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--workers", type=int, default=1)

    p = add("sweep", cmd_sweep, "counterfactual-count and regressor-depth sensitivity")
    data_args(p)
    p.add_argument("--alphas", default="0,5,10,15")
    p.add_argument("--ks", default="2,4,6")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--plots", action="store_true")

    p = add("synth", cmd_synth, "write a synthetic planted-sentiment archive and bars")
    p.add_argument("--events", type=int, default=12)
    p.add_argument("--out-dir", default="fixture")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        return args.func(args, cfg)
    except EventcastError as exc:
        print(f"{type(exc).__name__}: {' '.join(str(exc).split())}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
