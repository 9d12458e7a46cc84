"""Command-line entry point.

    tactic-expert gen --n 250 --out data.jsonl
    tactic-expert train --config run.json --output-dir runs/a
    tactic-expert eval --checkpoint runs/a/checkpoint.json
    tactic-expert ablate --config run.json --seeds 0 1 2
    tactic-expert export-heatmaps --checkpoint runs/a/checkpoint.json --sequence seq0200 --t 10
    tactic-expert render-prompt --task node --checkpoint runs/a/checkpoint.json --sequence seq0200

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .config import Config
from .data import ingest_jsonl, write_jsonl
from .errors import ConfigError, DataError, NumericError, TacticExpertError, TrainingDiverged, ValidationError
from .interpret import heatmaps
from .prompts import TASKS, context_from_sequence, render_prompt
from .synth import make_dataset
from .training import evaluate, fit, infer, prepare
from .transformer import ABLATION_FLAGS

log = logging.getLogger("tactic_expert")

OUTPUT_ROOT_ENV = "TACTIC_EXPERT_OUTPUT_ROOT"
VARIANTS = ("full",) + ABLATION_FLAGS
METRIC_COLUMNS = ("macro_f1_node", "auc_link", "macro_f1_graph")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "outputs"))


def resolve_out(path, default_name) -> Path:
    if path is None:
        return output_root() / default_name
    return Path(path)


# ------------------------------------------------------------- config


_OVERRIDES = {
    "seed": int, "epochs": int, "stage2_epochs": int, "batch_size": int, "n_sequences": int,
    "noise_sigma": float, "lr": float, "dtype": str,
}


def build_config(args) -> Config:
    """defaults < config file < command-line flags"""
    data = {}
    if getattr(args, "config", None):
        data = Config.load(args.config).to_dict()
    for key in _OVERRIDES:
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    if getattr(args, "ablations", None) is not None:
        data["ablations"] = list(args.ablations)
    return Config.from_dict(data)


def _add_overrides(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--stage2-epochs", dest="stage2_epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--n-sequences", dest="n_sequences", type=int)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--dtype", choices=("float32", "float64"))


# --------------------------------------------------------------- data


def load_sequences(cfg: Config, data_path=None):
    if data_path:
        return ingest_jsonl(data_path)
    return make_dataset(cfg.n_sequences, cfg.tactics, cfg.T, cfg.noise_sigma, cfg.seed, cfg.augment)


def split(sequences, test_fraction: float):
    n_test = int(round(len(sequences) * test_fraction))
    cut = len(sequences) - n_test
    return sequences[:cut], sequences[cut:]


def find_sequence(sequences, key):
    for i, s in enumerate(sequences):
        if s.sequence_id == key:
            return s
    if str(key).isdigit() and int(key) < len(sequences):
        return sequences[int(key)]
    raise DataError(f"no sequence {key!r}")


def _json_ready(obj):
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return None if np.isnan(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_json_ready(obj), indent=2, sort_keys=True) + "\n")
    return path


# ----------------------------------------------------------- commands


def cmd_gen(args):
    cfg = build_config(args)
    seqs = make_dataset(cfg.n_sequences, cfg.tactics, cfg.T, cfg.noise_sigma, cfg.seed, cfg.augment)
    out = write_jsonl(seqs, resolve_out(args.out, "data.jsonl"))
    print(out)
    return EXIT_OK


def train_run(cfg: Config, sequences, out_dir: Path):
    train, test = split(sequences, cfg.test_fraction)
    if not train:
        raise DataError("training split is empty")

    def progress(rec):
        log.info("stage %d epoch %d loss %.6f", rec["stage"], rec["epoch"], rec["loss"])

    result = fit(prepare(train, cfg.k_eigs), cfg, progress)
    metrics = evaluate(result.model, test) if test else {}
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / "checkpoint.json", result.model, {"metrics": _json_ready(metrics)})
    _write_json(out_dir / "config.json", cfg.to_dict())
    _write_json(out_dir / "metrics.json", {"history": result.history, "final": metrics})
    return result, metrics


def cmd_train(args):
    cfg = build_config(args)
    out_dir = resolve_out(args.output_dir, "train")
    _, metrics = train_run(cfg, load_sequences(cfg, args.data), out_dir)
    print(json.dumps(_json_ready({k: metrics.get(k) for k in METRIC_COLUMNS}), sort_keys=True))
    return EXIT_OK


def cmd_eval(args):
    model, _ = load_checkpoint(args.checkpoint)
    cfg = model.cfg
    seqs = load_sequences(cfg, args.data)
    if not args.data:
        seqs = split(seqs, cfg.test_fraction)[1]
    metrics = evaluate(model, seqs)
    text = json.dumps(_json_ready(metrics), indent=2, sort_keys=True)
    if args.out:
        _write_json(args.out, metrics)
    print(text)
    return EXIT_OK


def run_ablation(cfg: Config, seeds, sequences_for_seed, out_dir: Path):
    """-> {variant: {metric: mean over seeds} or None when the variant failed}"""
    table = {}
    for variant in VARIANTS:
        flags = [] if variant == "full" else [variant]
        runs = []
        try:
            for seed in seeds:
                vcfg = cfg.replace(seed=seed, ablations=flags)
                seqs = sequences_for_seed(seed)
                train, test = split(seqs, vcfg.test_fraction)
                result = fit(prepare(train, vcfg.k_eigs), vcfg)
                runs.append(evaluate(result.model, test))
        except (TacticExpertError, ArithmeticError) as exc:
            log.error("variant %s failed: %s", variant, exc)
            table[variant] = None
            continue
        table[variant] = {k: float(np.mean([r[k] for r in runs])) for k in METRIC_COLUMNS}
        table[variant]["per_seed"] = [{k: r[k] for k in METRIC_COLUMNS} for r in runs]
    write_ablation_csv(out_dir / "ablation.csv", table)
    _write_json(out_dir / "ablation.json", {"seeds": list(seeds), "variants": table})
    return table


def write_ablation_csv(path, table):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", *METRIC_COLUMNS])
        for variant in VARIANTS:
            row = table.get(variant)
            if row is None:
                w.writerow([variant, *(["FAILED"] * len(METRIC_COLUMNS))])
            else:
                w.writerow([variant, *(f"{row[k]:.6f}" for k in METRIC_COLUMNS)])
    return path


def cmd_ablate(args):
    cfg = build_config(args)
    seeds = args.seeds if args.seeds else [cfg.seed]
    out_dir = resolve_out(args.output_dir, "ablation")
    if args.data:
        shared = ingest_jsonl(args.data)

        def seqs_for(seed):
            return shared
    else:
        def seqs_for(seed):
            return make_dataset(cfg.n_sequences, cfg.tactics, cfg.T, cfg.noise_sigma, seed, cfg.augment)

    table = run_ablation(cfg, seeds, seqs_for, out_dir)
    print(out_dir / "ablation.csv")
    return EXIT_NUMERIC if any(v is None for v in table.values()) else EXIT_OK


def cmd_export_heatmaps(args):
    model, _ = load_checkpoint(args.checkpoint)
    seq = find_sequence(load_sequences(model.cfg, args.data), args.sequence)
    maps = heatmaps(model, seq, args.t)
    out_dir = resolve_out(args.output_dir, "heatmaps")
    for p in maps.write(out_dir, f"{seq.sequence_id}_t{args.t}"):
        print(p)
    return EXIT_OK


def predictions_for(model, seq, task, t_end):
    """Model-derived answers for the prompt of ``task`` at slice ``t_end``."""
    data = prepare([seq], model.cfg.k_eigs)
    pred = infer(model, data)
    heads = model.experts[int(pred.experts[0])].heads
    H = pred.fused[0, t_end]
    ids = list(seq.player_ids)
    with torch.no_grad():
        if task == "node":
            p = torch.softmax(heads.possession_logits(H), -1).numpy()
            return [ids[i] for i in np.argsort(-p, kind="stable")[:3]]
        if task == "link":
            holder = seq.holders()[t_end]
            if holder is None:
                return (False, [])
            pl = torch.softmax(heads.pass_logits(H[None], torch.tensor([holder]))[0], -1).numpy()
            order = [i for i in np.argsort(-pl, kind="stable") if i != holder][:3]
            # a pass is predicted when the top recipient outranks keeping the ball next slice
            keep = torch.softmax(heads.possession_logits(H), -1)[holder].item()
            return (bool(pl[order[0]] > keep), [ids[i] for i in order])
        return bool(heads.shot_logit(H).item() > 0)


def _parse_manual(task, text):
    if task == "graph":
        if text.lower() not in ("yes", "no"):
            raise ValidationError("graph predictions must be yes or no")
        return text.lower() == "yes"
    items = [s.strip() for s in text.split(",") if s.strip()]
    if task == "link":
        if not items or items[0].lower() not in ("yes", "no"):
            raise ValidationError("link predictions start with yes or no")
        return (items[0].lower() == "yes", items[1:])
    return items


def cmd_render_prompt(args):
    cfg = build_config(args)
    model = None
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
        cfg = model.cfg
    seqs = load_sequences(cfg, args.data)
    seq = find_sequence(seqs, args.sequence)
    t_end = seq.T - 1 if args.t is None else args.t
    ctx = context_from_sequence(seq, t_end, args.horizon)
    if args.predictions is not None:
        preds = _parse_manual(args.task, args.predictions)
    elif model is not None:
        preds = predictions_for(model, seq, args.task, t_end)
    else:
        raise ConfigError("render-prompt needs --checkpoint or --predictions")
    sys.stdout.write(render_prompt(args.task, preds, ctx))
    return EXIT_OK


# -------------------------------------------------------------- parser


def build_parser():
    ap = argparse.ArgumentParser(prog="tactic-expert", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic dataset as JSONL")
    _add_overrides(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="two-stage training; writes checkpoint and metrics")
    _add_overrides(p)
    p.add_argument("--data", help="JSONL input (default: synthetic data from the config)")
    p.add_argument("--ablations", nargs="*", choices=ABLATION_FLAGS)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on held-out data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train every ablation variant and tabulate metrics")
    _add_overrides(p)
    p.add_argument("--data")
    p.add_argument("--seeds", type=int, nargs="*")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-heatmaps", help="similarity / attention / difference CSVs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--sequence", required=True, help="sequence id or index")
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_export_heatmaps)

    p = sub.add_parser("render-prompt", help="fill a downstream-task prompt template")
    _add_overrides(p)
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--sequence", default="0")
    p.add_argument("--t", type=int)
    p.add_argument("--horizon", type=int, default=1)
    p.add_argument("--predictions", help="manual answer, e.g. 'p7,p3,p1', 'yes,p2' or 'no'")
    p.set_defaults(func=cmd_render_prompt)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (NumericError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValidationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
