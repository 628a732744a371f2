"""Command-line surface: generate, stats, eval, gradcheck, scan-bench, train-toy.

Thin bindings over the library modules. Exit codes: 0 success, 1 validation
error (bad values, mismatched keys, failing checks), 2 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import dataio, metrics, qagen, templates
from .masks import count_labels, destruction_percentage
from .scan import ScanDims, gradcheck, scan_benchmark


def _cmd_generate(args) -> int:
    entries = dataio.load_manifest(args.manifest)

    def one(entry):
        mask = dataio.load_mask(entry.mask_path, resize=args.resize)
        items = qagen.generate_all(mask, entry.image_id, sigma_mode=args.sigma_mode)
        os_percent = destruction_percentage(count_labels(mask))
        return entry.image_id, items, os_percent

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(one, entries))
    else:
        results = [one(e) for e in entries]

    items = [item for _, batch, _ in results for item in batch]
    dataio.write_qa_jsonl(args.out, items)
    if args.severity_out:
        dataio.write_severity_json(args.severity_out,
                                   {iid: os_p for iid, _, os_p in results})
    if args.vocab_out:
        templates.dump_vocabulary(args.vocab_out)
    if args.registry_out:
        templates.dump_registry(args.registry_out)
    print(f"wrote {len(items)} records for {len(entries)} images to {args.out}")
    return 0


def _stats_payload(stats: qagen.DatasetStats) -> dict:
    return {
        "total_questions": stats.total_questions,
        "category_totals": stats.category_totals,
        "severity_frequencies": stats.severity_frequencies,
        "imbalance_ratio": (round(stats.imbalance_ratio, 4)
                            if stats.imbalance_ratio is not None else None),
        "spatial_split": stats.spatial_split,
        "recovery_split": stats.recovery_split,
    }


def _cmd_stats(args) -> int:
    items = dataio.load_qa_jsonl(args.qa)
    severities = None
    if args.severity:
        severities = list(dataio.load_severity_json(args.severity).values())
    stats = qagen.dataset_stats(items, severities=severities)
    print(json.dumps(_stats_payload(stats), indent=2, sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    gold = dataio.load_qa_jsonl(args.gold)
    preds = metrics.PredictionSet(dataio.load_predictions_jsonl(args.pred))
    report = metrics.score(gold, preds, threads=args.threads)
    payload = metrics.report_to_json(report)
    with open(args.report, "w", encoding="utf-8", newline="\n") as f:
        f.write(payload)
    print(f"OA {report.overall_accuracy:.4f}  AA {report.average_accuracy:.4f}  "
          f"macro-F1 {report.macro_f1:.4f}  ({report.n_items} items)")
    return 0


def _cmd_gradcheck(args) -> int:
    dims = ScanDims(args.batch, args.length, args.channels, args.state)
    reports = []
    all_pass = True
    for seed in range(args.seed, args.seed + args.seeds):
        rep = gradcheck(dims, seed=seed, method=args.method,
                        a_delta_mode=args.a_delta_mode)
        reports.append(rep)
        worst = max(g["max_rel_err"] for g in rep["groups"].values())
        status = "PASS" if rep["all_pass"] else "FAIL"
        print(f"seed {seed}: {status}  worst rel err {worst:.3e}")
        all_pass = all_pass and rep["all_pass"]
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump(reports, f, indent=2)
            f.write("\n")
    print("gradcheck:", "PASS" if all_pass else "FAIL")
    return 0 if all_pass else 1


def _cmd_scan_bench(args) -> int:
    dims = ScanDims(args.batch, args.length, args.channels, args.state)
    rep = scan_benchmark(dims, seed=args.seed, repeats=args.repeats,
                         chunk=args.chunk, method=args.method)
    print(json.dumps(rep, indent=2))
    return 0


def _cmd_train_toy(args) -> int:
    from .model import ModelConfig
    from .synthetic import build_task
    from .training import train_toy

    config = ModelConfig(seed=args.seed, epochs=args.epochs, fusion=args.fusion,
                         layers=args.layers, state_size=args.state)
    task = build_task(seed=args.seed, n_train=args.samples,
                      n_eval=args.eval_samples)
    report = train_toy(config, task,
                       paired_text_ablation=not args.ablate_text,
                       gate_gradcheck=not args.no_gate, verbose=args.verbose)
    if args.ablate_text:
        # single ablated arm instead of the paired default
        report["text_ablated"] = report.pop("with_text")
        report["text_ablated"]["ablate_text"] = True
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2, default=float)
            f.write("\n")
    arm = report.get("with_text") or report["text_ablated"]
    print(f"final/initial loss {arm['loss_ratio']:.3f}  "
          f"held-out OA {arm['held_out']['overall_accuracy']:.4f}  "
          f"baseline OA {report['majority_baseline']['held_out_accuracy']:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="changeqa",
        description="Change-detection QA generation, evaluation, and the "
                    "text-conditioned change-scan kernel toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate QA records from a mask manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resize", type=int, default=None,
                   help="nearest-neighbor resize of label grids")
    p.add_argument("--sigma-mode", choices=("std", "rms"), default="std")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--severity-out", default=None,
                   help="write per-image exact destruction percents (JSON)")
    p.add_argument("--vocab-out", default=None)
    p.add_argument("--registry-out", default=None)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("stats", help="dataset statistics for a QA file")
    p.add_argument("--qa", required=True)
    p.add_argument("--severity", default=None,
                   help="per-image severity JSON from generate --severity-out")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("eval", help="score predictions against gold QA records")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="verify scan gradients vs finite differences")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--length", type=int, default=8)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--state", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1, help="number of seeds to run")
    p.add_argument("--method", choices=("euler", "zoh"), default="euler")
    p.add_argument("--a-delta-mode", choices=("mean", "pre", "post"), default="mean")
    p.add_argument("--report", default=None)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("scan-bench", help="reference vs chunked scan throughput")
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--length", type=int, default=4096)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--state", type=int, default=16)
    p.add_argument("--chunk", type=int, default=64)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", choices=("euler", "zoh"), default="euler")
    p.set_defaults(func=_cmd_scan_bench)

    p = sub.add_parser("train-toy", help="train the toy model on synthetic data")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--fusion", choices=("mul", "sum", "concat", "sub", "nsub"),
                   default="mul")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--state", type=int, default=8)
    p.add_argument("--samples", type=int, default=512)
    p.add_argument("--eval-samples", type=int, default=256)
    p.add_argument("--ablate-text", action="store_true",
                   help="train only the text-ablated arm")
    p.add_argument("--no-gate", action="store_true",
                   help="skip the pre-training gradient gate")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--report", default=None)
    p.set_defaults(func=_cmd_train_toy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
