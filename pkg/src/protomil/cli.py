"""Command-line surface: gen, train, eval, explain, ablate, gradcheck.

Exit codes: 0 success, 1 gradient-contract failure, 2 training
divergence, 3 configuration / IO errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evaluation, fileio, model, synth
from .disentangle import PrototypeSet
from .errors import (
    ConfigError,
    DivergenceError,
    IoError,
    NotFoundError,
    ProtomilError,
)

EXIT_OK = 0
EXIT_CONTRACT = 1
EXIT_DIVERGENCE = 2
EXIT_CONFIG = 3


class _Parser(argparse.ArgumentParser):
    # usage problems are configuration problems for exit-code purposes
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _say(args, text):
    if not args.quiet:
        print(text)


def _load(args) -> fileio.RunConfig:
    return fileio.load_config(
        args.config, seed_override=args.seed, out_override=args.out
    )


def _load_prototypes(cfg: fileio.RunConfig) -> PrototypeSet:
    return PrototypeSet(
        features=fileio.read_feature_file(cfg.paths.prototypes_path()),
        source="file",
    )


def cmd_gen(args) -> int:
    cfg = _load(args)
    bags = synth.generate_dataset(cfg.synth, cfg.count)
    prototypes = synth.sample_prototypes(cfg.synth)
    fileio.write_dataset(cfg.paths.dataset_dir, bags, prototypes)
    _say(args, f"wrote {len(bags)} bags to {cfg.paths.dataset_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load(args)
    bags = fileio.read_dataset(cfg.paths.dataset_dir)
    prototypes = _load_prototypes(cfg)
    out_dir = Path(cfg.paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        params, history = model.train(bags, prototypes, cfg.train,
                                      n_classes=cfg.synth.C)
    except DivergenceError as exc:
        if exc.last_params is not None:
            fileio.write_checkpoint(cfg.paths.checkpoint_path(), exc.last_params)
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    fileio.write_checkpoint(cfg.paths.checkpoint_path(), params)
    fileio.write_jsonl(out_dir / "metrics.jsonl", history)
    _say(args, f"checkpoint: {cfg.paths.checkpoint_path()}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load(args)
    bags = fileio.read_dataset(cfg.paths.dataset_dir)
    prototypes = _load_prototypes(cfg)
    params = fileio.read_checkpoint(cfg.paths.checkpoint_path())
    fileio.check_checkpoint_against(params, bags)
    out_dir = Path(cfg.paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    report = evaluation.evaluate_model(params, bags, prototypes, cfg.train)
    (out_dir / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2) + "\n"
    )
    freqs = evaluation.eval_freqs(cfg.train, params.n_feat)
    labels = np.array([b.label for b in bags])
    embeddings = np.vstack([
        model.bag_embedding(b, params, prototypes, freqs, cfg.train)
        for b in bags
    ])
    direction = evaluation.class_mean_direction(embeddings, labels)
    projections = embeddings @ direction
    with open(out_dir / "projections.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bag_id", "label", "projection"])
        for bag, proj in zip(bags, projections):
            writer.writerow([bag.bag_id, bag.label, repr(float(proj))])
    _say(args, evaluation.format_report_table([
        {"variant": report.variant, "seed": report.seed,
         "status": "ok", "report": report}
    ]))
    return EXIT_OK


def cmd_explain(args) -> int:
    cfg = _load(args)
    bags = fileio.read_dataset(cfg.paths.dataset_dir)
    by_id = {b.bag_id: b for b in bags}
    if args.bag_id not in by_id:
        raise NotFoundError(f"bag id {args.bag_id} not in dataset")
    bag = by_id[args.bag_id]
    prototypes = _load_prototypes(cfg)
    params = fileio.read_checkpoint(cfg.paths.checkpoint_path())
    fileio.check_checkpoint_against(params, [bag])
    train_cfg = cfg.train
    if train_cfg.variant not in ("full",):
        train_cfg = replace(train_cfg, variant="full")
    freqs = evaluation.eval_freqs(train_cfg, params.n_feat)
    _, probs, detail = model.forward(bag, params, prototypes, freqs, train_cfg)
    semantics = ("TIs", "NTIs", "BGIs")
    sem_dist = {
        detail.semantic_of_cluster[c]: float(detail.distances[c])
        for c in detail.semantic_of_cluster
    }
    payload = {
        "bag_id": bag.bag_id,
        "predicted_class": int(np.argmax(probs)),
        "distances": {s: sem_dist[s] for s in semantics},
        "weights": {s: detail.weights[s] for s in semantics + ("PIs",)},
        "instances": [
            {
                "index": i,
                "cluster": int(detail.cluster_of_instance[i]),
                "semantic": detail.instance_map[i],
            }
            for i in range(bag.m)
        ],
    }
    out_dir = Path(cfg.paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"explain_{bag.bag_id:06d}.json"
    out_path.write_text(json.dumps(payload, indent=2) + "\n")
    _say(args, json.dumps(payload))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load(args)
    bags = fileio.read_dataset(cfg.paths.dataset_dir)
    prototypes = _load_prototypes(cfg)
    out_dir = Path(cfg.paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows, medians = evaluation.run_ablation(bags, prototypes, cfg.train)
    records = []
    for row in rows:
        rec = {"variant": row["variant"], "seed": row["seed"],
               "status": row["status"]}
        if row["status"] == "ok":
            rec.update(row["report"].to_dict())
        else:
            rec["error"] = row["error"]
        records.append(rec)
    fileio.write_jsonl(out_dir / "ablation.jsonl", records)
    (out_dir / "ablation_medians.json").write_text(
        json.dumps(medians, indent=2) + "\n"
    )
    _say(args, evaluation.format_report_table(rows, medians))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _load(args) if args.config else None
    train_cfg = cfg.train if cfg else model.TrainConfig()
    if args.seed is not None and cfg is None:
        train_cfg = replace(train_cfg, seed=args.seed)
    # self-generated tiny bag keeps the check fast and self-contained
    synth_cfg = synth.SynthConfig(
        n_in=12, m_min=18, m_max=24, p=8, seed=train_cfg.seed,
    )
    bag = synth.make_bag(synth_cfg, bag_id=0)
    prototypes = synth.sample_prototypes(synth_cfg)
    small = replace(train_cfg, num_frequencies=48, r=3)
    params = model.init_params(synth_cfg.n_in, synth_cfg.C, small)
    freqs = evaluation.eval_freqs(small, params.n_feat)
    result = model.gradient_check(
        bag, bag.label, params, prototypes, freqs, small,
        n_coords=args.coords, seed=small.seed,
        corrupt_block=args.corrupt_block,
    )
    payload = {k: v for k, v in result.items() if k != "reports"}
    out_dir = Path(cfg.paths.out_dir) if cfg else Path(args.out or "out")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "gradcheck.json").write_text(json.dumps(payload, indent=2) + "\n")
    _say(args, json.dumps(payload, indent=2))
    return EXIT_OK if result["passed"] else EXIT_CONTRACT


def build_parser() -> _Parser:
    parser = _Parser(prog="protomil")
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--seed", type=int, help="override config seeds")
    parser.add_argument("--quiet", action="store_true",
                        help="suppress stdout tables")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", help="generate a synthetic dataset")
    sub.add_parser("train", help="train a model on a dataset")
    sub.add_parser("eval", help="evaluate a checkpoint")
    p_explain = sub.add_parser("explain", help="per-instance semantic map")
    p_explain.add_argument("bag_id", type=int)
    sub.add_parser("ablate", help="run the ablation grid")
    p_grad = sub.add_parser("gradcheck", help="verify the gradient contract")
    p_grad.add_argument("--coords", type=int, default=60)
    p_grad.add_argument("--corrupt-block", dest="corrupt_block",
                        help=argparse.SUPPRESS)
    return parser


_COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "explain": cmd_explain,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    needs_config = args.command != "gradcheck"
    if needs_config and not args.config:
        print("--config is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (ConfigError, IoError, NotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProtomilError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
