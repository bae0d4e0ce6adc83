"""Command-line entry point: synth, train, infer, eval, proxy-eval, ablate, plot.

All randomness flows from the per-invocation ``--seed``; sub-seeds are
derived with :func:`pointtal.trainer.derive_seed`. Exit codes: 0 success,
2 usage error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import datamodel, evaluation, experiments, network, synthgen, trainer
from .inference import InferConfig


def _parse_grid(spec: str):
    parts = [float(x) for x in spec.split(":")]
    if len(parts) == 1:
        return (round(parts[0], 10),)
    start, stop, step = parts if len(parts) == 3 else (parts[0], parts[1], 0.1)
    grid = []
    x = start
    while x <= stop + 1e-9:
        grid.append(round(x, 10))
        x += step
    return tuple(grid)


def _load_train_config(args, data_dir) -> trainer.TrainConfig:
    obj = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as f:
            obj = json.load(f)
    for key in ("steps", "batch_size", "learning_rate"):
        val = getattr(args, key, None)
        if val is not None:
            obj[key] = val
    if getattr(args, "seed", None) is not None:
        obj["seed"] = args.seed
        obj.setdefault("net", {}).pop("seed", None)
    net = obj.setdefault("net", {})
    net.setdefault("seed", obj.get("seed", 0))
    # shapes come from the dataset unless pinned in the config file
    manifest = datamodel.read_manifest(Path(data_dir) / "manifest.json")
    net.setdefault("C", manifest.C)
    if "D" not in net:
        first = datamodel.read_features(
            Path(data_dir) / "features" / f"{manifest.videos[0]}.feat"
        )
        net["D"] = first.D
    return trainer.config_from_dict(obj)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    if args.strategy == "file":
        raise ValueError("synth cannot use the file strategy; it only ingests annotations")
    spec = synthgen.SynthSpec(
        num_videos=args.videos,
        T_range=(args.t_min, args.t_max),
        D=args.dim,
        C=args.classes,
        instances_per_video_range=(args.instances_min, args.instances_max),
        instance_length_range=(args.len_min, args.len_max),
        class_signal_strength=args.strength,
        noise_std=args.noise,
        temporal_ramp=not args.no_ramp,
        seed=args.seed,
        video_offset=args.video_offset,
    )
    strategy = synthgen.PointStrategy(
        kind=args.strategy, gaussian_sigma_fraction=args.sigma_fraction
    )
    synthgen.write_dataset(args.out, spec, strategy)
    print(f"wrote {args.videos} videos to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = _load_train_config(args, args.data)
    bundle = datamodel.load_dataset_dir(args.data)
    _, report = trainer.train(bundle, config, out_dir=args.out)
    last = report.records[-1] if report.records else {}
    print(
        f"trained {config.steps} steps in {report.wall_clock_sec:.1f}s, "
        f"final total loss {last.get('total', float('nan')):.4f}, "
        f"checkpoint at {report.checkpoint_path}"
    )
    return 0


def _infer_config(args) -> InferConfig:
    kwargs = {}
    if args.thresholds:
        kwargs["thresholds"] = tuple(float(x) for x in args.thresholds.split(","))
    return InferConfig(
        softnms_sigma=args.sigma,
        softnms_min_score=args.min_score,
        top_k=args.top_k,
        **kwargs,
    )


def cmd_infer(args) -> int:
    model, _ = network.load_checkpoint(args.checkpoint)
    bundle = datamodel.load_dataset_dir(args.data)
    preds = experiments.predict_bundle(model, bundle, _infer_config(args))
    datamodel.write_predictions(preds, args.out)
    n = sum(len(v) for v in preds.values())
    print(f"wrote {n} proposals for {len(preds)} videos to {args.out}")
    return 0


def cmd_eval(args) -> int:
    preds = datamodel.read_predictions(args.pred)
    gt_map = datamodel.read_ground_truth(args.gt)
    proposals = [p for props in preds.values() for p in props]
    gt = [g for gs in gt_map.values() for g in gs]
    result = evaluation.mean_ap(proposals, gt, iou_grid=_parse_grid(args.iou))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(result, f, indent=2)
            f.write("\n")
    if args.json:
        print(json.dumps(result))
    else:
        thrs = list(result["per_threshold"])
        print("IoU     " + "".join(f"{t:>8.2f}" for t in thrs))
        print("mAP(%)  " + "".join(f"{100 * result['per_threshold'][t]:>8.1f}" for t in thrs))
        for band, val in result["bands"].items():
            print(f"AVG[{band}]  {100 * val:.1f}")
    return 0


def cmd_proxy_eval(args) -> int:
    model, _ = network.load_checkpoint(args.checkpoint)
    bundle = datamodel.load_dataset_dir(args.data)
    if not bundle.gt:
        raise ValueError(f"{args.data} has no gt.jsonl; proxy evaluation needs instances")
    metrics = trainer.evaluate_proxy(
        model, bundle.features, bundle.gt, seed=args.seed, repeats=args.repeats
    )
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(metrics, f, indent=2)
            f.write("\n")
    if args.json:
        print(json.dumps(metrics))
    else:
        for k, v in metrics.items():
            print(f"{k}: {v:.4f}" if isinstance(v, float) else f"{k}: {v}")
    return 0


def cmd_ablate(args) -> int:
    config = _load_train_config(args, args.train_data)
    train_bundle = datamodel.load_dataset_dir(args.train_data)
    test_bundle = datamodel.load_dataset_dir(args.test_data)
    matrix = experiments.ablate(
        train_bundle,
        test_bundle,
        axis=args.axis,
        base_config=config,
        num_seeds=args.seeds,
        aux_weight=args.aux_weight,
    )
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(matrix, f, indent=2)
        f.write("\n")
    md = experiments.ablation_markdown(matrix)
    if args.markdown:
        with open(args.markdown, "w", encoding="utf-8") as f:
            f.write(md)
    print(md, end="")
    return 0


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    made = []
    if args.report:
        steps, curves = [], {}
        with open(args.report, "r", encoding="utf-8") as f:
            for line in f:
                rec = json.loads(line)
                if "proxy" in rec:
                    continue
                steps.append(rec["step"])
                for key in ("act", "bkg", "contra", "ac", "aou", "aru", "total"):
                    curves.setdefault(key, []).append(rec[key])
        fig, ax = plt.subplots(figsize=(8, 5))
        for key, vals in curves.items():
            ax.plot(steps, vals, label=key, linewidth=2 if key == "total" else 1)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(ncol=4, fontsize=8)
        fig.savefig(out / "loss_curves.png", dpi=120)
        plt.close(fig)
        made.append("loss_curves.png")
    if args.ablate:
        with open(args.ablate, "r", encoding="utf-8") as f:
            matrix = json.load(f)
        xs = [", ".join(f"{v}" for v in row["setup"].values()) for row in matrix["rows"]]
        fig, ax = plt.subplots(figsize=(8, 5))
        for band in matrix["rows"][0]["map_bands"]:
            ys = [100 * row["map_bands"][band] for row in matrix["rows"]]
            ax.plot(range(len(xs)), ys, marker="o", label=f"AVG[{band}]")
        ax.set_xticks(range(len(xs)), xs, rotation=30, ha="right", fontsize=8)
        ax.set_xlabel(matrix["axis"])
        ax.set_ylabel("mAP (%)")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / f"map_vs_{matrix['axis']}.png", dpi=120)
        plt.close(fig)
        made.append(f"map_vs_{matrix['axis']}.png")
    if not made:
        raise ValueError("nothing to plot: pass --report and/or --ablate")
    print(f"wrote {', '.join(made)} to {out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pointtal",
        description="Point-supervised temporal action localization toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--videos", type=int, default=20)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--t-min", type=int, default=55)
    p.add_argument("--t-max", type=int, default=80)
    p.add_argument("--instances-min", type=int, default=2)
    p.add_argument("--instances-max", type=int, default=4)
    p.add_argument("--len-min", type=int, default=8)
    p.add_argument("--len-max", type=int, default=12)
    p.add_argument("--strength", type=float, default=2.0)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--no-ramp", action="store_true")
    p.add_argument("--strategy", choices=["uniform", "center", "gaussian"], default="gaussian")
    p.add_argument("--sigma-fraction", type=float, default=1.0 / 6.0)
    p.add_argument(
        "--video-offset", type=int, default=0,
        help="offset into the per-seed video stream; same seed + different "
        "offsets gives splits with shared class geometry and disjoint videos",
    )
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file mirroring TrainConfig")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="generate proposals from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--thresholds", help="comma-separated ascending thresholds")
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--min-score", type=float, default=0.001)
    p.add_argument("--top-k", type=int, default=200)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="mAP over an IoU grid")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--iou", default="0.1:0.7:0.1")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out", help="also write results JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("proxy-eval", help="score the auxiliary heads on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--json", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_proxy_eval)

    p = sub.add_parser("ablate", help="run an ablation axis and emit a results matrix")
    p.add_argument("--train-data", required=True)
    p.add_argument("--test-data", required=True)
    p.add_argument("--axis", choices=list(experiments.AXES), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--markdown")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--aux-weight", type=float, default=0.5)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="render loss curves / ablation plots")
    p.add_argument("--report")
    p.add_argument("--ablate")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def run(argv) -> int:
    """Entry point returning an exit code (0 ok, 2 usage, 1 runtime error)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
