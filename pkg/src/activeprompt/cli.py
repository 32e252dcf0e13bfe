"""Command-line harness: data generation, training, fitting, benchmarking,
serving, and report formatting.

Every subcommand is flag-driven and deterministic for fixed seeds. Exit
codes: 0 success, 1 missing/unreadable files, 2 bad arguments (for
example an unknown strategy name).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .acquisition import STRATEGY_NAMES, StrategyKind
from .backbone import ToyBackbone
from .core import BinaryMask, iou
from .head import (
    HeadConfig,
    fit_laplace,
    load_head,
    load_posterior,
    save_head,
    save_posterior,
    train_map,
)
from .metrics import (
    BenchRun,
    ReportRow,
    aggregate_report,
    report_from_csv,
    report_to_csv,
)
from .session import StopConfig, run_session
from .synth import (
    PROFILES,
    SceneRecord,
    SceneSpec,
    TrainingExample,
    discover_datasets,
    generate_scene,
    generate_training_prompt_sets,
    write_scene_dir,
)

# scene seeds and prompt-set seeds are derived with distinct multipliers so
# the streams never collide across scene indices
_SCENE_SEED_STEP = 1_000_003
_PROMPT_SEED_STEP = 7_919


def _fail(msg: str, code: int) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def cmd_gen_data(args) -> int:
    scenes = []
    for i in range(args.scenes):
        spec = SceneSpec(
            profile=args.profile,
            size=args.size,
            seed=args.seed * _SCENE_SEED_STEP + i,
        )
        scenes.append(generate_scene(spec))
    write_scene_dir(args.out, scenes)
    print(f"wrote {args.scenes} {args.profile} scenes to {args.out}")
    return 0


def _training_examples(records: list[SceneRecord], seed: int):
    """Six prompt-set examples per scene, keyed by split."""
    by_split: dict[str, list[TrainingExample]] = {"train": [], "val": [], "test": []}
    for i, rec in enumerate(records):
        sets = generate_training_prompt_sets(
            rec.image, rec.gt_mask, seed=seed * _PROMPT_SEED_STEP + i
        )
        for ps in sets:
            by_split[rec.split].append(TrainingExample(rec.image, ps, rec.gt_mask))
    return by_split


def _load_all_scenes(data_dir) -> list[SceneRecord]:
    datasets = discover_datasets(data_dir)
    out = []
    for name in sorted(datasets):
        out.extend(datasets[name])
    return out


def cmd_train_head(args) -> int:
    data = Path(args.data)
    if not data.exists():
        return _fail(f"data directory {data} not found", 1)
    config = HeadConfig(
        hidden_channels=tuple(int(c) for c in args.hidden.split(",") if c),
        kernel_size=args.kernel_size,
        dropout_rate=args.dropout,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        patience=args.patience,
        min_delta=args.min_delta,
        max_epochs=args.max_epochs,
        seed=args.seed,
    )
    records = _load_all_scenes(data)
    splits = _training_examples(records, args.seed)
    if not splits["train"] or not splits["val"]:
        return _fail("dataset has an empty train or val split", 1)
    backbone = ToyBackbone()
    params, record = train_map(splits["train"], splits["val"], backbone, config)
    save_head(params, args.out)
    best = max(record.val_iou) if record.val_iou else float("nan")
    print(
        f"trained {len(params.theta)} params for {record.stop_epoch} epochs "
        f"({record.stop_reason}); best val IoU {best:.4f}; saved to {args.out}"
    )
    return 0


def cmd_fit_laplace(args) -> int:
    head_path = Path(args.head)
    data = Path(args.data)
    if not head_path.exists():
        return _fail(f"head file {head_path} not found", 1)
    if not data.exists():
        return _fail(f"data directory {data} not found", 1)
    params = load_head(head_path)
    records = _load_all_scenes(data)
    examples = _training_examples(records, args.seed)["train"]
    if not examples:
        return _fail("no training examples in data directory", 1)
    rng = np.random.default_rng(args.seed)
    take = min(args.subset, len(examples))
    chosen = [examples[i] for i in sorted(rng.choice(len(examples), take, replace=False))]
    posterior = fit_laplace(
        params,
        chosen,
        ToyBackbone(),
        prior_precision=args.prior_precision,
        seed=args.seed,
    )
    save_posterior(posterior, args.out)
    print(
        f"fitted Laplace posterior over {take} examples "
        f"(prior precision {args.prior_precision}); saved to {args.out}"
    )
    return 0


def run_benchmark(
    datasets: dict[str, list[SceneRecord]],
    posterior,
    strategies: list[str],
    budget: int,
    tau_mi: float,
    samples_k: int,
    seeds: list[int],
    backbone=None,
    replay_dirs: dict[str, Path] | None = None,
) -> list[BenchRun]:
    """Reference-then-matched protocol over every (dataset, scene, seed).

    The disagreement strategy runs free with its stop rules; every other
    requested strategy then runs exactly as many iterations (clamped to at
    least one). Without "bald" in the list, strategies run matched to the
    budget flag.
    """
    backbone = backbone if backbone is not None else ToyBackbone()
    runs: list[BenchRun] = []
    empty_cache: dict[tuple[int, int], BinaryMask] = {}
    for ds_name in sorted(datasets):
        for scene_idx, rec in enumerate(datasets[ds_name]):
            shape = rec.gt_mask.shape
            if shape not in empty_cache:
                empty_cache[shape] = BinaryMask.empty(*shape)
            iou0 = iou(empty_cache[shape], rec.gt_mask)
            for seed in seeds:
                session_seed = seed * _SCENE_SEED_STEP + scene_idx
                t_matched = budget
                if "bald" in strategies:
                    traj = run_session(
                        rec.image,
                        rec.gt_mask,
                        StrategyKind("bald"),
                        posterior,
                        StopConfig(tau_mi=tau_mi, tau_ent=None, budget=budget),
                        seed=session_seed,
                        backbone=backbone,
                        samples_k=samples_k,
                    )
                    runs.append(
                        BenchRun(ds_name, "bald", seed, rec.scene_id, traj, iou0)
                    )
                    t_matched = max(1, len(traj.records))
                matched_config = StopConfig(tau_mi=None, tau_ent=None, budget=t_matched)
                for name in strategies:
                    if name == "bald":
                        continue
                    if name == "human_replay":
                        log = (replay_dirs or {}).get(ds_name, Path(".")) / (
                            rec.scene_id + ".jsonl"
                        )
                        strategy = StrategyKind("human_replay", replay_path=log)
                    else:
                        strategy = StrategyKind(name)
                    traj = run_session(
                        rec.image,
                        rec.gt_mask,
                        strategy,
                        posterior if strategy.uses_ensemble else None,
                        matched_config,
                        seed=session_seed,
                        backbone=backbone,
                        samples_k=samples_k,
                    )
                    runs.append(
                        BenchRun(ds_name, name, seed, rec.scene_id, traj, iou0)
                    )
    return runs


def write_bench_outputs(runs: list[BenchRun], out_csv) -> None:
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    traj_dir = out_csv.parent / "trajectories"
    traj_dir.mkdir(exist_ok=True)
    for run in runs:
        name = f"{run.dataset}__{run.image_id}__{run.strategy}__seed{run.seed}.jsonl"
        (traj_dir / name).write_text(run.trajectory.to_jsonl())
    out_csv.write_text(report_to_csv(aggregate_report(runs)))


def cmd_bench(args) -> int:
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    if not strategies:
        return _fail("no strategies given", 2)
    for s in strategies:
        if s not in STRATEGY_NAMES:
            return _fail(f"unknown strategy {s!r}", 2)
    data = Path(args.data)
    posterior_path = Path(args.posterior)
    if not data.exists():
        return _fail(f"data directory {data} not found", 1)
    if not posterior_path.exists():
        return _fail(f"posterior file {posterior_path} not found", 1)
    datasets = discover_datasets(data)
    replay_dirs = {}
    if "human_replay" in strategies:
        for ds_name in datasets:
            rd = (data / ds_name / "replays") if (data / ds_name).is_dir() else (
                data / "replays"
            )
            if not rd.is_dir():
                return _fail(f"human_replay needs replay logs in {rd}", 1)
            replay_dirs[ds_name] = rd
    posterior = load_posterior(posterior_path)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    runs = run_benchmark(
        datasets,
        posterior,
        strategies,
        budget=args.budget,
        tau_mi=args.tau_mi,
        samples_k=args.samples,
        seeds=seeds,
        replay_dirs=replay_dirs or None,
    )
    write_bench_outputs(runs, args.out)
    print(f"benchmarked {len(runs)} sessions; report at {args.out}")
    return 0


_METRIC_COLS = (
    ("peak", "peak_mean", "peak_std"),
    ("mean/iter", "meaniter_mean", "meaniter_std"),
    ("auc", "auc_mean", "auc_std"),
    ("final IoU", "final_iou_mean", "final_iou_std"),
)


def format_markdown_report(rows: list[ReportRow]) -> str:
    """Per-dataset tables with best (bold) and second-best (italic) marks."""
    by_dataset: dict[str, list[ReportRow]] = {}
    for r in rows:
        by_dataset.setdefault(r.dataset, []).append(r)
    lines = []
    for dataset in sorted(by_dataset):
        drows = sorted(by_dataset[dataset], key=lambda r: r.strategy)
        ranks = {}
        for _, mean_col, _ in _METRIC_COLS:
            ordered = sorted(
                drows, key=lambda r: (-getattr(r, mean_col), r.strategy)
            )
            ranks[mean_col] = {r.strategy: i for i, r in enumerate(ordered)}
        lines.append(f"## {dataset}")
        lines.append("")
        header = "| strategy | " + " | ".join(m[0] for m in _METRIC_COLS) + " |"
        lines.append(header)
        lines.append("|" + "---|" * (len(_METRIC_COLS) + 1))
        for r in drows:
            cells = [r.strategy]
            for _, mean_col, std_col in _METRIC_COLS:
                text = f"{getattr(r, mean_col):.4f} ± {getattr(r, std_col):.4f}"
                rank = ranks[mean_col][r.strategy]
                if rank == 0:
                    text = f"**{text}**"
                elif rank == 1:
                    text = f"*{text}*"
                cells.append(text)
            lines.append("| " + " | ".join(cells) + " |")
        lines.append("")
    return "\n".join(lines)


def cmd_report(args) -> int:
    path = Path(args.infile)
    if not path.exists():
        return _fail(f"report file {path} not found", 1)
    try:
        rows = report_from_csv(path.read_text())
    except Exception as exc:
        return _fail(f"cannot parse report: {exc}", 1)
    if args.format == "csv":
        sys.stdout.write(report_to_csv(rows))
    else:
        sys.stdout.write(format_markdown_report(rows) + "\n")
    return 0


def build_store(data_dir, posterior_path, samples_k: int = 30):
    """Assemble the service store from on-disk artifacts."""
    from .service import DatasetItem, EngineStore

    datasets = {}
    for ds_name, records in discover_datasets(data_dir).items():
        datasets[ds_name] = {
            rec.scene_id: DatasetItem(ds_name, rec.scene_id, rec.image, rec.gt_mask)
            for rec in records
        }
    posteriors = {}
    if posterior_path is not None:
        p = Path(posterior_path)
        posteriors[p.stem] = load_posterior(p)
    return EngineStore(
        backbone=ToyBackbone(),
        datasets=datasets,
        posteriors=posteriors,
        session_dir=Path(data_dir) / "sessions",
        default_samples_k=samples_k,
    )


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    data = Path(args.data)
    posterior_path = Path(args.posterior)
    if not data.exists():
        return _fail(f"data directory {data} not found", 1)
    if not posterior_path.exists():
        return _fail(f"posterior file {posterior_path} not found", 1)
    store = build_store(data, posterior_path)
    # serve the annotator when its build output sits alongside the cwd
    ui_dir = Path("frontend")
    has_ui = (ui_dir / "index.html").exists() and (ui_dir / "dist").is_dir()
    app = create_app(store, ui_dir=ui_dir if has_ui else None)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="activeprompt",
        description="active prompting engine: data, training, benchmark, service",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic scenes")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile", choices=PROFILES, default="blobs")
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-head", help="MAP-train the probabilistic head")
    p.add_argument("--data", required=True)
    p.add_argument("--hidden", default="16,8")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--kernel-size", type=int, default=3)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--patience", type=int, default=15)
    p.add_argument("--min-delta", type=float, default=1e-4)
    p.add_argument("--max-epochs", type=int, default=100)
    p.set_defaults(func=cmd_train_head)

    p = sub.add_parser("fit-laplace", help="fit the diagonal Laplace posterior")
    p.add_argument("--head", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--subset", type=int, default=100)
    p.add_argument("--prior-precision", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_laplace)

    p = sub.add_parser("bench", help="benchmark strategies on a scene set")
    p.add_argument("--data", required=True)
    p.add_argument("--posterior", required=True)
    p.add_argument("--strategies", default="bald,entropy,random,oracle")
    p.add_argument("--budget", type=int, default=15)
    p.add_argument("--tau-mi", type=float, default=0.01)
    p.add_argument("--samples", type=int, default=30)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="run the HTTP session service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--data", required=True)
    p.add_argument("--posterior", required=True)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report", help="format a benchmark report")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", choices=("csv", "markdown"), default="markdown")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
