"""Command-line entry point wiring the full workflow:

  gen-corpus -> train-teacher -> train-student -> calibrate -> score
             -> evaluate / localize / plot

Every command resolves its configuration (defaults < --config JSON file <
flags), writes a run_config.json snapshot next to its outputs, and refuses to
overwrite existing outputs unless --overwrite is given. Errors print one
machine-parsable line on stderr: "error: <ErrorClass>: <message>".
Exit codes: 0 ok, 1 validation/runtime failure, 2 usage (missing inputs).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .anomaly import CalibrationStats, calibrate_ds, score_manifest
from .audio import FrontendConfig
from .backbone import BackboneConfig, load_checkpoint, save_checkpoint
from .corpus import ANOMALY_KINDS, SyntheticCorpusConfig, generate_synthetic_corpus
from .errors import ConfigError, SpoofKitError
from .features import cache_dir_from_env
from .localization import evaluate_pairs, load_pairs
from .manifest import load_manifest, select_calibration, write_manifest
from .metrics import (
    dump_distributions,
    evaluate,
    load_scored_set,
    write_histogram_csv,
    write_report,
    write_roc_csv,
    write_scored_set,
)
from .tensorio import read_tensor, write_json, write_png_gray
from .training import TrainConfig, train_student, train_teacher

USAGE_EXIT = 2
ERROR_EXIT = 1


class _Usage(Exception):
    pass


def _require_file(path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise _Usage(f"{what} not found: {path}")
    return path


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    data = json.loads(_require_file(path, "config file").read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a JSON object")
    return data


def _section(cfg_file: dict, name: str) -> dict:
    section = cfg_file.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return dict(section)


def _frontend_from(cfg_file: dict) -> FrontendConfig:
    return FrontendConfig.from_dict({**FrontendConfig().to_dict(), **_section(cfg_file, "frontend")})


def _backbone_from(cfg_file: dict) -> BackboneConfig:
    return BackboneConfig.from_dict({**BackboneConfig().to_dict(), **_section(cfg_file, "backbone")})


def _train_from(cfg_file: dict, args) -> TrainConfig:
    merged = {**TrainConfig().to_dict(), **_section(cfg_file, "train")}
    for flag, key in (
        ("epochs", "max_epochs"),
        ("patience", "early_stop_patience"),
        ("batch_size", "batch_size"),
        ("lr", "learning_rate"),
        ("weight_decay", "weight_decay"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            merged[key] = value
    if args.seed is not None:
        merged["seed"] = args.seed
    return TrainConfig.from_dict(merged)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _guard_outputs(paths: list[Path], overwrite: bool):
    existing = [str(p) for p in paths if p.exists()]
    if existing and not overwrite:
        raise ConfigError(f"refusing to overwrite {existing[0]} (pass --overwrite)")


def _snapshot(out: Path, command: str, payload: dict, args):
    path = out / "run_config.json"
    _guard_outputs([path], args.overwrite)
    write_json(path, {
        "command": command,
        "version": __version__,
        "seed": args.seed,
        "workers": args.workers,
        **payload,
    })


# -- commands -----------------------------------------------------------------


def cmd_gen_corpus(args) -> int:
    out = _out_dir(args)
    cfg_file = _load_config_file(args.config)
    frontend = _frontend_from(cfg_file)
    kinds = tuple(args.kinds.split(",")) if args.kinds else ANOMALY_KINDS
    config = SyntheticCorpusConfig(
        n_speakers=args.speakers,
        clips_per_speaker=args.clips_per_speaker,
        clip_seconds=args.clip_seconds,
        anomaly_kinds=kinds,
        seed=args.seed if args.seed is not None else 0,
        frontend=frontend,
    )
    outputs = [out / "manifest.jsonl", out / "anomalies.jsonl", out / "pairs.jsonl"]
    _guard_outputs(outputs, args.overwrite)
    _snapshot(out, "gen-corpus", {
        "corpus": {
            "n_speakers": config.n_speakers,
            "clips_per_speaker": config.clips_per_speaker,
            "clip_seconds": config.clip_seconds,
            "anomaly_kinds": list(config.anomaly_kinds),
            "seed": config.seed,
        },
        "frontend": frontend.to_dict(),
    }, args)
    manifest = generate_synthetic_corpus(config, out)
    print(f"wrote {len(manifest)} entries under {out}")
    return 0


def _split_manifests(manifest_path, train_split="train", dev_split="dev"):
    manifest = load_manifest(_require_file(manifest_path, "manifest"))
    train = manifest.filter_split(train_split)
    dev = manifest.filter_split(dev_split)
    return train, dev


def cmd_train_teacher(args) -> int:
    out = _out_dir(args)
    cfg_file = _load_config_file(args.config)
    frontend = _frontend_from(cfg_file)
    backbone = _backbone_from(cfg_file)
    train_cfg = _train_from(cfg_file, args)
    train_m, dev_m = _split_manifests(args.manifest)
    outputs = [out / "teacher.json", out / "teacher.bin", out / "train_log.jsonl"]
    _guard_outputs(outputs, args.overwrite)
    _snapshot(out, "train-teacher", {
        "frontend": frontend.to_dict(),
        "backbone": backbone.to_dict(),
        "train": train_cfg.to_dict(),
        "manifest": str(Path(args.manifest).resolve()),
    }, args)
    model, log = train_teacher(
        train_m, dev_m, backbone, train_cfg, frontend,
        cache_dir=cache_dir_from_env(), workers=args.workers,
    )
    log.write_jsonl(out / "train_log.jsonl")
    last = log.epochs[-1]
    save_checkpoint(model, out / "teacher", metadata={
        **log.summary(),
        "best_dev_loss": log.epochs[log.best_epoch]["dev_loss"],
        "best_dev_accuracy": log.epochs[log.best_epoch]["dev_accuracy"],
        "seed": train_cfg.seed,
    })
    print(
        f"teacher done: epochs={len(log.epochs)} best={log.best_epoch} "
        f"dev_acc={log.epochs[log.best_epoch]['dev_accuracy']:.3f} (last={last['dev_accuracy']:.3f})"
    )
    return 0


def cmd_train_student(args) -> int:
    out = _out_dir(args)
    cfg_file = _load_config_file(args.config)
    train_cfg = _train_from(cfg_file, args)
    teacher = load_checkpoint(_require_file(args.teacher, "teacher checkpoint"), expected_role="teacher")
    train_m, dev_m = _split_manifests(args.manifest)
    outputs = [out / "student.json", out / "student.bin", out / "train_log.jsonl"]
    _guard_outputs(outputs, args.overwrite)
    _snapshot(out, "train-student", {
        "train": train_cfg.to_dict(),
        "teacher": str(Path(args.teacher).resolve()),
        "manifest": str(Path(args.manifest).resolve()),
    }, args)
    model, log = train_student(
        teacher, train_m, dev_m, train_cfg,
        cache_dir=cache_dir_from_env(), workers=args.workers,
    )
    log.write_jsonl(out / "train_log.jsonl")
    save_checkpoint(model, out / "student", metadata={
        **log.summary(),
        "best_dev_loss": log.epochs[log.best_epoch]["dev_loss"],
        "teacher_fingerprint": teacher.fingerprint(),
        "init_from_teacher": train_cfg.student_init_from_teacher,
        "seed": train_cfg.seed,
    })
    print(
        f"student done: epochs={len(log.epochs)} best={log.best_epoch} "
        f"dev_fpm_loss={log.epochs[log.best_epoch]['dev_loss']:.6f}"
    )
    return 0


def _load_pair_models(args):
    teacher = load_checkpoint(_require_file(args.teacher, "teacher checkpoint"), expected_role="teacher")
    student = load_checkpoint(_require_file(args.student, "student checkpoint"), expected_role="student")
    return teacher, student


def cmd_calibrate(args) -> int:
    out = _out_dir(args)
    teacher, student = _load_pair_models(args)
    manifest = load_manifest(_require_file(args.manifest, "calibration manifest"))
    if args.num_calib is not None:
        manifest = select_calibration(manifest, args.num_calib, args.seed if args.seed is not None else 0)
    else:
        manifest = manifest.filter_split(args.split) if args.split else manifest.filter_split("calib")
        if len(manifest) == 0:
            raise ConfigError(
                "no calibration entries in that split; pass --split or sample with --num-calib"
            )
    outputs = [out / "calibration.json", out / "calibration_manifest.jsonl"]
    _guard_outputs(outputs, args.overwrite)
    _snapshot(out, "calibrate", {
        "teacher": str(Path(args.teacher).resolve()),
        "student": str(Path(args.student).resolve()),
        "manifest": str(Path(args.manifest).resolve()),
        "split": args.split,
        "num_calib": args.num_calib,
        "seed": args.seed,
    }, args)
    stats = calibrate_ds(teacher, student, manifest, cache_dir=cache_dir_from_env(), workers=args.workers)
    stats.save(out / "calibration.json")
    write_manifest(manifest, out / "calibration_manifest.jsonl")
    print(
        "calibration done: mu=" + ",".join(f"{m:.4g}" for m in stats.mu)
        + " sigma=" + ",".join(f"{s:.4g}" for s in stats.sigma)
    )
    return 0


def cmd_score(args) -> int:
    out = _out_dir(args)
    teacher, student = _load_pair_models(args)
    manifest = load_manifest(_require_file(args.manifest, "manifest"))
    if args.split:
        manifest = manifest.filter_split(args.split)
    stats = CalibrationStats.load(_require_file(args.calibration, "calibration file")) if args.calibration else None
    outputs = [out / "scores.jsonl"]
    _guard_outputs(outputs, args.overwrite)
    _snapshot(out, "score", {
        "teacher": str(Path(args.teacher).resolve()),
        "student": str(Path(args.student).resolve()),
        "manifest": str(Path(args.manifest).resolve()),
        "split": args.split,
        "calibration": str(Path(args.calibration).resolve()) if args.calibration else None,
        "fusion": args.fusion,
        "save_maps": bool(args.save_maps),
    }, args)
    rows = score_manifest(
        teacher, student, manifest, stats,
        fusion=args.fusion, cache_dir=cache_dir_from_env(), workers=args.workers,
        map_dir=(out / "maps") if args.save_maps else None,
    )
    write_scored_set(rows, out / "scores.jsonl")
    print(f"scored {len(rows)} clips -> {out / 'scores.jsonl'}")
    return 0


def cmd_evaluate(args) -> int:
    out = _out_dir(args)
    scored = load_scored_set(_require_file(args.scores, "scores file"))
    outputs = [out / "report.json", out / "roc_points.csv", out / "score_histogram.csv"]
    _guard_outputs(outputs, args.overwrite)
    _snapshot(out, "evaluate", {"scores": str(Path(args.scores).resolve())}, args)
    report = evaluate(scored)
    write_report(report, out / "report.json")
    write_roc_csv(report, out / "roc_points.csv")
    write_histogram_csv(dump_distributions(scored), out / "score_histogram.csv")
    print(f"auc={report.auc:.4f} eer={report.eer:.4f} (threshold={report.eer_threshold:.6g})")
    return 0


def cmd_localize(args) -> int:
    out = _out_dir(args)
    teacher, student = _load_pair_models(args)
    pairs = load_pairs(_require_file(args.pairs, "pairs manifest"))
    stats = CalibrationStats.load(_require_file(args.calibration, "calibration file")) if args.calibration else None
    outputs = [out / "localization.jsonl", out / "localization_summary.json"]
    _guard_outputs(outputs, args.overwrite)
    _snapshot(out, "localize", {
        "teacher": str(Path(args.teacher).resolve()),
        "student": str(Path(args.student).resolve()),
        "pairs": str(Path(args.pairs).resolve()),
        "calibration": str(Path(args.calibration).resolve()) if args.calibration else None,
        "save_maps": bool(args.save_maps),
    }, args)
    reports, summary = evaluate_pairs(
        teacher, student, pairs, stats,
        map_dir=(out / "maps") if args.save_maps else None,
    )
    with (out / "localization.jsonl").open("w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    write_json(out / "localization_summary.json", summary)
    ratio = summary["mean_energy_ratio"]
    print(f"localized {summary['n_pairs']} pairs, mean energy ratio "
          + (f"{ratio:.3f}" if ratio is not None else "n/a"))
    return 0


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = _out_dir(args)
    made = []
    if args.scores:
        scored = load_scored_set(_require_file(args.scores, "scores file"))
        report = evaluate(scored)
        roc_path, hist_path = out / "roc.png", out / "score_distributions.png"
        _guard_outputs([roc_path, hist_path], args.overwrite)

        fig, ax = plt.subplots(figsize=(4, 4))
        xs = [p[0] for p in report.roc_points]
        ys = [p[1] for p in report.roc_points]
        ax.plot(xs, ys, label=f"AUC={report.auc:.3f}")
        ax.plot([0, 1], [0, 1], linestyle="--", linewidth=0.8, color="gray")
        ax.set_xlabel("False positive rate")
        ax.set_ylabel("True positive rate")
        ax.legend(loc="lower right")
        fig.tight_layout()
        fig.savefig(roc_path)
        plt.close(fig)

        dist = dump_distributions(scored)
        edges = np.asarray(dist["bin_edges"])
        mids = 0.5 * (edges[:-1] + edges[1:])
        width = edges[1] - edges[0]
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.bar(mids, dist["real_counts"], width=width, alpha=0.6, label="real")
        ax.bar(mids, dist["fake_counts"], width=width, alpha=0.6, label="fake")
        ax.set_xlabel("anomaly score")
        ax.set_ylabel("count")
        ax.legend()
        fig.tight_layout()
        fig.savefig(hist_path)
        plt.close(fig)
        made += [roc_path, hist_path]

    for tensor in args.map or []:
        arr, header = read_tensor(_require_file(tensor, "map tensor"))
        png = out / (Path(tensor).stem + ".png")
        _guard_outputs([png], args.overwrite)
        scaling = write_png_gray(png, arr)
        write_json(png.with_suffix(".png.json"), {**header, **scaling})
        made.append(png)

    if not made:
        raise _Usage("plot needs --scores and/or --map inputs")
    _snapshot(out, "plot", {
        "scores": str(Path(args.scores).resolve()) if args.scores else None,
        "maps": [str(Path(m).resolve()) for m in (args.map or [])],
    }, args)
    print("wrote " + ", ".join(str(p) for p in made))
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fpm-spoof",
        description="One-class speech deepfake detection with anomaly localization",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (sections: frontend, backbone, train)")
    common.add_argument("--seed", type=int, default=None, help="seed override")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--workers", type=int, default=1, help="data-loading parallelism cap")
    common.add_argument("--overwrite", action="store_true", help="replace existing outputs")

    p = sub.add_parser("gen-corpus", parents=[common], help="generate the synthetic desk-scale corpus")
    p.add_argument("--speakers", type=int, default=4)
    p.add_argument("--clips-per-speaker", type=int, default=8)
    p.add_argument("--clip-seconds", type=float, default=4.0)
    p.add_argument("--kinds", help=f"comma-separated anomaly kinds (default: all of {', '.join(ANOMALY_KINDS)})")
    p.set_defaults(func=cmd_gen_corpus)

    train_common = argparse.ArgumentParser(add_help=False)
    train_common.add_argument("--epochs", type=int, default=None, help="max epochs override")
    train_common.add_argument("--patience", type=int, default=None)
    train_common.add_argument("--batch-size", type=int, default=None)
    train_common.add_argument("--lr", type=float, default=None)
    train_common.add_argument("--weight-decay", type=float, default=None)

    p = sub.add_parser("train-teacher", parents=[common, train_common], help="speaker-ID teacher training")
    p.add_argument("--manifest", required=True, help="manifest with train/dev splits (real speech)")
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("train-student", parents=[common, train_common], help="feature-matching student training")
    p.add_argument("--manifest", required=True)
    p.add_argument("--teacher", required=True, help="teacher checkpoint (.json or stem)")
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("calibrate", parents=[common], help="compute discrepancy-scaling statistics")
    p.add_argument("--manifest", required=True, help="real-speech calibration manifest")
    p.add_argument("--split", default=None, help="split to calibrate on (default: calib)")
    p.add_argument("--teacher", required=True)
    p.add_argument("--student", required=True)
    p.add_argument("--num-calib", type=int, default=None,
                   help="sample this many real entries from the manifest (seeded)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("score", parents=[common], help="score clips (higher = more likely fake)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default=None, help="restrict to one split (e.g. eval)")
    p.add_argument("--teacher", required=True)
    p.add_argument("--student", required=True)
    p.add_argument("--calibration", default=None, help="calibration.json enabling DS")
    p.add_argument("--fusion", default="mean", choices=["mean", "product"])
    p.add_argument("--save-maps", action="store_true",
                   help="export per-segment anomaly maps as portable tensors under <out>/maps/")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", parents=[common], help="ROC/AUC/EER report from a scores file")
    p.add_argument("--scores", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("localize", parents=[common], help="localization metrics on real/fake pairs")
    p.add_argument("--pairs", required=True, help="pairs manifest (real_path/fake_path/source)")
    p.add_argument("--teacher", required=True)
    p.add_argument("--student", required=True)
    p.add_argument("--calibration", default=None)
    p.add_argument("--save-maps", action="store_true",
                   help="export predicted/real/ground-truth maps under <out>/maps/")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("plot", parents=[common], help="static figures: ROC, histograms, heatmaps")
    p.add_argument("--scores", default=None)
    p.add_argument("--map", action="append", help="portable tensor file to render (repeatable)")
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _Usage as exc:
        print(f"error: UsageError: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except FileNotFoundError as exc:
        print(f"error: FileNotFoundError: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except SpoofKitError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return ERROR_EXIT
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return ERROR_EXIT


if __name__ == "__main__":
    sys.exit(main())
