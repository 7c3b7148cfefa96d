"""Command-line entry point.

One binary with subcommands:

  synth    generate a synthetic corpus and write train/val/test splits
  train    fit a model and write checkpoint + loss curves
  predict  decode scenes for a feature file with a trained checkpoint
  eval     score predictions against gold scenes, write report.json
  inspect  dump per-shot emissions/marginals/tags for one video
  curves   render a loss-curve CSV to SVG

Values resolve as: built-in default < config file (TOML, --config) < explicit
flag.  Every run writes its fully resolved configuration next to its primary
output, and identical inputs plus an identical seed give byte-identical
outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from fractions import Fraction
from pathlib import Path

import torch

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from . import baselines
from .data import (
    Corpus,
    DataError,
    load_features,
    load_scenes,
    read_scene_file,
    resolve_scenes,
    save_features,
    save_json,
    save_predictions,
    save_report,
    save_scenes,
    strip_categories,
)
from .diffcorr import DiffCorrConfig
from .fusion import EncoderConfig
from .metrics import EvalReport, evaluate
from .scheme import LabelScheme, tags_to_strings
from .synth import SynthConfig, generate_corpus, split_corpus
from .train import (
    CurveLog,
    TrainConfig,
    load_checkpoint,
    predict_corpus,
    save_checkpoint,
    train_osmsl,
    video_tensors,
)

log = logging.getLogger("osmsl")


# ---------------------------------------------------------------------------
# config resolution


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise DataError(f"{path}: invalid TOML ({exc})")


def _resolve(args: argparse.Namespace, file_cfg: dict, name: str, default):
    """flag > config file > default; flags parse with default None."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    if name in file_cfg:
        return file_cfg[name]
    return default


def _resolve_threads(args: argparse.Namespace, file_cfg: dict) -> int:
    explicit = _resolve(args, file_cfg, "threads", None)
    if explicit is not None:
        return int(explicit)
    env = os.environ.get("OSMSL_THREADS")
    return int(env) if env else 1


def _train_config(args: argparse.Namespace, file_cfg: dict) -> TrainConfig:
    base = TrainConfig()
    diffcorr = DiffCorrConfig(**file_cfg.get("diffcorr", {}))
    encoder = EncoderConfig(**file_cfg.get("encoder", {}))
    return TrainConfig(
        seed=int(_resolve(args, file_cfg, "seed", base.seed)),
        epochs=int(_resolve(args, file_cfg, "epochs", base.epochs)),
        batch_size=int(_resolve(args, file_cfg, "batch_size", base.batch_size)),
        lr=float(_resolve(args, file_cfg, "lr", base.lr)),
        clip_norm=float(_resolve(args, file_cfg, "clip_norm", base.clip_norm)),
        threads=_resolve_threads(args, file_cfg),
        mode=_resolve(args, file_cfg, "mode", base.mode),
        hard_mask=bool(_resolve(args, file_cfg, "hard_mask", base.hard_mask)),
        use_visual=bool(_resolve(args, file_cfg, "use_visual", base.use_visual)),
        use_audio=bool(_resolve(args, file_cfg, "use_audio", base.use_audio)),
        lambda_boundary=float(
            _resolve(args, file_cfg, "lambda_boundary", base.lambda_boundary)
        ),
        lambda_class=float(_resolve(args, file_cfg, "lambda_class", base.lambda_class)),
        diffcorr=diffcorr,
        encoder=encoder,
    )


def _record_config(path: Path, subcommand: str, resolved: dict) -> None:
    doc = {"subcommand": subcommand, **resolved}
    save_json(path, doc)


def _parse_fractions(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise DataError(f"--split needs three comma-separated fractions, got {text!r}")
    return tuple(float(Fraction(p.strip())) for p in parts)


def _load_corpus(features: str, scenes: str | None, scheme: LabelScheme) -> Corpus:
    videos = load_features(features)
    if scenes is not None:
        videos = load_scenes(scenes, videos, scheme)
    return Corpus(videos=videos, scheme=scheme)


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_synth(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    base = SynthConfig()
    cfg = SynthConfig(
        seed=int(_resolve(args, file_cfg, "seed", base.seed)),
        n_videos=int(_resolve(args, file_cfg, "n_videos", base.n_videos)),
        shots_min=int(_resolve(args, file_cfg, "shots_min", base.shots_min)),
        shots_max=int(_resolve(args, file_cfg, "shots_max", base.shots_max)),
        scene_len_max=int(_resolve(args, file_cfg, "scene_len_max", base.scene_len_max)),
        n_categories=int(_resolve(args, file_cfg, "n_categories", base.n_categories)),
        d_vis=int(_resolve(args, file_cfg, "d_vis", base.d_vis)),
        d_aud=int(_resolve(args, file_cfg, "d_aud", base.d_aud)),
        center_scale=float(_resolve(args, file_cfg, "center_scale", base.center_scale)),
        sigma_scene=float(_resolve(args, file_cfg, "sigma_scene", base.sigma_scene)),
        sigma_shot=float(_resolve(args, file_cfg, "sigma_shot", base.sigma_shot)),
        vis_weight=float(_resolve(args, file_cfg, "vis_weight", base.vis_weight)),
        aud_weight=float(_resolve(args, file_cfg, "aud_weight", base.aud_weight)),
        drift_rotation_seed=_resolve(args, file_cfg, "drift_rotation_seed", None),
    )
    split = _parse_fractions(_resolve(args, file_cfg, "split", "2/3,1/6,1/6"))
    fmt = _resolve(args, file_cfg, "format", "jsonl")
    if fmt not in ("jsonl", "npz"):
        raise DataError(f"unknown feature format {fmt!r}")

    corpus = generate_corpus(cfg)
    parts = split_corpus(corpus, split, seed=cfg.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, part in zip(("train", "val", "test"), parts):
        save_features(out_dir / f"{name}.features.{fmt}", part.videos)
        save_scenes(out_dir / f"{name}.scenes.json", part.videos)
        log.info("%s split: %d videos", name, len(part.videos))
    resolved = {**asdict(cfg), "split": list(split), "format": fmt}
    _record_config(out_dir / "config.json", "synth", resolved)
    print(f"wrote {sum(len(p.videos) for p in parts)} videos to {out_dir}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    tc = _train_config(args, file_cfg)
    head = _resolve(args, file_cfg, "head", "osmsl")
    if head not in ("osmsl", "multitask", "twostage"):
        raise DataError(f"unknown head {head!r}")
    if tc.mode not in ("ss", "ssc"):
        raise DataError(f"unknown mode {tc.mode!r}")
    if tc.mode == "ss" and head != "osmsl":
        raise DataError(f"head {head!r} requires ssc mode")

    categories_flag = _resolve(args, file_cfg, "categories", None)
    found_names = sorted(
        {
            cat
            for spans in read_scene_file(args.scenes).values()
            for _, _, cat in spans
            if cat is not None
        }
    )
    if tc.mode == "ss":
        if categories_flag:
            raise DataError("--categories only applies to ssc mode")
        if found_names:
            # gold carries categories; segmentation-only training drops them
            ssc = LabelScheme.ssc(found_names)
            corpus = strip_categories(_load_corpus(args.features, args.scenes, ssc))
        else:
            corpus = _load_corpus(args.features, args.scenes, LabelScheme.ss())
        scheme = corpus.scheme
    else:
        if categories_flag:
            names = [c.strip() for c in categories_flag.split(",") if c.strip()]
            scheme = LabelScheme.ssc(names)
        elif found_names:
            scheme = LabelScheme.ssc(found_names)
        else:
            raise DataError(
                "no categories found in scene file; pass --categories or use --mode ss"
            )
        corpus = _load_corpus(args.features, args.scenes, scheme)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    curves_path = _resolve(args, file_cfg, "curves", None) or tc.curves_path
    if curves_path is None:
        curves_path = str(out.parent / "curves.csv")
    tc.curves_path = str(curves_path)

    log.info("training head=%s mode=%s on %d videos", head, tc.mode, len(corpus.videos))
    if head == "osmsl":
        model, curve = train_osmsl(corpus, tc)
    elif head == "multitask":
        model, curve = baselines.train_multitask(corpus, tc)
    else:
        model, curve = baselines.train_twostage(corpus, tc)

    save_checkpoint(model, out)
    curve.to_csv(curves_path)
    resolved = {
        **{
            k: v
            for k, v in asdict(tc).items()
            if k not in ("diffcorr", "encoder", "curves_path")
        },
        "head": head,
        "scheme": scheme.fingerprint(),
        "diffcorr": asdict(tc.diffcorr),
        "encoder": asdict(tc.encoder),
        "curves": str(curves_path),
    }
    _record_config(Path(str(out) + ".config.json"), "train", resolved)
    final = curve.points[-1] if curve.points else None
    if final is not None:
        print(f"trained {head}: final {final.task} loss {final.raw_loss:.6f}")
    print(f"checkpoint: {out}")
    print(f"curves: {curves_path}")
    return 0


def _ss_mode_corpus(corpus: Corpus, mode: str) -> Corpus:
    return strip_categories(corpus) if mode == "ss" else corpus


def _cmd_predict(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.checkpoint)
    if args.mode is not None and model.scheme.mode != args.mode:
        raise DataError(
            f"scheme mismatch: checkpoint is {model.scheme.mode}, requested {args.mode}"
        )
    videos = load_features(args.features)
    preds = predict_corpus(model, videos)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_predictions(out, preds)
    _record_config(
        Path(str(out) + ".config.json"),
        "predict",
        {
            "features": str(args.features),
            "checkpoint": str(args.checkpoint),
            "scheme": model.scheme.fingerprint(),
        },
    )
    print(f"predictions: {out}")
    return 0


def _format_table(report: EvalReport) -> str:
    rows: list[tuple[str, str, str, str, str, str, str]] = []

    def add(name: str, p: float, r: float, f1: float, tp=None, fp=None, fn=None):
        rows.append(
            (
                name,
                f"{p:.4f}",
                f"{r:.4f}",
                f"{f1:.4f}",
                "" if tp is None else str(tp),
                "" if fp is None else str(fp),
                "" if fn is None else str(fn),
            )
        )

    s = report.seg
    add("seg", s.precision, s.recall, s.f1, s.tp, s.fp, s.fn)
    m = report.seg_cls_micro
    add("seg+cls micro", m.precision, m.recall, m.f1, m.tp, m.fp, m.fn)
    add(
        "seg+cls macro",
        report.seg_cls_macro_precision,
        report.seg_cls_macro_recall,
        report.seg_cls_macro_f1,
    )
    for name, prf in report.per_category.items():
        add(f"  {name}", prf.precision, prf.recall, prf.f1, prf.tp, prf.fp, prf.fn)
    header = ("metric", "p", "r", "f1", "tp", "fp", "fn")
    table = [header] + rows
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = []
    for row in table:
        lines.append(
            "  ".join(
                cell.ljust(widths[i]) if i == 0 else cell.rjust(widths[i])
                for i, cell in enumerate(row)
            ).rstrip()
        )
    return "\n".join(lines)


def _cmd_eval(args: argparse.Namespace) -> int:
    gold_raw = read_scene_file(args.gold)
    pred_raw = read_scene_file(args.pred)
    if set(gold_raw) != set(pred_raw):
        missing = sorted(set(gold_raw) ^ set(pred_raw))
        raise DataError(f"prediction/gold video sets differ (e.g. {missing[:3]})")

    names: set[str] = set()
    for raw in (gold_raw, pred_raw):
        for spans in raw.values():
            names.update(cat for _, _, cat in spans if cat is not None)
    macro: list[str] | None = None
    if args.macro_categories:
        macro = [c.strip() for c in args.macro_categories.split(",") if c.strip()]
    # the scheme must cover every name present so resolution never fails;
    # the macro flag only pins the averaging divisor
    all_names = sorted(names.union(macro or ()))
    scheme = LabelScheme.ssc(all_names) if all_names else LabelScheme.ss()

    pairs = []
    for video_id in sorted(gold_raw):
        gold_spans = gold_raw[video_id]
        n_shots = max(end for _, end, _ in gold_spans) + 1
        try:
            gt = resolve_scenes(gold_spans, n_shots, scheme)
            pred = resolve_scenes(pred_raw[video_id], n_shots, scheme)
        except DataError as exc:
            raise DataError(f"video {video_id!r}: {exc}") from exc
        pairs.append((pred, gt))

    macro_ids = None
    if macro is not None:
        by_name = {c.name: c for c in scheme.categories}
        macro_ids = [by_name[n] for n in macro]
    report = evaluate(pairs, macro_ids)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_report(out, report.to_doc())
    _record_config(
        Path(str(out) + ".config.json"),
        "eval",
        {
            "pred": str(args.pred),
            "gold": str(args.gold),
            "scheme": scheme.fingerprint(),
        },
    )
    print(_format_table(report))
    print(f"report: {out}")
    return 0


def _cmd_inspect(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.checkpoint)
    crf_model = model
    if model.model_type == "twostage":
        crf_model = model.stage1
    elif model.model_type == "multitask":
        raise DataError("inspect needs a link-tag model checkpoint")
    videos = load_features(args.features)
    target = next((v for v in videos if v.video_id == args.video), None)
    if target is None:
        raise DataError(f"video {args.video!r} not in {args.features}")

    crf_model.eval()
    with torch.no_grad():
        vis, aud = video_tensors(target)
        em = crf_model.emissions_batch([(vis, aud)], train_mode=False)[0]
        marg = crf_model.crf.marginals(em)
    path, score = crf_model.crf.viterbi(em)
    tags = [crf_model.scheme.tag_at(i) for i in path]
    doc = {
        "video_id": target.video_id,
        "n_shots": target.n_shots,
        "tag_table": [str(t) for t in crf_model.scheme.tag_table()],
        "viterbi_tags": tags_to_strings(tags),
        "viterbi_score": score,
        "scenes": [
            {
                "start_shot": s.start_shot,
                "end_shot": s.end_shot,
                "category": None if s.category is None else s.category.name,
            }
            for s in model.predict_scenes(vis, aud)
        ],
        "emissions": [[float(x) for x in row] for row in em],
        "marginals": [[float(x) for x in row] for row in marg],
    }
    if args.out:
        save_json(Path(args.out), doc)
        print(f"inspection: {args.out}")
    else:
        json.dump(doc, sys.stdout, indent=2)
        print()
    return 0


def _cmd_curves(args: argparse.Namespace) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "osmsl"
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for path in args.csv:
        curve = CurveLog.from_csv(path)
        prefix = f"{Path(path).stem}: " if len(args.csv) > 1 else ""
        for task in curve.tasks():
            xs, ys = curve.series(task, normalized=not args.raw)
            ax.plot(xs, ys, label=f"{prefix}{task}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("raw loss" if args.raw else "normalized loss")
    ax.legend()
    fig.tight_layout()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    print(f"curve plot: {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="osmsl",
        description="Scene segmentation and classification via sequential link tags.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="TOML config file; explicit flags win")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help="default: $OSMSL_THREADS or 1")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-videos", type=int, dest="n_videos")
    p.add_argument("--shots-min", type=int, dest="shots_min")
    p.add_argument("--shots-max", type=int, dest="shots_max")
    p.add_argument("--scene-len-max", type=int, dest="scene_len_max")
    p.add_argument("--n-categories", type=int, dest="n_categories")
    p.add_argument("--d-vis", type=int, dest="d_vis")
    p.add_argument("--d-aud", type=int, dest="d_aud")
    p.add_argument("--center-scale", type=float, dest="center_scale")
    p.add_argument("--sigma-scene", type=float, dest="sigma_scene")
    p.add_argument("--sigma-shot", type=float, dest="sigma_shot")
    p.add_argument("--vis-weight", type=float, dest="vis_weight")
    p.add_argument("--aud-weight", type=float, dest="aud_weight")
    p.add_argument("--drift-rotation-seed", type=int, dest="drift_rotation_seed")
    p.add_argument("--split", help="three fractions, e.g. 2/3,1/6,1/6")
    p.add_argument("--format", choices=("jsonl", "npz"))
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--curves", help="loss-curve CSV path (default: curves.csv beside --out)")
    p.add_argument("--head", choices=("osmsl", "multitask", "twostage"))
    p.add_argument("--mode", choices=("ss", "ssc"))
    p.add_argument("--categories", help="comma-separated names (default: from scenes)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--clip-norm", type=float, dest="clip_norm")
    p.add_argument(
        "--hard-mask",
        action=argparse.BooleanOptionalAction,
        dest="hard_mask",
        help="mask ungrammatical transitions (on by default)",
    )
    p.add_argument(
        "--visual", action=argparse.BooleanOptionalAction, dest="use_visual"
    )
    p.add_argument("--audio", action=argparse.BooleanOptionalAction, dest="use_audio")
    p.add_argument("--lambda-boundary", type=float, dest="lambda_boundary")
    p.add_argument("--lambda-class", type=float, dest="lambda_class")
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("predict", help="decode scenes with a trained model")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("ss", "ssc"), help="require this checkpoint mode")
    p.set_defaults(handler=_cmd_predict)

    p = sub.add_parser("eval", help="score predictions against gold scenes")
    common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--out", required=True, help="report.json path")
    p.add_argument(
        "--macro-categories",
        dest="macro_categories",
        help="comma-separated names the macro average runs over (default: union found)",
    )
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("inspect", help="dump per-shot scores for one video")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(handler=_cmd_inspect)

    p = sub.add_parser("curves", help="render loss curves to SVG")
    p.add_argument("csv", nargs="+", help="curve CSV file(s) from train")
    p.add_argument("--out", required=True, help="SVG path")
    p.add_argument("--raw", action="store_true", help="plot raw instead of normalized")
    p.set_defaults(handler=_cmd_curves)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.handler(args)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
