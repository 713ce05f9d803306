"""Command-line front end: split, train, eval, predict, verify."""

import argparse
import sys

from .checkpoint import load_checkpoint
from .config import load_run_config
from .data import load_manifest, read_manifest, save_manifest, split_manifest
from .errors import (
    CNetError,
    ConfigMismatch,
    EmptyClass,
    EmptyMatrix,
    NonFinite,
    StratumTooSmall,
    UnreadableImage,
)
from .metrics import emit_report
from .train import evaluate_groups, predict_image, train_run
from .verify import run_verify


def _build_parser():
    p = argparse.ArgumentParser(prog="cnet",
                                description="Concatenated-CNN binary image classifier")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("split", help="build a stratified train/val/test manifest")
    sp.add_argument("--data-dir", required=True)
    sp.add_argument("--classes", default="benign,malignant",
                    help="two class subdirectory names, comma separated")
    sp.add_argument("--group", default=None,
                    help="keep only this group tag (e.g. a magnification like 40X)")
    sp.add_argument("--ratios", default="0.70,0.15,0.15")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="manifest CSV path")
    sp.add_argument("--exclude", default=None,
                    help="text file of image paths to drop, one per line")

    tp = sub.add_parser("train", help="train from a manifest")
    tp.add_argument("--config", required=True, help="key=value run config file")
    tp.add_argument("--manifest", required=True)
    tp.add_argument("--checkpoint-out", required=True)
    tp.add_argument("--log-out", default=None, help="per-epoch CSV log path")

    ep = sub.add_parser("eval", help="score the test split of a manifest")
    ep.add_argument("--checkpoint", required=True)
    ep.add_argument("--manifest", required=True)
    ep.add_argument("--report-out", required=True)
    ep.add_argument("--format", choices=("csv", "json"), default="csv")
    ep.add_argument("--batch-size", type=int, default=32)
    ep.add_argument("--input-size", default=None,
                    help="expected HxW; must match the checkpoint's config")

    pp = sub.add_parser("predict", help="classify one image")
    pp.add_argument("--checkpoint", required=True)
    pp.add_argument("--image", required=True)

    vp = sub.add_parser("verify", help="run the built-in check suite")
    vp.add_argument("--fast", action="store_true",
                    help="fewer gradient-check seeds and smaller sweeps")
    return p


def _parse_size(s):
    h, sep, w = s.partition("x")
    return (int(h), int(w)) if sep else (int(h), int(h))


def cmd_split(args) -> int:
    classes = tuple(n.strip() for n in args.classes.split(","))
    manifest = load_manifest(args.data_dir, classes, args.group, args.exclude)
    ratios = tuple(args.ratios.split(","))
    manifest = split_manifest(manifest, ratios, args.seed)
    save_manifest(manifest, args.out)

    strata = {}
    for r in manifest.records:
        key = (classes[r.label], r.group)
        strata.setdefault(key, {"train": 0, "val": 0, "test": 0})
        strata[key][r.split] += 1
    print(f"{'class':<12} {'group':<8} {'train':>7} {'val':>6} {'test':>6} {'total':>7}")
    for (cname, group), c in sorted(strata.items()):
        total = c["train"] + c["val"] + c["test"]
        print(f"{cname:<12} {group or '-':<8} {c['train']:>7} {c['val']:>6} "
              f"{c['test']:>6} {total:>7}")
    print(f"{'total':<12} {'':<8} {'':>7} {'':>6} {'':>6} {len(manifest.records):>7}")
    if manifest.skipped:
        print(f"skipped {len(manifest.skipped)} unreadable file(s):", file=sys.stderr)
        for path in manifest.skipped:
            print(f"  {path}", file=sys.stderr)
    print(f"manifest written to {args.out}")
    return 0


def cmd_train(args) -> int:
    rc = load_run_config(args.config)
    manifest = read_manifest(args.manifest, rc.class_names)
    summary = train_run(rc, manifest, args.checkpoint_out, args.log_out)
    best = summary["best_val_accuracy"]
    if best is not None:
        print(f"best validation accuracy: {best:.4f}")
    print(f"checkpoint written to {summary['checkpoint']}")
    return 0


def cmd_eval(args) -> int:
    model, _, meta = load_checkpoint(args.checkpoint)
    if args.input_size is not None:
        want = _parse_size(args.input_size)
        if want != model.config.input_size:
            raise ConfigMismatch(
                f"checkpoint was built for input {model.config.input_size}, "
                f"--input-size asked for {want}")
    names = meta["class_names"] or ("0", "1")
    manifest = read_manifest(args.manifest, names)
    reports = evaluate_groups(model, manifest, args.batch_size)
    emit_report(reports, args.format, args.report_out)
    for group, rep in reports.items():
        acc = rep.accuracy
        print(f"{group}: accuracy {'-' if acc is None else f'{acc * 100:.2f}'}%"
              f"  (tp={rep.cm.tp} tn={rep.cm.tn} fp={rep.cm.fp} fn={rep.cm.fn})")
    print(f"report written to {args.report_out}")
    return 0


def cmd_predict(args) -> int:
    model, _, meta = load_checkpoint(args.checkpoint)
    name, row = predict_image(model, args.image, meta["class_names"])
    print(f"class: {name}")
    print(f"activations: {row[0]:.6f} {row[1]:.6f}")
    return 0


def cmd_verify(args) -> int:
    results = run_verify(fast=args.fast)
    failed = 0
    for res in results:
        tag = "PASS" if res.passed else "FAIL"
        print(f"{tag}  {res.name}: {res.detail}")
        failed += not res.passed
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {"split": cmd_split, "train": cmd_train, "eval": cmd_eval,
               "predict": cmd_predict, "verify": cmd_verify}[args.command]
    try:
        return handler(args)
    except (EmptyClass, StratumTooSmall) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if args.command == "split" else 1
    except UnreadableImage as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NonFinite as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ConfigMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except EmptyMatrix as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4 if args.command == "train" else 1
    except CNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
