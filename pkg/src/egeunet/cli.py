"""``ege`` command line: train, eval, predict, analyze, gradcheck.

Exit codes: 0 ok, 1 gradient check failure, 2 bad config, 3 missing or
unreadable data, 4 incompatible checkpoint.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import analysis
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, load_config, save_config
from .data import DatasetError, load_dataset, read_image, write_mask
from .model import build
from .ops import resize_to, stable_sigmoid
from .tensor import Tensor
from .training import evaluate, load_run_data, predict_logits, train

EXIT_OK, EXIT_GRADCHECK, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT = 0, 1, 2, 3, 4


def _err(msg: str) -> None:
    print(f"ege: {msg}", file=sys.stderr)


def _config(path, seed: int | None) -> RunConfig:
    cfg = load_config(path) if path else RunConfig()
    if seed is not None:
        cfg = cfg.with_values({"seed": seed})
    return cfg


def cmd_train(args) -> int:
    cfg = _config(args.config, args.seed)
    train_set, val_set = load_run_data(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.resolved")

    def log(row):
        if not args.quiet:
            print(f"epoch {row.epoch:4d}  loss {row.train_loss:.4f}  val_miou {row.val_miou:.4f}  "
                  f"val_dsc {row.val_dsc:.4f}  lr {row.lr:.2e}", flush=True)

    result = train(cfg, train_set, val_set, out_dir=out, workers=args.workers, log=log)
    print(json.dumps({"best_epoch": result.best_epoch, "best_val_miou": result.best_miou,
                      "epochs": len(result.rows)}))
    return EXIT_OK


def _load_model(ckpt, cfg: RunConfig):
    try:
        return load_checkpoint(ckpt, cfg.model_config())
    except (CheckpointError, OSError) as exc:
        raise CheckpointError(f"cannot use checkpoint {ckpt}: {exc}") from exc


def cmd_eval(args) -> int:
    cfg = _config(args.config, args.seed)
    model = _load_model(args.ckpt, cfg)
    samples = load_dataset(args.data, cfg["image.size"])
    if not samples:
        raise DatasetError(f"no images in {args.data}")
    counts = evaluate(model, samples, cfg["train.batch_size"], cfg["eval.threshold"])
    print(json.dumps({"miou": counts.miou, "dsc": counts.dsc, "n_images": len(samples)}))
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _config(args.config, args.seed)
    model = _load_model(args.ckpt, cfg)
    size = cfg["image.size"]
    native = read_image(args.input, None)
    image = read_image(args.input, size)
    logits = predict_logits(model, image[None])
    h, w = native.shape[1:]
    if (h, w) != logits.shape[-2:]:
        logits = resize_to(Tensor(logits), (h, w)).data
    write_mask(stable_sigmoid(logits[0]) >= cfg["eval.threshold"], args.out)
    return EXIT_OK


def _band(value, lo, hi) -> str:
    return "PASS" if lo <= value <= hi else "FAIL"


def cmd_analyze(args) -> int:
    cfg = _config(args.config, args.seed)
    model = build(cfg.model_config())
    size = cfg["image.size"]
    report = analysis.cost_report(model, (1, 3, size, size))
    if args.json:
        print(json.dumps({"rows": report.machine_rows(), "params": report.total_params,
                          "macs": report.total_macs,
                          "flops": {c: report.flops(c) for c in analysis.CONVENTIONS}}))
        return EXIT_OK
    print(report.table())
    print()
    params, macs = report.total_params, report.total_macs
    print(f"params     {params:d}  ({params / 1e6:.4f}M, reference {analysis.PARAM_TARGET / 1e6:.3f}M)  "
          f"{_band(params, *analysis.PARAM_BAND)} band [{analysis.PARAM_BAND[0]}, {analysis.PARAM_BAND[1]}]")
    for conv in analysis.CONVENTIONS:
        print(f"GFLOPs     {report.flops(conv) / 1e9:.4f}  ({conv})")
    lo, hi = analysis.MAC_BAND
    print(f"GMACs      {macs / 1e9:.4f}  (reference {analysis.MAC_TARGET / 1e9:.3f})  "
          f"{_band(macs, lo, hi)} band [{lo / 1e9:.3f}, {hi / 1e9:.3f}] mac_as_1_flop")
    conv_only = analysis.count_flops(model, (1, 3, size, size), include_elementwise=False)
    print(f"conv-only  {conv_only / 1e9:.4f} GMACs")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.inject_fault:
        with analysis.inject_fault():
            results = analysis.gradcheck_suite()
    else:
        results = analysis.gradcheck_suite()
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return EXIT_GRADCHECK
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser = argparse.ArgumentParser(prog="ege", description="lightweight lesion segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1, help="data-loading threads")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", parents=[common], help="write a PNG mask for one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("analyze", parents=[common], help="parameter and FLOP report")
    p.add_argument("--config", default=None)
    p.add_argument("--json", action="store_true", help="machine-readable rows")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--inject-fault", action="store_true", help="use a deliberately wrong conv backward")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(f"config error: {exc}" + (f" (key: {exc.key})" if exc.key else ""))
        return EXIT_CONFIG
    except DatasetError as exc:
        _err(f"data error: {exc}")
        return EXIT_DATA
    except CheckpointError as exc:
        _err(str(exc))
        return EXIT_CHECKPOINT
    except FileNotFoundError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
