"""Command-line front end.

Subcommands: train, compress, finetune, eval, sweep, bench, norms.
Flag precedence is explicit flag > --config JSON file > built-in
default, and every run records the resolved configuration next to its
outputs. All randomness flows from --seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .compress import METHODS, SCOPES, CompressionSpec, compress_model
from .corpus import batchify, build_vocab
from .errors import DivergedError, LstmCompressError, VocabError
from .factorize import SemiNmfOptions
from .metrics import bench_inference, norm_sweep, perplexity, rows_to_csv
from .model import LmConfig, LstmLmModel
from .train import TrainerConfig, finetune, train_model

DEFAULT_RANK_GRID = (10, 50, 100, 200, 300, 400)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2        # argparse's own code for bad flags
EXIT_BAD_INPUT = 3
EXIT_DIVERGED = 4

_TRAIN_DEFAULTS = {
    "corpus": None, "out": None, "mode": "char", "min_count": 1,
    "valid_frac": 0.1, "layers": 2, "dim": 128, "emb": None, "tied": False,
    "dropout": 0.2, "epochs": 3, "batch_size": 32, "bptt": 64,
    "lr": 1.0, "clip": 0.25, "seed": 0,
}
_COMPRESS_DEFAULTS = {
    "inp": None, "out": None, "method": None, "rank": None,
    "target": "w_h", "scope": "per-gate", "layers": "all",
    "nmf_max_iters": 200, "nmf_rel_tol": 1e-4, "nmf_eps": 1e-8,
}
_FINETUNE_DEFAULTS = {
    "inp": None, "corpus": None, "out": None, "valid_frac": 0.1,
    "epochs": 2, "batch_size": 32, "bptt": 64, "lr": 1.0, "clip": 0.25,
    "seed": 0,
}
_EVAL_DEFAULTS = {
    "inp": None, "corpus": None, "batch_size": 32, "bptt": 64, "out": None,
}
_SWEEP_DEFAULTS = {
    "inp": None, "corpus": None, "out": None, "ranks": None,
    "methods": ",".join(METHODS), "targets": "w_h", "scope": "per-gate",
    "layers": "all", "eval": True, "batch_size": 32, "bptt": 64,
    "reps": 5, "warmup": 2,
}
_BENCH_DEFAULTS = {
    "baseline": None, "candidate": None, "corpus": None, "batch_size": 32,
    "bptt": 64, "reps": 5, "warmup": 2, "out": None,
}
_NORMS_DEFAULTS = {
    "inp": None, "out": None, "targets": "w_i,w_h", "scope": "per-gate",
    "layers": "all", "dump_matrices": None,
}


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge CLI flags over a --config JSON file over defaults."""
    file_cfg = {}
    if args.config is not None:
        file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ValueError(f"--config has unknown keys {sorted(unknown)}; "
                             f"known: {sorted(defaults)}")
    resolved = {}
    for key, default in defaults.items():
        flag_value = getattr(args, key)
        if flag_value is not None:
            resolved[key] = flag_value
        elif key in file_cfg:
            resolved[key] = file_cfg[key]
        else:
            resolved[key] = default
    return resolved


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg[k] is None]
    if missing:
        raise ValueError(f"missing required options: "
                         + ", ".join("--" + k.replace("_", "-")
                                     for k in missing))


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def _write_run_config(target: Path, command: str, cfg: dict) -> None:
    payload = {"command": command}
    payload.update({k: (str(v) if isinstance(v, Path) else v)
                    for k, v in cfg.items()})
    _write_json(target, payload)


def _read_text(path) -> str:
    return Path(path).read_text(encoding="utf-8")


def _split_text(text: str, mode: str, valid_frac: float) -> tuple[str, str]:
    """Tail fraction becomes validation; word mode cuts on a line
    boundary so no line straddles the split."""
    if not 0.0 < valid_frac < 1.0:
        raise ValueError(f"valid_frac must be in (0, 1), got {valid_frac}")
    if mode == "char":
        cut = max(1, int(len(text) * (1.0 - valid_frac)))
        return text[:cut], text[cut:]
    lines = text.splitlines(keepends=True)
    cut = max(1, int(len(lines) * (1.0 - valid_frac)))
    return "".join(lines[:cut]), "".join(lines[cut:])


def _epoch_logger(log_path: Path):
    log_path.parent.mkdir(parents=True, exist_ok=True)
    log_path.write_text("", encoding="utf-8")

    def log(record: dict) -> None:
        with log_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        print(f"epoch {record['epoch']}: train_ppl={record['train_ppl']:.4f} "
              f"valid_ppl={record['valid_ppl']:.4f} lr={record['lr']} "
              f"({record['seconds']:.1f}s)")

    return log


def _parse_int_list(text: str, what: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError as exc:
        raise ValueError(f"cannot parse {what} list {text!r}") from exc


def _parse_layers(text: str, n_layers: int):
    if text == "all":
        return None
    layers = _parse_int_list(text, "layer")
    for l in layers:
        if not 0 <= l < n_layers:
            raise ValueError(f"layer {l} out of range 0..{n_layers - 1}")
    return layers


def _parse_targets(text: str) -> tuple[str, ...]:
    targets = tuple(t.strip() for t in text.split(",") if t.strip())
    for t in targets:
        if t not in ("w_i", "w_h"):
            raise ValueError(f"target must be w_i or w_h, got {t!r}")
    if len(set(targets)) != len(targets) or not targets:
        raise ValueError(f"bad target list {text!r}")
    return targets


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _TRAIN_DEFAULTS)
    _require(cfg, "corpus", "out")
    if cfg["emb"] is None:
        cfg["emb"] = cfg["dim"]
    out = Path(cfg["out"])

    text = _read_text(cfg["corpus"])
    train_text, valid_text = _split_text(text, cfg["mode"],
                                         cfg["valid_frac"])
    vocab = build_vocab(train_text, cfg["mode"], cfg["min_count"])
    train_bc = batchify(vocab.encode(train_text), cfg["batch_size"],
                        cfg["bptt"])
    valid_bc = batchify(vocab.encode(valid_text), cfg["batch_size"],
                        cfg["bptt"])

    model = LstmLmModel.build(
        vocab,
        LmConfig(n_emb=cfg["emb"], n_dim=cfg["dim"], n_layers=cfg["layers"],
                 tied=cfg["tied"], dropout=cfg["dropout"]),
        seed=cfg["seed"])
    trainer = TrainerConfig(lr=cfg["lr"], clip=cfg["clip"], seed=cfg["seed"])

    _write_run_config(out / "run_config.json", "train", cfg)
    best, _ = train_model(model, train_bc, valid_bc, cfg["epochs"], trainer,
                          on_epoch=_epoch_logger(out / "train_log.jsonl"))
    save_checkpoint(best, out)
    print(f"saved checkpoint to {out}")
    return EXIT_OK


def cmd_compress(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _COMPRESS_DEFAULTS)
    _require(cfg, "inp", "out", "method", "rank")
    model = load_checkpoint(cfg["inp"])
    spec = CompressionSpec(
        method=cfg["method"], rank=cfg["rank"], target=cfg["target"],
        scope=cfg["scope"],
        layers=_parse_layers(cfg["layers"], len(model.layers)),
        nmf=SemiNmfOptions(max_iters=cfg["nmf_max_iters"],
                           rel_tol=cfg["nmf_rel_tol"],
                           eps=cfg["nmf_eps"]))
    compressed, report = compress_model(model, spec)
    out = Path(cfg["out"])
    save_checkpoint(compressed, out)
    _write_run_config(out / "run_config.json", "compress", cfg)
    _write_json(out / "compress_report.json", {
        "slots": [asdict(s) for s in report.slots],
        "params_before": report.params_before,
        "params_after": report.params_after,
        "any_negative_savings": report.any_negative_savings,
    })
    total_b = report.params_before["total"]
    total_a = report.params_after["total"]
    print(f"params {total_b} -> {total_a} "
          f"({total_a / total_b:.3f}x), saved to {out}")
    if report.any_negative_savings:
        print("warning: some blocks grew; see compress_report.json")
    return EXIT_OK


def cmd_finetune(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _FINETUNE_DEFAULTS)
    _require(cfg, "inp", "corpus", "out")
    model = load_checkpoint(cfg["inp"])
    text = _read_text(cfg["corpus"])
    train_text, valid_text = _split_text(text, model.vocab.mode,
                                         cfg["valid_frac"])
    train_bc = batchify(model.vocab.encode(train_text), cfg["batch_size"],
                        cfg["bptt"])
    valid_bc = batchify(model.vocab.encode(valid_text), cfg["batch_size"],
                        cfg["bptt"])
    trainer = TrainerConfig(lr=cfg["lr"], clip=cfg["clip"], seed=cfg["seed"])
    out = Path(cfg["out"])
    _write_run_config(out / "run_config.json", "finetune", cfg)
    best, _ = finetune(model, train_bc, valid_bc, cfg["epochs"], trainer,
                       on_epoch=_epoch_logger(out / "finetune_log.jsonl"))
    save_checkpoint(best, out)
    print(f"saved checkpoint to {out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _EVAL_DEFAULTS)
    _require(cfg, "inp", "corpus")
    model = load_checkpoint(cfg["inp"])
    ids = model.vocab.encode(_read_text(cfg["corpus"]))
    corpus = batchify(ids, cfg["batch_size"], cfg["bptt"])
    result = perplexity(model, corpus)
    payload = {
        "ppl": result.ppl,
        "token_count": result.token_count,
        "param_count": result.param_count,
        "params": model.param_breakdown(),
        "config": {k: (str(v) if isinstance(v, Path) else v)
                   for k, v in cfg.items()},
    }
    print(json.dumps(payload, sort_keys=True, indent=2))
    if cfg["out"] is not None:
        _write_json(Path(cfg["out"]), payload)
    return EXIT_OK


def _feasible_ranks(model: LstmLmModel, requested, targets, scope: str,
                    layers) -> tuple[int, ...]:
    """Drop grid entries above the factorization bound of the smallest
    targeted block; fall back to that bound if nothing survives."""
    if layers is None:
        layers = range(len(model.layers))
    bound = None
    for l in layers:
        for tgt in targets:
            rows, cols = getattr(model.layers[l], tgt).shape
            if scope == "per-gate":
                rows //= 4
            cap = min(rows, cols)
            bound = cap if bound is None else min(bound, cap)
    grid = tuple(r for r in requested if 1 <= r <= bound)
    return grid if grid else (bound,)


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _SWEEP_DEFAULTS)
    _require(cfg, "inp", "out")
    if cfg["eval"]:
        _require(cfg, "corpus")
    model = load_checkpoint(cfg["inp"])
    targets = _parse_targets(cfg["targets"])
    layers = _parse_layers(cfg["layers"], len(model.layers))
    requested = (DEFAULT_RANK_GRID if cfg["ranks"] is None
                 else _parse_int_list(cfg["ranks"], "rank"))
    ranks = _feasible_ranks(model, requested, targets, cfg["scope"], layers)
    methods = tuple(m.strip() for m in cfg["methods"].split(",") if m.strip())

    eval_corpus = None
    if cfg["eval"]:
        ids = model.vocab.encode(_read_text(cfg["corpus"]))
        eval_corpus = batchify(ids, cfg["batch_size"], cfg["bptt"])

    rows = norm_sweep(model, ranks, methods, targets, scope=cfg["scope"],
                      layers=layers, eval_corpus=eval_corpus,
                      repetitions=cfg["reps"], warmup=cfg["warmup"])
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(rows_to_csv(rows, include_eval=cfg["eval"]),
                   encoding="utf-8")
    _write_run_config(out.with_suffix(out.suffix + ".run.json"), "sweep",
                      {**cfg, "ranks_used": list(ranks)})
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _BENCH_DEFAULTS)
    _require(cfg, "baseline", "candidate", "corpus")
    base = load_checkpoint(cfg["baseline"])
    cand = load_checkpoint(cfg["candidate"])
    if cand.vocab.id_to_token != base.vocab.id_to_token:
        raise VocabError("baseline and candidate vocabularies differ")
    ids = base.vocab.encode(_read_text(cfg["corpus"]))
    corpus = batchify(ids, cfg["batch_size"], cfg["bptt"])
    base_res = bench_inference(base, corpus, cfg["reps"], cfg["warmup"])
    cand_res = bench_inference(cand, corpus, cfg["reps"], cfg["warmup"],
                               baseline_ms=base_res.ms_median)
    payload = {
        "baseline": asdict(base_res),
        "candidate": asdict(cand_res),
        "speedup": cand_res.speedup,
        "config": {k: (str(v) if isinstance(v, Path) else v)
                   for k, v in cfg.items()},
    }
    print(json.dumps(payload, sort_keys=True, indent=2))
    if cfg["out"] is not None:
        _write_json(Path(cfg["out"]), payload)
    return EXIT_OK


def cmd_norms(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _NORMS_DEFAULTS)
    _require(cfg, "inp", "out")
    model = load_checkpoint(cfg["inp"])
    targets = _parse_targets(cfg["targets"])
    layers = _parse_layers(cfg["layers"], len(model.layers))
    rows = norm_sweep(model, ranks=(), methods=(), targets=targets,
                      scope=cfg["scope"], layers=layers)
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(rows_to_csv(rows, include_eval=False), encoding="utf-8")
    _write_run_config(out.with_suffix(out.suffix + ".run.json"), "norms", cfg)
    if cfg["dump_matrices"] is not None:
        dump = Path(cfg["dump_matrices"])
        dump.mkdir(parents=True, exist_ok=True)
        use_layers = layers if layers is not None \
            else range(len(model.layers))
        for l in use_layers:
            for tgt in targets:
                eff = getattr(model.layers[l], tgt).effective()
                np.save(dump / f"layers.{l}.{tgt}.npy", eff)
        print(f"dumped matrices to {dump}")
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", default=None,
                     help="JSON file with defaults for this command")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lstmcompress",
        description="Train, compress, and evaluate small LSTM language "
                    "models.")
    subs = parser.add_subparsers(dest="command", required=True)
    flag = argparse.BooleanOptionalAction

    p = subs.add_parser("train", help="train a model from a text file")
    p.add_argument("--corpus")
    p.add_argument("--out")
    p.add_argument("--mode", choices=("char", "word"))
    p.add_argument("--min-count", dest="min_count", type=int)
    p.add_argument("--valid-frac", dest="valid_frac", type=float)
    p.add_argument("--layers", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--emb", type=int)
    p.add_argument("--tied", action=flag)
    p.add_argument("--dropout", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--bptt", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--clip", type=float)
    p.add_argument("--seed", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("compress", help="compress a checkpoint's weights")
    p.add_argument("--in", dest="inp")
    p.add_argument("--out")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--rank", type=int)
    p.add_argument("--target", choices=("w_i", "w_h", "both"))
    p.add_argument("--scope", choices=SCOPES)
    p.add_argument("--layers", help='"all" or comma-separated indices')
    p.add_argument("--nmf-max-iters", dest="nmf_max_iters", type=int)
    p.add_argument("--nmf-rel-tol", dest="nmf_rel_tol", type=float)
    p.add_argument("--nmf-eps", dest="nmf_eps", type=float)
    _add_common(p)
    p.set_defaults(func=cmd_compress)

    p = subs.add_parser("finetune", help="continue training a checkpoint")
    p.add_argument("--in", dest="inp")
    p.add_argument("--corpus")
    p.add_argument("--out")
    p.add_argument("--valid-frac", dest="valid_frac", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--bptt", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--clip", type=float)
    p.add_argument("--seed", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_finetune)

    p = subs.add_parser("eval", help="perplexity of a checkpoint on text")
    p.add_argument("--in", dest="inp")
    p.add_argument("--corpus")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--bptt", type=int)
    p.add_argument("--out", help="also write the result JSON here")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("sweep",
                        help="norms/ppl/timing across ranks and methods")
    p.add_argument("--in", dest="inp")
    p.add_argument("--corpus")
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--ranks", help="comma-separated; default grid "
                   + ",".join(str(r) for r in DEFAULT_RANK_GRID))
    p.add_argument("--methods")
    p.add_argument("--targets")
    p.add_argument("--scope", choices=SCOPES)
    p.add_argument("--layers")
    p.add_argument("--eval", action=flag,
                   help="--no-eval skips perplexity/timing and writes the "
                        "reduced CSV schema")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--bptt", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--warmup", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = subs.add_parser("bench", help="time two checkpoints on one corpus")
    p.add_argument("--baseline")
    p.add_argument("--candidate")
    p.add_argument("--corpus")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--bptt", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--out", help="also write the result JSON here")
    _add_common(p)
    p.set_defaults(func=cmd_bench)

    p = subs.add_parser("norms", help="norm stats of a checkpoint's weights")
    p.add_argument("--in", dest="inp")
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--targets")
    p.add_argument("--scope", choices=SCOPES)
    p.add_argument("--layers")
    p.add_argument("--dump-matrices", dest="dump_matrices",
                   help="directory for effective matrices as .npy")
    _add_common(p)
    p.set_defaults(func=cmd_norms)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergedError as exc:
        print(f"error: training diverged at epoch={exc.epoch} "
              f"step={exc.step}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (LstmCompressError, ValueError, OSError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
