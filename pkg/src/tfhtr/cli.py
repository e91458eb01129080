"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np
import yaml

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, dump_config, load_config, to_dict
from .errors import ConfigError, HTRError, InputError
from .metrics import format_report
from .model import HTRModel

log = logging.getLogger("tfhtr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--profile", choices=("desk", "paper"), default="desk")
    p.add_argument("--seed", type=int, help="overrides train.seed and synth.seed")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1)")
    p.add_argument("--precision", type=int, choices=(32, 64), help="overrides model.precision")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, e.g. model.heads=4 (repeatable)")
    p.add_argument("--config-out", help="where to write the resolved config "
                                        "(default: the output directory, else standard error)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tfhtr", description="Transformer handwritten text recognition")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="render a synthetic corpus")
    _common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--style", choices=("clean", "cursive"), default="clean")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("train", help="train on a manifest's train split (val split for early stopping)")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--time-limit", type=float)

    p = sub.add_parser("finetune", help="pretrain on synthetic data, then fine-tune on real data")
    _common(p)
    p.add_argument("--synth-manifest", required=True)
    p.add_argument("--real-manifest", required=True)
    p.add_argument("--fraction", type=float, default=1.0, help="share of the real train split to use")
    p.add_argument("--pretrained", help="skip pretraining and start from this checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--time-limit", type=float)

    p = sub.add_parser("eval", help="CER/WER of a checkpoint on a manifest split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--lm-weight", type=float, default=0.0, help="shallow fusion weight (0 disables)")
    p.add_argument("--lm-order", type=int, default=5)
    p.add_argument("--lm-manifest", help="manifest whose train-split texts fit the language model "
                                         "(default: --manifest)")

    p = sub.add_parser("decode", help="transcribe image files")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("images", nargs="+")
    p.add_argument("--attn-out", help="directory for attention heatmaps and sidecars")

    p = sub.add_parser("attn", help="teacher-forced attention map for a known transcription")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--out", required=True, help="output prefix")

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter of a tiny model")
    _common(p)
    p.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def resolve_config(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides += [f"train.seed={args.seed}", f"synth.seed={args.seed}"]
    if args.precision is not None:
        overrides.append(f"model.precision={args.precision}")
    return load_config(args.config, args.profile, overrides)


def emit_config(args, cfg: RunConfig, out_dir: str | None = None) -> None:
    target = args.config_out or (str(Path(out_dir) / "config.yaml") if out_dir else None)
    if target:
        Path(target).parent.mkdir(parents=True, exist_ok=True)
        dump_config(cfg, target)
    else:
        sys.stderr.write("# resolved config\n")
        sys.stderr.write(yaml.safe_dump(to_dict(cfg), sort_keys=False, allow_unicode=True))


def _threads(n: int):
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    return threadpool_limits(limits=n)


def _from_checkpoint(args, cfg: RunConfig) -> HTRModel:
    ckpt = load_checkpoint(args.checkpoint)
    cfg.model = ckpt.model_config
    return ckpt.best_model()


def cmd_synth(args, cfg: RunConfig) -> int:
    from .synth.corpus import build_corpus
    from .synth.render import STYLES

    emit_config(args, cfg, args.out)
    letters = cfg.model.alphabet
    path = build_corpus(args.out, cfg.synth, letters, STYLES[args.style], workers=args.workers)
    print(path)
    return 0


def _load_splits(path, alphabet):
    from .synth.manifest import load_manifest
    from .training import LineData

    manifest = load_manifest(path, alphabet)
    train = LineData.from_manifest(manifest, "train")
    val = LineData.from_manifest(manifest, "val")
    return manifest, train, val


def _write_result(out: Path, result) -> None:
    save_checkpoint(out / "final.ckpt", result.checkpoint)
    print(f"stop={result.stop_reason}\tbest_val_cer={result.best_cer:.4f}\tcheckpoint={out / 'final.ckpt'}")


def cmd_train(args, cfg: RunConfig) -> int:
    from .text import Alphabet
    from .training import train

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
        cfg.model = resume.model_config
    emit_config(args, cfg, args.out)
    _, train_data, val_data = _load_splits(args.manifest, Alphabet(cfg.model.alphabet))
    model = HTRModel(cfg.model, np.random.default_rng(cfg.train.seed))
    result = train(model, train_data, val_data, cfg.train, resume=resume, log_path=out / "log.jsonl",
                   checkpoint_dir=out, time_limit=args.time_limit)
    _write_result(out, result)
    return 0


def cmd_finetune(args, cfg: RunConfig) -> int:
    from .synth.manifest import subset
    from .text import Alphabet
    from .training import LineData, train

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    alphabet = Alphabet(cfg.model.alphabet)
    model = HTRModel(cfg.model, np.random.default_rng(cfg.train.seed))
    if args.pretrained:
        ckpt = load_checkpoint(args.pretrained)
        cfg.model = ckpt.model_config
        model = ckpt.best_model()
    emit_config(args, cfg, args.out)
    if not args.pretrained:
        _, s_train, s_val = _load_splits(args.synth_manifest, alphabet)
        first = train(model, s_train, s_val, cfg.train, log_path=out / "pretrain_log.jsonl",
                      checkpoint_dir=out / "pretrain", time_limit=args.time_limit)
        model.load_state_dict(first.checkpoint.best_params or first.checkpoint.params)
    real, _, r_val = _load_splits(args.real_manifest, alphabet)
    r_train = LineData.from_manifest(subset(real, args.fraction, cfg.train.seed), "train")
    result = train(model, r_train, r_val, cfg.train, log_path=out / "log.jsonl", checkpoint_dir=out,
                   time_limit=args.time_limit)
    _write_result(out, result)
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    from .decoding import predict_texts
    from .lm import CharNGramLM
    from .synth.manifest import load_manifest
    from .training import LineData

    model = _from_checkpoint(args, cfg)
    emit_config(args, cfg)
    manifest = load_manifest(args.manifest, model.alphabet)
    data = LineData.from_manifest(manifest, args.split)
    if len(data) == 0:
        raise InputError(f"split {args.split!r} of {args.manifest} is empty")
    lm = None
    if args.lm_weight:
        source = load_manifest(args.lm_manifest) if args.lm_manifest else manifest
        lm = CharNGramLM(model.cfg.alphabet, order=args.lm_order, weight=args.lm_weight)
        lm.fit(source.split("train").texts)
    hyps = predict_texts(model, data.images, lm=lm, lm_weight=args.lm_weight if lm else None)
    ids = [s.image for s in manifest.split(args.split).samples]
    sys.stdout.write(format_report(ids, list(zip(data.texts, hyps))))
    return 0


def cmd_decode(args, cfg: RunConfig) -> int:
    from .decoding import decode_batch, write_attention
    from .synth.imageio import read_image
    from .synth.preprocess import preprocess

    model = _from_checkpoint(args, cfg)
    emit_config(args, cfg, args.attn_out)
    if args.attn_out:
        Path(args.attn_out).mkdir(parents=True, exist_ok=True)
    for path in args.images:
        img = preprocess(read_image(path)).pixels
        res = decode_batch(model, [img])[0]
        print(f"{path}\t{res.text}")
        if args.attn_out:
            write_attention(Path(args.attn_out) / Path(path).stem, res.attention, res.symbols,
                            img.shape[1], model.stride)
    return 0


def cmd_attn(args, cfg: RunConfig) -> int:
    from .decoding import extract_attention, write_attention
    from .synth.imageio import read_image
    from .synth.preprocess import preprocess

    model = _from_checkpoint(args, cfg)
    emit_config(args, cfg)
    img = preprocess(read_image(args.image)).pixels
    att = extract_attention(model, img, args.text)
    symbols = list(args.text) + [model.alphabet.symbols[model.alphabet.end]]
    heat, side = write_attention(args.out, att, symbols, img.shape[1], model.stride)
    print(f"{heat}\n{side}")
    return 0


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    from .gradcheck import tiny_model_gradcheck

    emit_config(args, cfg)
    res = tiny_model_gradcheck(seed=cfg.train.seed, label_smoothing=cfg.train.label_smoothing)
    ok = res.passed(args.tolerance)
    print(f"checked={res.checked}\tmax_rel_error={res.max_rel_error:.3e}\tworst={res.worst}\t"
          f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 3


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "finetune": cmd_finetune, "eval": cmd_eval,
            "decode": cmd_decode, "attn": cmd_attn, "gradcheck": cmd_gradcheck}


def run(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"tfhtr: usage error: {exc}\n")
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        with _threads(args.threads):
            return COMMANDS[args.command](args, cfg)
    except HTRError as exc:
        sys.stderr.write(f"tfhtr: {type(exc).__name__}: {exc}\n")
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        sys.stderr.write(f"tfhtr: {exc}\n")
        return 2
    except FloatingPointError as exc:
        sys.stderr.write(f"tfhtr: numeric failure: {exc}\n")
        return 3


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
