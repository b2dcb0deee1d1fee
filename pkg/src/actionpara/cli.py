"""``actionpara`` command-line entry point.

Exit status: 0 success, 1 usage error, 2 runtime failure. Logs go to stderr;
machine output goes to files or stdout.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

from . import __version__
from .actions import Mode, StrategyWeights, derive_actions, format_actions, parse_actions
from .data import PRESETS, DatasetSplit, SyntheticGrammar, gen_synthetic, load_pairs, split_overlap_free, split_standard
from .text_prep import CLS, DEFAULT_MAX_LEN, SEP, NormalizeConfig, Vocab, build_vocab, normalize

log = logging.getLogger("actionpara")

DEFAULT_CONFIG: dict = {
    "name": "desk",
    "outdir": "runs",
    "data": {
        "source": "synthetic",  # or a TSV path of source<TAB>target lines
        "preset": "desk",
        "sizes": None,  # [train, valid, test]; overrides the preset
        "overlap_free": False,
        "seed": 0,
        "vocab_size": 2000,
        "max_len": DEFAULT_MAX_LEN,
        "dir": "runs/data",
        "normalize": asdict(NormalizeConfig()),
    },
    "model": {},  # ModelConfig fields except vocab_size
    "train": {},  # TrainConfig fields; unset fields use the desk defaults
    "eval": {"modes": ["Random", "Ks", "Ps", "Os", "Oracle"], "seeds": [0, 1, 2, 3, 4], "beams": 8},
    "grid": {"cells": [[0.3, 0.0, 0.7], [0.2, 0.1, 0.7], [0.2, 0.0, 0.8]]},
}


class UsageError(Exception):
    """Bad invocation; maps to exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- config ----------------------------------------------------------------------


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_override(cfg: dict, item: str) -> None:
    """Apply one ``dotted.key=value`` override in place; values parse as JSON when possible."""
    if "=" not in item:
        raise UsageError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = _parse_value(raw)


def load_config(path: str | None, overrides: Sequence[str] = ()) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise UsageError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise UsageError(f"config file {path} is not valid JSON: {e}") from e
        _merge(cfg, user)
    for item in overrides:
        apply_override(cfg, item)
    return cfg


def _merge(base: dict, new: dict) -> None:
    for k, v in new.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v


def _norm_cfg(cfg: dict) -> NormalizeConfig:
    return NormalizeConfig(**cfg["data"].get("normalize", {}))


def _spec(cfg: dict):
    from .eval_harness import ExperimentSpec, desk_train_config

    train = desk_train_config(**cfg["train"])
    return ExperimentSpec(
        name=cfg["name"], model=dict(cfg["model"]), train=train, modes=tuple(cfg["eval"]["modes"]),
        seeds=tuple(cfg["eval"]["seeds"]), outdir=cfg["outdir"], beams=int(cfg["eval"]["beams"]),
        dataset=str(cfg["data"]["source"]),
    )


def _load_corpus(cfg: dict):
    from .eval_harness import Corpus

    d = Path(cfg["data"]["dir"])
    if not (d / "manifest.json").exists():
        raise UsageError(f"no prepared data in {d}; run prepare-data first")
    return Corpus(DatasetSplit.read(d), Vocab.load(d / "vocab.txt"), _norm_cfg(cfg), int(cfg["data"]["max_len"]))


# -- subcommands -------------------------------------------------------------------


def cmd_prepare_data(args, cfg) -> int:
    d = cfg["data"]
    if args.input:
        d["source"] = args.input
    if args.out:
        d["dir"] = args.out
    norm = _norm_cfg(cfg)
    sizes = tuple(d["sizes"]) if d["sizes"] else PRESETS[d["preset"]]
    seed = int(d["seed"])
    if d["source"] == "synthetic":
        pairs = gen_synthetic(SyntheticGrammar.default(), sum(sizes), seed)
    else:
        if not Path(d["source"]).exists():
            raise UsageError(f"input file not found: {d['source']}")
        pairs = load_pairs(d["source"], norm)
    split = split_overlap_free(pairs, sizes, seed, norm) if d["overlap_free"] else split_standard(pairs, sizes, seed)
    split.provenance["source"] = str(d["source"])
    out = split.write(d["dir"])
    vocab = build_vocab([normalize(t, norm) for p in split.train for t in (p.source, p.target)], int(d["vocab_size"]))
    vocab.save(out / "vocab.txt")
    log.info("wrote %d/%d/%d pairs and a %d-token vocab to %s", *sizes, vocab.size, out)
    return 0


def _derive_line(source: str, target: str, norm: NormalizeConfig, max_len: int) -> str:
    x = [CLS, *normalize(source, norm).split()[:max_len], SEP]
    y = [*normalize(target, norm).split()[:max_len], SEP]
    return format_actions(derive_actions(x, y))


def cmd_derive_actions(args, cfg) -> int:
    norm, max_len = _norm_cfg(cfg), int(cfg["data"]["max_len"])
    if args.input == "-":
        lines = sys.stdin.read().splitlines()
    else:
        if not Path(args.input).exists():
            raise UsageError(f"input file not found: {args.input}")
        lines = Path(args.input).read_text(encoding="utf-8").splitlines()
    out = []
    for lineno, line in enumerate(lines, 1):
        cols = line.split("\t")
        if len(cols) < 2 or not cols[0].strip() or not cols[1].strip():
            log.warning("skipping malformed line %d", lineno)
            continue
        out.append(f"{cols[0]}\t{cols[1]}\t{_derive_line(cols[0], cols[1], norm, max_len)}\n")
    _emit("".join(out), args.output)
    return 0


def _emit(text: str, output: str | None) -> None:
    if output and output != "-":
        Path(output).parent.mkdir(parents=True, exist_ok=True)
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def cmd_train(args, cfg) -> int:
    from .eval_harness import train_model

    spec, corpus = _spec(cfg), _load_corpus(cfg)
    seed = int(args.seed if args.seed is not None else spec.train.seed)
    outdir = Path(cfg["outdir"]) / cfg["name"] / "train" / str(seed)
    para = train_model(corpus, spec, seed, outdir=outdir / "checkpoint", reuse=False)
    info = json.loads((outdir / "checkpoint" / "best" / "manifest.json").read_text())["extra"]["training"]
    metrics = {
        "seed": seed,
        "checkpoint_id": para.checkpoint_id,
        "best_epoch": info["best_epoch"],
        "best_valid_loss": info["best_valid_loss"],
    }
    (outdir / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    print(outdir / "checkpoint" / "best")
    return 0


def _load_paraphraser(path: str | None):
    from .pipeline import Paraphraser

    path = path or os.environ.get("ACTIONPARA_CKPT")
    if not path:
        raise UsageError("no checkpoint given (use --checkpoint or ACTIONPARA_CKPT)")
    if not (Path(path) / "manifest.json").exists():
        raise UsageError(f"no checkpoint at {path}")
    return Paraphraser.load(path)


def cmd_evaluate(args, cfg) -> int:
    from .eval_harness import run_action_modes

    spec, corpus = _spec(cfg), _load_corpus(cfg)
    para = _load_paraphraser(args.checkpoint)
    outdir = Path(cfg["outdir"]) / cfg["name"] / "evaluate"
    scores = run_action_modes(para, corpus, spec, int(args.seed), outdir=outdir)
    payload = {"checkpoint_id": para.checkpoint_id, "seed": int(args.seed), "modes": scores}
    (outdir / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(outdir / "metrics.json")
    return 0


def cmd_paraphrase(args, cfg) -> int:
    if args.actions is not None and args.mode is not None:
        raise UsageError("give at most one of --actions and --mode")
    mode = None
    if args.mode is not None:
        mode = Mode.parse(args.mode)
        if mode is Mode.ORACLE:
            raise UsageError("Oracle mode needs references; use evaluate")
    user = None
    if args.actions is not None:
        try:
            user = parse_actions(args.actions)
        except ValueError as e:
            raise UsageError(str(e)) from e
    para = _load_paraphraser(args.checkpoint)
    stream = sys.stdin if args.input in (None, "-") else open(args.input, encoding="utf-8")
    out = open(args.output, "w", encoding="utf-8") if args.output and args.output != "-" else sys.stdout
    try:
        for line in stream:
            text = line.rstrip("\n")
            if not text.strip():
                out.write("\n")
                continue
            try:
                gen = para.paraphrase(text, user, mode, args.beams, args.seed)
            except ValueError as e:
                raise UsageError(f"{e}: {' '.join(para.content_tokens(text))}") from e
            out.write(gen.paraphrase + "\n")
            if args.show_actions:
                log.info("actions: %s", gen.used_actions_str)
            out.flush()
    finally:
        if stream is not sys.stdin:
            stream.close()
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_grid(args, cfg) -> int:
    from .eval_harness import run_strategy_grid

    spec, corpus = _spec(cfg), _load_corpus(cfg)
    try:
        grid = []
        for cell in cfg["grid"]["cells"]:
            keep, copy_, inference = map(float, cell)
            grid.append(StrategyWeights(keep, copy_, inference))
            grid[-1].validate()
    except (TypeError, ValueError) as e:
        raise UsageError(f"grid.cells must be a list of [keep, copy, inference]: {e}") from e
    report = run_strategy_grid(grid, spec, corpus)
    print(Path(spec.outdir) / spec.name / "report.json")
    return 1 if report.failures and not report.cells else 0


def cmd_serve(args, cfg) -> int:
    import uvicorn

    from .service import create_app

    path = args.checkpoint or os.environ.get("ACTIONPARA_CKPT")
    port = int(args.port if args.port is not None else os.environ.get("ACTIONPARA_PORT", 8000))
    app = create_app(path)
    uvicorn.run(app, host=args.host, port=port, log_level="info")
    return 0


# -- parser ------------------------------------------------------------------------

_EPILOG = "config defaults (override with dotted key=value):\n" + json.dumps(DEFAULT_CONFIG, indent=2)


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="actionpara", description="Action-controlled paraphrase generation.", formatter_class=_HelpFormatter)
    p.add_argument("-v", "--verbose", action="count", default=0, help="debug logging and tracebacks")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, help_, config=True):
        sp = sub.add_parser(name, help=help_, description=help_, epilog=_EPILOG if config else None,
                            formatter_class=_HelpFormatter)
        if config:
            sp.add_argument("--config", default=None, help="JSON config file")
            sp.add_argument("overrides", nargs="*", default=[], metavar="KEY=VALUE",
                            help="dotted config overrides applied after --config, e.g. train.batch_size=32")
        return sp

    sp = add("prepare-data", "split a pair corpus (or the synthetic one) and build the vocabulary")
    sp.add_argument("--input", default=None, help="TSV of source<TAB>target (sets data.source)")
    sp.add_argument("--out", default=None, help="output directory (sets data.dir)")
    sp.set_defaults(func=cmd_prepare_data)

    sp = add("derive-actions", "write source<TAB>target<TAB>oracle actions for each pair")
    sp.add_argument("--input", required=True, help="TSV of source<TAB>target, or - for stdin")
    sp.add_argument("--output", default="-", help="output TSV path, or - for stdout")
    sp.set_defaults(func=cmd_derive_actions)

    sp = add("train", "train one model on the prepared data")
    sp.add_argument("--seed", type=int, default=None, help="training seed (default: train.seed)")
    sp.set_defaults(func=cmd_train)

    sp = add("evaluate", "score a checkpoint on the test split under each action mode")
    sp.add_argument("--checkpoint", default=None, help="checkpoint directory (default: $ACTIONPARA_CKPT)")
    sp.add_argument("--seed", type=int, default=0, help="seed for Random-mode actions")
    sp.set_defaults(func=cmd_evaluate)

    sp = add("paraphrase", "paraphrase one sentence per input line", config=False)
    sp.add_argument("--checkpoint", default=None, help="checkpoint directory (default: $ACTIONPARA_CKPT)")
    sp.add_argument("--actions", default=None,
                    help="K/P/O per content token, e.g. 'K K P O' or 'KKPO' (default: all O)")
    sp.add_argument("--mode", default=None, choices=[m.value for m in Mode if m is not Mode.ORACLE],
                    help="fill actions by mode instead of --actions (default: Os)")
    sp.add_argument("--beams", type=int, default=8, help="beam width")
    sp.add_argument("--seed", type=int, default=0, help="seed for Random-mode actions")
    sp.add_argument("--input", default=None, help="input file (default: stdin)")
    sp.add_argument("--output", default=None, help="output file (default: stdout)")
    sp.add_argument("--show-actions", action="store_true", help="log the action string fed to the model")
    sp.set_defaults(func=cmd_paraphrase)

    sp = add("grid", "train and evaluate every strategy-weight cell in grid.cells")
    sp.set_defaults(func=cmd_grid)

    sp = add("serve", "start the HTTP service", config=False)
    sp.add_argument("--checkpoint", default=None, help="checkpoint directory (default: $ACTIONPARA_CKPT)")
    sp.add_argument("--port", type=int, default=None, help="port (default: $ACTIONPARA_PORT or 8000)")
    sp.add_argument("--host", default="127.0.0.1", help="bind address")
    sp.set_defaults(func=cmd_serve)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    try:
        cfg = load_config(getattr(args, "config", None), getattr(args, "overrides", []))
        return args.func(args, cfg)
    except UsageError as e:
        log.error("%s", e)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as e:  # noqa: BLE001 - any runtime failure maps to status 2
        log.error("%s: %s", type(e).__name__, e, exc_info=args.verbose > 0)
        return 2


if __name__ == "__main__":
    sys.exit(main())
