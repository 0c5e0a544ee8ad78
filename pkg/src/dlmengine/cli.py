"""The ``engine`` command line: single runs, sweep grids, corpus generation.

Exit codes: 0 success, 2 configuration problems, 3 oracle failures,
4 step-limit overruns.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .bench import (
    Corpus,
    SpecError,
    StructuredCorpusSpec,
    default_suite,
    gen_structured_corpus,
    load_corpus,
    run_matrix,
    save_corpus,
)
from .core import Canvas, ConfigError, DecodeConfig, EngineError, Vocabulary
from .decoders import StepLimitError, decode_ablation, decode_pvf, decode_static, decode_threshold
from .metrics import Summary, write_summary_json
from .oracle import OracleError, bridge_connect, load_table_oracle
from .vocabplan import build_planning_set, default_static_list, load_static_list

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ORACLE = 3
EXIT_STEP_LIMIT = 4


def _parse_ids(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(part) for part in text.split(","))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="engine", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="decode one sequence with one strategy")
    run.add_argument("--strategy", required=True, choices=("static", "threshold", "ablation", "pvf"))
    run.add_argument("--oracle", required=True, help="enum:<corpus.json> | table:<table.jsonl> | bridge:<host:port>")
    run.add_argument("--config", help="JSON or key=value decode config")
    run.add_argument("--out", help="output directory")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--trace", action="store_true", help="write trace.jsonl to the output directory")
    run.add_argument("--vocab", help="vocabulary file (required for table:/bridge: oracles)")
    run.add_argument("--prompt", default="", help="comma-separated prompt token ids for table:/bridge: oracles")
    run.add_argument("--planning-list", help="static planning-token list file (default: shipped list)")
    run.add_argument("--mode", choices=("RANDOM", "PLANNING"), default="PLANNING", help="ablation variant")
    run.add_argument("--band-lo", type=float, default=0.2)
    run.add_argument("--band-hi", type=float, default=0.6)
    run.add_argument(
        "--table-forwards", choices=("unit", "batch"), default="unit",
        help="table oracle forward accounting: 1 per call, or batch size (bridge replay)",
    )

    sweep = sub.add_parser("sweep", help="run a strategy/config grid and emit CSV + Pareto points")
    sweep.add_argument("--grid", required=True, help="grid JSON file")
    sweep.add_argument("--out", help="output directory (overrides the grid file)")

    corpus = sub.add_parser("corpus", help="corpus utilities")
    corpus_sub = corpus.add_subparsers(dest="corpus_command", required=True)
    gen = corpus_sub.add_parser("gen", help="generate corpus files from a spec")
    gen.add_argument("--spec", required=True, help="corpus or suite spec JSON")
    gen.add_argument("--out", default=".", help="output directory")
    return parser


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return payload


def _config_for_run(args: argparse.Namespace, corpus: Corpus | None) -> DecodeConfig:
    if args.config:
        if corpus is not None:
            raw: dict = {}
            with open(args.config, "r", encoding="utf-8") as fh:
                text = fh.read()
            if text.lstrip().startswith("{"):
                raw = json.loads(text)
            else:
                for line in text.splitlines():
                    line = line.strip()
                    if line and not line.startswith("#") and "=" in line:
                        key, value = line.split("=", 1)
                        raw[key.strip()] = value.strip()
            raw.setdefault("gen_length", corpus.gen_length)
            raw.setdefault("block_size", corpus.block_size)
            return DecodeConfig.from_mapping(
                {k: (_coerce(v) if isinstance(v, str) else v) for k, v in raw.items()}
            )
        return DecodeConfig.from_file(args.config)
    if corpus is not None:
        return corpus.config()
    raise ConfigError("--config is required for table:/bridge: oracles")


def _coerce(text: str) -> object:
    from .core import _coerce_scalar

    return _coerce_scalar(text)


def _cmd_run(args: argparse.Namespace) -> int:
    kind, sep, locator = args.oracle.partition(":")
    if not sep:
        raise ConfigError("--oracle must look like enum:<path>, table:<path> or bridge:<addr>")
    corpus = None
    if kind == "enum":
        corpus = load_corpus(locator)
        vocab = corpus.vocab
        prompt = corpus.prompt
        oracle = corpus.oracle()
    elif kind in ("table", "bridge"):
        if not args.vocab:
            raise ConfigError(f"--vocab is required with {kind}: oracles")
        vocab = Vocabulary.from_file(args.vocab)
        prompt = _parse_ids(args.prompt)
        if kind == "table":
            oracle = load_table_oracle(locator, count_states_as_forwards=args.table_forwards == "batch")
        else:
            oracle = bridge_connect(locator)
            info = oracle.info
            if (info.vocab_size, info.mask_id, info.eos_id, info.pad_id) != (
                len(vocab), vocab.mask_id, vocab.eos_id, vocab.pad_id,
            ):
                raise OracleError("bridge info frame does not match the --vocab file")
    else:
        raise ConfigError(f"unknown oracle kind {kind!r}")

    cfg = _config_for_run(args, corpus)
    static_list = load_static_list(args.planning_list) if args.planning_list else default_static_list()
    planning_set = build_planning_set(vocab, static_list)

    out_dir = args.out
    trace_path = None
    if args.trace:
        out_dir = out_dir or "."
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        if args.trace:
            trace_path = os.path.join(out_dir, "trace.jsonl")

    canvas = Canvas.fresh(prompt, cfg.gen_length, vocab.mask_id)
    try:
        if args.strategy == "static":
            final, report = decode_static(canvas, oracle, vocab, cfg, trace_path=trace_path)
        elif args.strategy == "threshold":
            final, report = decode_threshold(canvas, oracle, vocab, cfg, trace_path=trace_path)
        elif args.strategy == "pvf":
            final, report = decode_pvf(
                canvas, oracle, vocab, cfg, planning_set=planning_set, trace_path=trace_path
            )
        else:
            final, report = decode_ablation(
                canvas, oracle, vocab, cfg,
                mode=args.mode, band=(args.band_lo, args.band_hi),
                rng_seed=args.seed, planning_set=planning_set, trace_path=trace_path,
            )
    finally:
        oracle.close()

    payload = {
        "strategy": args.strategy,
        "nfe": report.nfe,
        "raw_forwards": report.raw_forwards,
        "steps": report.steps,
        "planning_rate": report.planning_rate,
        "commits_by_route": {route.value: n for route, n in report.commits_by_route.items()},
        "truncated_at": report.truncated_at,
        "final_text": list(final.gen),
        "final_tokens": [vocab.token(t) for t in final.gen],
    }
    if corpus is not None:
        payload["accuracy"] = int(tuple(final.gen) == tuple(corpus.target))
    if report.extra_conf_mean is not None:
        payload["extra_conf_mean"] = report.extra_conf_mean
    if out_dir:
        with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def _cmd_sweep(args: argparse.Namespace) -> int:
    grid = _load_json(args.grid)
    out_dir = args.out or grid.get("out")
    if isinstance(grid.get("suite"), dict):
        suite = grid["suite"]
        corpora = default_suite(seed=int(suite.get("seed", 7)), size=int(suite.get("size", 60)))
    elif isinstance(grid.get("corpora"), list):
        corpora = [load_corpus(path) for path in grid["corpora"]]
    else:
        raise ConfigError(f"{args.grid}: grid needs a 'suite' object or a 'corpora' list")
    strategies = grid.get("strategies")
    if not isinstance(strategies, list) or not strategies:
        raise ConfigError(f"{args.grid}: grid needs a nonempty 'strategies' list")
    cfg_grid = grid.get("grid", [{}])
    band = tuple(grid.get("band", (0.2, 0.6)))
    rows = run_matrix(
        corpora, strategies, cfg_grid, out_dir,
        seed=int(grid.get("seed", 0)), band=band,  # type: ignore[arg-type]
    )
    by_strategy: dict[str, list[dict]] = {}
    for row in rows:
        by_strategy.setdefault(str(row["strategy"]), []).append(row)
    summaries = {}
    for name, group in sorted(by_strategy.items()):
        mean_nfe = sum(r["nfe"] for r in group) / len(group)
        mean_acc = sum(r["accuracy"] for r in group) / len(group)
        summaries[name] = Summary(
            runs=len(group),
            mean_nfe=mean_nfe,
            mean_raw_forwards=sum(r["raw_forwards"] for r in group) / len(group),
            mean_steps=sum(r["steps"] for r in group) / len(group),
            mean_planning_rate=sum(r["planning_rate"] for r in group) / len(group),
            accuracy=mean_acc,
        )
        print(f"{name}: runs={len(group)} mean_nfe={mean_nfe:.2f} accuracy={mean_acc:.3f}")
    if out_dir:
        write_summary_json(summaries, os.path.join(out_dir, "summary.json"))
    return EXIT_OK


def _cmd_corpus_gen(args: argparse.Namespace) -> int:
    spec = _load_json(args.spec)
    os.makedirs(args.out, exist_ok=True)
    if isinstance(spec.get("suite"), dict):
        suite = spec["suite"]
        corpora = default_suite(seed=int(suite.get("seed", 7)), size=int(suite.get("size", 60)))
    else:
        try:
            corpus_spec = StructuredCorpusSpec(
                num_templates=int(spec["num_templates"]),
                template_length=int(spec["template_length"]),
                scaffold_positions=tuple(spec.get("scaffold_positions", ())),
                content_positions=tuple(spec.get("content_positions", ())),
                weights=tuple(float(w) for w in spec["weights"]),
                rng_seed=int(spec.get("rng_seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecError(f"{args.spec}: bad corpus spec: {exc}") from exc
        corpora = [gen_structured_corpus(corpus_spec)]
    for corpus in corpora:
        path = os.path.join(args.out, f"{corpus.name}.json")
        save_corpus(corpus, path)
        print(path)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "corpus":
            return _cmd_corpus_gen(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, SpecError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OracleError, TimeoutError) as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except StepLimitError as exc:
        print(f"step limit: {exc}", file=sys.stderr)
        return EXIT_STEP_LIMIT
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
