"""Command-line entry point.

Exit codes: 0 success, 1 usage or input error, 2 verification failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import engine
from .dataset import (
    DatasetError,
    GenConfig,
    compute_stats,
    generate,
    read_jsonl,
    verify_records,
    write_jsonl,
)
from .graph import GraphError, catalog
from .model import CbnParams, GenerationError, ModelError
from .query import DegenerateInstance, QueryError, QueryInstance, QueryType, decide_answer

log = logging.getLogger("ladderqa")

EXIT_OK, EXIT_USAGE, EXIT_VERIFY = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _mix(text: str) -> tuple:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad alignment mix {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("alignment mix needs three comma-separated fractions")
    return vals


def _steps(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad step list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ladderqa", description="Causal question generation, answering and evaluation.")
    p.add_argument("--config", type=Path, help="JSON file whose keys act as defaults for the subcommand flags")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="generate a benchmark JSONL file")
    g.add_argument("--size", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--mix", type=_mix, default=(1 / 3, 1 / 3, 1 / 3), help="commonsensical,anti,nonsensical fractions")
    g.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    g.add_argument("--max-resamples", type=int, default=1000)

    a = sub.add_parser("answer", help="answer one query on a catalog graph")
    a.add_argument("--graph", required=True)
    a.add_argument("--query", required=True)
    a.add_argument("--params", type=Path, required=True, help="CPT JSON keyed by node and parent bit pattern")
    a.add_argument("--treatment-value", type=int, choices=(0, 1))
    a.add_argument("--candidate", help="comma-separated adjustment candidate set")
    a.add_argument("--negate", action="store_true", help="ask the flipped question direction")

    v = sub.add_parser("verify", help="re-derive every record and compare")
    v.add_argument("--in", dest="inp", type=Path, required=True)

    s = sub.add_parser("stats", help="dataset statistics")
    s.add_argument("--in", dest="inp", type=Path, required=True)
    s.add_argument("--json", action="store_true")

    pr = sub.add_parser("prompts", help="write CausalCoT subquestion chains (no network)")
    pr.add_argument("--in", dest="inp", type=Path, required=True)
    pr.add_argument("--out", type=Path, required=True)
    pr.add_argument("--drop-steps", type=_steps, default=())

    e = sub.add_parser("eval", help="run the CausalCoT chain against a model and grade")
    e.add_argument("--in", dest="inp", type=Path, required=True)
    e.add_argument("--endpoint", help="chat completions URL (or set LADDERQA_ENDPOINT)")
    e.add_argument("--model", help="model name (or set LADDERQA_MODEL)")
    e.add_argument("--mock", choices=("oracle", "yes", "no", "garbage"), help="use a scripted client instead")
    e.add_argument("--parallelism", type=int, default=os.cpu_count() or 1)
    e.add_argument("--drop-steps", type=_steps, default=())
    e.add_argument("--transcripts", type=Path, help="write transcripts JSONL here")
    e.add_argument("--report", type=Path, help="write the JSON report here")
    e.add_argument("--score-steps", action="store_true", help="also score steps 1 and 2")
    return p


def _load_config(path: Path) -> dict:
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def _parse(argv: list) -> argparse.Namespace:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    parser = build_parser()
    if known.config:
        cfg = _load_config(known.config)
        used = set()
        # config values become defaults, so flags on the command line still win
        for sub in parser._subparsers._group_actions[0].choices.values():
            for action in sub._actions:
                if action.dest in cfg:
                    # argparse runs string defaults through the flag's type
                    action.default = cfg[action.dest]
                    action.required = False
                    used.add(action.dest)
        unknown = sorted(set(cfg) - used)
        if unknown:
            raise UsageError(f"unknown config keys {unknown}")
    return parser.parse_args(argv)


def cmd_generate(args) -> int:
    config = GenConfig(
        total=args.size,
        seed=args.seed,
        alignment_mix=tuple(args.mix),
        workers=args.workers,
        max_resamples=args.max_resamples,
    )
    n = write_jsonl(generate(config), args.out)
    log.info("wrote %d records to %s", n, args.out)
    return EXIT_OK


def cmd_answer(args) -> int:
    cgte = catalog(args.graph)
    params = CbnParams.from_json(json.loads(args.params.read_text(encoding="utf-8")), cgte.dag)
    cand = tuple(c.strip() for c in args.candidate.split(",")) if args.candidate else None
    qinst = QueryInstance(
        QueryType.parse(args.query),
        cgte,
        negate=args.negate,
        treatment_value=args.treatment_value,
        candidate=cand,
        strict=False,
    )
    est = engine.derive_estimand(cgte, qinst)
    terms = engine.fill_data(cgte, params, engine.required_data(est))
    value = engine.evaluate(est.expr, {t.key: t.value for t in terms})
    truth = engine.oracle(cgte, params, qinst)
    print(f"estimand: {est.text}")
    print(f"strategy: {est.strategy}")
    for t in terms:
        print(f"data: {t.symbol()} = {t.value:.4f}")
    print(f"value: {value:.4f}")
    print(f"oracle: {truth:.4f}")
    try:
        print(f"answer: {decide_answer(qinst.qtype, value, qinst.negate).capitalize()}")
    except DegenerateInstance as exc:
        print(f"answer: undecided ({exc})")
    return EXIT_OK


def cmd_verify(args) -> int:
    records = read_jsonl(args.inp)
    bad = verify_records(records)
    for rid, problems in bad.items():
        print(f"MISMATCH {rid}: {'; '.join(problems)}")
    print(f"verified {len(records) - len(bad)}/{len(records)} records")
    return EXIT_VERIFY if bad else EXIT_OK


def cmd_stats(args) -> int:
    stats = compute_stats(read_jsonl(args.inp))
    print(json.dumps(stats.to_json(), indent=2) if args.json else stats.table())
    return EXIT_OK


def cmd_prompts(args) -> int:
    from .evalharness import causalcot_prompts, chain_prompt, record_question

    records = read_jsonl(args.inp)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            subs = causalcot_prompts(r, args.drop_steps)
            q = record_question(r)
            row = {"id": r.id, "question": q, "subquestions": subs, "first_prompt": chain_prompt(q, subs, [])}
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    log.info("wrote %d prompt chains to %s", len(records), args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    from . import evalharness as eh

    records = read_jsonl(args.inp)
    if args.mock:
        client = {
            "oracle": lambda: eh.MockClient.from_answers(records),
            "yes": lambda: eh.MockClient.constant("yes"),
            "no": lambda: eh.MockClient.constant("no"),
            "garbage": lambda: eh.MockClient(lambda p, s: "0.40", "garbage"),
        }[args.mock]()
    else:
        client = eh.HttpClient(endpoint=args.endpoint, model=args.model)
    transcripts = eh.run(records, client, parallelism=args.parallelism, drop_steps=args.drop_steps)
    if args.transcripts:
        eh.write_transcripts(transcripts, args.transcripts)
    report = eh.grade(transcripts, records, name=client.name)
    print(report.table())
    out = report.to_json()
    if args.score_steps:
        out["steps"] = eh.score_steps(transcripts, records)
        print(json.dumps(out["steps"]))
    if args.report:
        args.report.write_text(json.dumps(out, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "answer": cmd_answer,
    "verify": cmd_verify,
    "stats": cmd_stats,
    "prompts": cmd_prompts,
    "eval": cmd_eval,
}


def main(argv: list | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    from .evalharness import ConfigError

    try:
        return COMMANDS[args.command](args)
    except (OSError, DatasetError, GraphError, ModelError, QueryError, ConfigError, GenerationError,
            engine.IdentificationError) as exc:
        print(f"ladderqa {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
