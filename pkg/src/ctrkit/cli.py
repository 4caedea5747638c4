"""``ctrkit`` command line.

Every command writes a provenance header (config, seed, engine version,
tokenizer options and the argv needed to re-run it) in front of its payload.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Sequence

from . import __version__
from .artifacts import (
    SCHEMA_VERSION,
    ArtifactError,
    atomic_write,
    make_header,
    read_artifact,
    render_jsonl,
    render_text,
    render_tsv,
)
from .corpus import DatasetError, TokenizerOptions, dump_instance, load_dataset, load_system_outputs, make_instance
from .decoder import SWEEP_COLUMNS, DecodeError, DecoderConfig, decode, sweep
from .lm.base import LMError
from .lm.ngram import train_ngram
from .lm.remote import ENV_URL, RemoteLM, serve_model
from .metrics import METRIC_NAMES, score_instance

logger = logging.getLogger("ctrkit")

# Flags naming output files; dropped from the argv recorded for re-runs.
OUTPUT_FLAGS = {"--out", "--trace", "--pool-out", "--audit-out", "--rejected-out", "--transcripts"}


class CliError(Exception):
    pass


def _csv(typ):
    def parse(text: str):
        return [typ(v) for v in text.split(",") if v.strip()]

    return parse


def _tokenizer(args) -> TokenizerOptions:
    return TokenizerOptions(lowercase=not args.no_lowercase, stem=args.stem)


def replay_argv(argv: Sequence[str]) -> list[str]:
    out, skip = [], False
    for tok in argv:
        if skip:
            skip = False
            continue
        name = tok.split("=", 1)[0]
        if name in OUTPUT_FLAGS:
            skip = "=" not in tok
            continue
        out.append(tok)
    return out


def _load(path: str, strict: bool = True):
    return load_dataset(path, strict=strict)


def _write_failures(out: str | None, failures: list) -> None:
    if not failures:
        return
    manifest = json.dumps({"failures": failures}, indent=2) + "\n"
    if out in (None, "-"):
        sys.stderr.write(manifest)
    else:
        atomic_write(out + ".failures.json", manifest)
    logger.warning("%d failure(s) recorded", len(failures))


# -- models -----------------------------------------------------------------


def _build_model(args, dataset):
    kind = args.model or ("remote" if os.environ.get(ENV_URL) else "ngram")
    if kind == "remote":
        return RemoteLM.from_env(), {"model": "remote", "url": os.environ.get(ENV_URL)}
    model = train_ngram(
        [inst.document for inst in dataset],
        args.order,
        args.smoothing,
        _tokenizer(args),
        args.source_weight,
        sentence_level=not args.whole_documents,
    )
    return model, {"model": "ngram", **model.config()}


def _add_model_args(p):
    p.add_argument("--model", choices=["ngram", "remote"], default=None,
                   help=f"default: remote when {ENV_URL} is set, else ngram")
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--smoothing", type=float, default=0.01, help="add-k constant")
    p.add_argument("--source-weight", type=float, default=0.5,
                   help="weight of the per-document copy component of the n-gram model")
    p.add_argument("--whole-documents", action="store_true",
                   help="train on whole documents instead of sentences (one end token per document)")


def _decoder_config(args, **over) -> DecoderConfig:
    values = dict(
        beam_size=args.beam,
        lam=args.lam,
        lookahead=args.lookahead,
        g_metric=args.g,
        max_output_tokens=args.max_tokens,
        length_normalize=args.length_normalize,
        top_k=args.top_k,
        tokenizer=_tokenizer(args),
    )
    values.update(over)
    return DecoderConfig(**values)


# -- commands ----------------------------------------------------------------


def cmd_score(args, argv) -> int:
    dataset = _load(args.data)
    system = load_system_outputs(args.system)
    by_id = dataset.by_id()
    unknown = sorted(set(system) - set(by_id))
    missing = sorted(set(by_id) - set(system))
    if unknown:
        logger.warning("system ids not in dataset: %s", ", ".join(unknown))
    if missing:
        logger.warning("dataset ids without system output: %s", ", ".join(missing))
    ids = [inst.id for inst in dataset if inst.id in system]
    if not ids:
        raise CliError("system output and dataset share no ids")
    opts = _tokenizer(args)
    reports = [(i, score_instance(system[i], by_id[i], args.against, opts)) for i in ids]
    mean = {m: [sum(r[m][j] for _, r in reports) / len(reports) for j in range(3)] for m in METRIC_NAMES}
    header = make_header(
        "score", argv, {"against": args.against, "data": args.data, "system": args.system,
                        "missing_ids": missing, "unknown_ids": unknown},
        None, opts.as_dict(),
    )
    if args.format == "tsv":
        cols = ["id"] + [f"{m}_{s}" for m in METRIC_NAMES for s in ("p", "r", "f1")]
        rows = [[i] + [f"{r[m][j]:.6f}" for m in METRIC_NAMES for j in range(3)] for i, r in reports]
        rows.append(["MEAN"] + [f"{mean[m][j]:.6f}" for m in METRIC_NAMES for j in range(3)])
        text = render_tsv(header, cols, rows)
    elif args.format == "json":
        recs = [{"id": i, **{m: {"p": r[m][0], "r": r[m][1], "f1": r[m][2]} for m in METRIC_NAMES},
                 "degenerate": r.degenerate} for i, r in reports]
        recs.append({"id": "MEAN", **{m: {"p": v[0], "r": v[1], "f1": v[2]} for m, v in mean.items()}})
        text = render_jsonl(header, recs)
    else:
        text = render_text(header, score_markdown(reports, mean))
    atomic_write(args.out, text)
    return 0


def _pct(x: float) -> str:
    return f"{100 * x:.1f}"


def score_markdown(reports, mean) -> str:
    lines = ["| id | R-1 | R-2 | R-L | M | BertScore |", "|---|---|---|---|---|---|"]
    for i, r in reports:
        lines.append(f"| {i} | " + " | ".join(_pct(r[m].f1) for m in METRIC_NAMES) + " | n/a (out of scope) |")
    lines.append("| **mean** | " + " | ".join(_pct(mean[m][2]) for m in METRIC_NAMES) + " | n/a (out of scope) |")
    return "\n".join(lines) + "\n"


def cmd_decode(args, argv) -> int:
    dataset = _load(args.data)
    model, model_cfg = _build_model(args, dataset)
    config = _decoder_config(args)
    records, traces, failures = [], [], []
    for inst in dataset:
        try:
            result = decode(model, inst, config)
        except (LMError, DecodeError) as exc:
            failures.append({"id": inst.id, "error": str(exc)})
            continue
        records.append({"id": inst.id, "output": result.text})
        traces.extend({"id": inst.id, **step} for step in result.trace)
    header = make_header("decode", argv, {"decoder": config.as_dict(), "model": model_cfg, "data": args.data},
                         args.seed, config.tokenizer.as_dict())
    atomic_write(args.out, render_jsonl(header, records))
    if args.trace:
        atomic_write(args.trace, render_jsonl({**header, "kind": "decode-trace"}, traces))
    _write_failures(args.out, failures)
    return 0


def cmd_sweep(args, argv) -> int:
    dataset = _load(args.data)
    model, model_cfg = _build_model(args, dataset)
    base = _decoder_config(args)
    rows = sweep(model, dataset, args.beams, args.lambdas, args.lookaheads, args.g_metrics, base)
    header = make_header(
        "sweep", argv,
        {"decoder": base.as_dict(), "model": model_cfg, "data": args.data,
         "grid": {"beams": args.beams, "lambdas": args.lambdas, "lookaheads": args.lookaheads,
                  "g_metrics": args.g_metrics},
         "nondeterministic_columns": ["runtime_ms"]},
        args.seed, base.tokenizer.as_dict(),
    )
    atomic_write(args.out, render_tsv(header, SWEEP_COLUMNS, [r.cells() for r in rows]))
    failures = [{"cell": r.config.as_dict(), "id": i, "error": e} for r in rows for i, e in r.failures]
    _write_failures(args.out, failures)
    return 0


def cmd_quark(args, argv) -> int:
    from .quark import (
        CLI_SCHEDULES,
        REPORT_COLUMNS,
        SCHEDULE_SWEEP_COLUMNS,
        CountLearner,
        QuarkConfig,
        run_loop,
        schedule_sweep,
    )

    dataset = _load(args.data)
    model, model_cfg = _build_model(args, dataset)
    schedules = [CLI_SCHEDULES[s] for s in args.reward]
    config = QuarkConfig(
        quantiles=args.quantiles,
        samples_per_instance=args.samples_per_instance,
        temperature=args.temperature,
        kl_coefficient=args.beta,
        iterations=args.iterations,
        schedule=schedules[0],
        max_tokens=args.max_tokens,
        tokenizer=_tokenizer(args),
    )
    learner = CountLearner(args.learner_order)
    cfg = {"quark": config.as_dict(), "model": model_cfg, "data": args.data, "learner_order": args.learner_order,
           "pool": "persisted across reward switches; rewards recomputed"}
    if len(schedules) > 1:
        rows = schedule_sweep(dataset, model, config, schedules, learner, args.seed)
        cfg["schedules"] = [s.value for s in schedules]
        header = make_header("quark-schedules", argv, cfg, args.seed, config.tokenizer.as_dict())
        body = [[s.value] + [f"{m[c]:.6f}" for c in SCHEDULE_SWEEP_COLUMNS[1:]] for s, m in rows]
        atomic_write(args.out, render_tsv(header, SCHEDULE_SWEEP_COLUMNS, body))
        return 0
    report = run_loop(dataset, model, config, learner, args.seed)
    header = make_header("quark", argv, cfg, args.seed, config.tokenizer.as_dict(),
                         baseline_mean_top_reward=round(report.baseline_reward, 6))
    atomic_write(args.out, render_tsv(header, REPORT_COLUMNS, [r.cells() for r in report.rows]))
    if args.pool_out:
        atomic_write(args.pool_out, render_jsonl({**header, "kind": "quark-pool"}, [s.export() for s in report.pool]))
    return 0


def cmd_distill(args, argv) -> int:
    from .distill import CompletionClient, PromptConfig, build_prompt, filter_generated, generate_dataset

    dataset = _load(args.data)
    pconf = PromptConfig(args.variant, args.exemplars, args.list_highlights, args.exemplar_file, args.instructions_file)
    opts = _tokenizer(args)
    header = make_header("distill", argv, {"prompt": pconf.as_dict(), "threshold": args.threshold,
                                           "temperature": args.temperature, "max_tokens": args.max_tokens,
                                           "data": args.data}, args.seed, opts.as_dict())
    if args.prompt_only:
        recs = [{"id": inst.id, "prompt": build_prompt(inst, pconf)} for inst in dataset]
        atomic_write(args.out, render_jsonl({**header, "kind": "distill-prompts"}, recs))
        return 0
    client = CompletionClient.from_env()
    gens = generate_dataset(client, list(dataset), pconf, args.temperature, args.max_tokens, args.seed, args.parallelism)
    split = filter_generated([(inst, g.text) for inst, g in zip(dataset, gens)], args.threshold, opts)
    kept_ids = {inst.id for inst, _, _ in split.kept}
    scores = {inst.id: s for inst, _, s in split.kept + split.rejected}

    def with_ref(inst, text):
        return dump_instance(make_instance(inst.id, inst.document, inst.highlights, text))

    atomic_write(args.out, render_jsonl(header, [with_ref(i, t) for i, t, _ in split.kept]))
    audit = [{"id": inst.id, "rougeL_f1_vs_highlights": scores[inst.id], "flagged": g.flagged,
              "kept": inst.id in kept_ids} for inst, g in zip(dataset, gens)]
    audit_path = args.audit_out or (None if args.out in (None, "-") else args.out + ".audit.jsonl")
    if audit_path:
        atomic_write(audit_path, render_jsonl({**header, "kind": "distill-audit"}, audit))
    if args.rejected_out:
        atomic_write(args.rejected_out, render_jsonl({**header, "kind": "distill-rejected"},
                                                     [with_ref(i, t) for i, t, _ in split.rejected]))
    if args.transcripts:
        atomic_write(args.transcripts, render_jsonl({**header, "kind": "distill-transcripts"},
                                                    [{"id": inst.id, "prompt": g.prompt, "raw": g.raw}
                                                     for inst, g in zip(dataset, gens)]))
    return 0


def cmd_audit(args, argv) -> int:
    from .distill import audit_dataset

    gold = _load(args.gold)
    opts = _tokenizer(args)
    rows = []
    for path in args.candidate:
        mean, scores = audit_dataset(list(gold), list(_load(path)), opts)
        rows.append([path, str(len(scores)), f"{mean:.6f}"])
    header = make_header("audit", argv, {"gold": args.gold, "candidates": args.candidate}, None, opts.as_dict())
    atomic_write(args.out, render_tsv(header, ["candidate", "n", "mean_rougeL_f1"], rows))
    return 0


def _md_table(columns, rows) -> str:
    lines = ["| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
    lines.extend("| " + " | ".join(r) + " |" for r in rows)
    return "\n".join(lines) + "\n"


def build_report(paths: Sequence[str]) -> str:
    if not paths:
        raise CliError("report needs at least one artifact")
    arts = [read_artifact(p) for p in paths]
    for a in arts:
        v = a.header.get("schema")
        if v != SCHEMA_VERSION:
            raise ArtifactError(
                f"schema version mismatch: {a.path} has schema version {v}, this engine reads version {SCHEMA_VERSION}"
            )
    out = ["# ctrkit report", "", f"engine version {__version__}, schema version {SCHEMA_VERSION}", ""]
    for a in arts:
        h = a.header
        out.append(f"## {a.kind}: {os.path.basename(a.path)}")
        out.append("")
        out.append(f"- produced by ctrkit {h.get('version')} (schema {h.get('schema')})")
        out.append(f"- seed: {h.get('seed')}")
        out.append(f"- tokenizer: {json.dumps(h.get('tokenizer'), sort_keys=True)}")
        out.append(f"- command: `ctrkit {' '.join(h.get('argv', []))}`")
        out.append("")
        if a.format == "tsv":
            cols, rows = a.tsv_rows()
            out.append(_md_table(cols, rows))
        elif a.format == "text":
            out.append(a.body)
        else:
            out.append(f"{len(a.records())} JSONL records")
            out.append("")
    return "\n".join(out)


def cmd_report(args, argv) -> int:
    atomic_write(args.out, build_report(args.artifacts))
    return 0


def cmd_serve_lm(args, argv) -> int:
    dataset = _load(args.data)
    model, _ = _build_model(argparse.Namespace(**{**vars(args), "model": "ngram"}), dataset)
    server = serve_model(model, args.host, args.port).start()
    print(f"serving on {server.url}", flush=True)
    try:
        server._thread.join()
    except KeyboardInterrupt:
        server.stop()
    return 0


def cmd_rerun(args, argv) -> int:
    art = read_artifact(args.artifact)
    new = list(art.header["argv"]) + ["--out", args.out or "-"]
    return main(new)


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--stem", action="store_true", help="Porter-stem tokens")
    common.add_argument("--no-lowercase", action="store_true")
    common.add_argument("--out", default=None, help="output file (default stdout)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ctrkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ctrkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", parents=[common], help="score system outputs against highlights or references")
    p.add_argument("--data", required=True)
    p.add_argument("--system", required=True)
    p.add_argument("--against", choices=["highlights", "reference"], default="highlights")
    p.add_argument("--format", choices=["tsv", "json", "markdown"], default="tsv")
    p.set_defaults(func=cmd_score)

    def decoder_args(p, grid=False):
        if not grid:
            p.add_argument("--beam", type=int, default=8)
            p.add_argument("--lambda", dest="lam", type=float, default=1.0)
            p.add_argument("--lookahead", type=int, default=16)
            p.add_argument("--g", choices=["rougeL", "meteor"], default="rougeL")
        p.add_argument("--max-tokens", type=int, default=64)
        p.add_argument("--top-k", type=int, default=None)
        p.add_argument("--length-normalize", action="store_true")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("decode", parents=[common], help="highlight-sensitive lookahead decoding")
    p.add_argument("--data", required=True)
    _add_model_args(p)
    decoder_args(p)
    p.add_argument("--trace", default=None, help="write per-step beam trace JSONL here")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("sweep", parents=[common], help="decoder hyperparameter grid")
    p.add_argument("--data", required=True)
    _add_model_args(p)
    decoder_args(p, grid=True)
    p.add_argument("--beams", type=_csv(int), default=[2, 4, 6, 8])
    p.add_argument("--lambdas", type=_csv(float), default=[0.0, 1.0])
    p.add_argument("--lookaheads", type=_csv(int), default=[16])
    p.add_argument("--g-metrics", type=_csv(str), default=["rougeL_f1"])
    p.set_defaults(func=cmd_sweep, beam=8, lam=1.0, lookahead=16, g="rougeL")

    p = sub.add_parser("quark", parents=[common], help="reward-quantized RL loop with the toy learner")
    p.add_argument("--data", required=True)
    _add_model_args(p)
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--quantiles", type=int, default=8)
    p.add_argument("--reward", type=_csv(str), default=["alternate-pr"],
                   help="alternate-pr|p-f1|r-f1|f1; a comma list compares schedules")
    p.add_argument("--samples-per-instance", type=int, default=4)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0, help="KL-style interpolation weight toward the base model")
    p.add_argument("--max-tokens", type=int, default=32)
    p.add_argument("--learner-order", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pool-out", default=None)
    p.set_defaults(func=cmd_quark)

    p = sub.add_parser("distill", parents=[common], help="generate replacement summaries with an LLM")
    p.add_argument("--data", required=True)
    p.add_argument("--variant", choices=["modular", "regular"], default="modular")
    p.add_argument("--exemplars", type=int, default=2)
    p.add_argument("--list-highlights", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--exemplar-file", default=None)
    p.add_argument("--instructions-file", default=None)
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--max-tokens", type=int, default=512)
    p.add_argument("--parallelism", type=int, default=2)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--prompt-only", action="store_true", help="write prompts without calling the endpoint")
    p.add_argument("--audit-out", default=None)
    p.add_argument("--rejected-out", default=None)
    p.add_argument("--transcripts", default=None)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("audit", parents=[common], help="ROUGE-L F1 of candidate highlight sets vs gold")
    p.add_argument("--gold", required=True)
    p.add_argument("--candidate", required=True, action="append")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("report", parents=[common], help="merge artifacts into one markdown document")
    p.add_argument("artifacts", nargs="+")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve-lm", parents=[common], help="serve the n-gram model over the remote protocol")
    p.add_argument("--data", required=True)
    _add_model_args(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.set_defaults(func=cmd_serve_lm)

    p = sub.add_parser("rerun", help="re-run the command recorded in an artifact header")
    p.add_argument("artifact")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, replay_argv(argv))
    except (CliError, DatasetError, ArtifactError, LMError, ValueError, OSError, RuntimeError) as exc:
        print(f"ctrkit {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
