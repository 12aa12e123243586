"""Command-line entry point.

    cotexit replay  --traces T.jsonl --out E.jsonl [--config C.yaml] [--set k=v ...]
    cotexit run     --questions Q.jsonl --out E.jsonl --backend http|stub
    cotexit analyze overthink|signals|counterfactual|steps --traces T.jsonl [--episodes E.jsonl] --out R.json
    cotexit sweep   --traces T.jsonl --param lambda --values 0.9,0.95,0.98 --out S.json
    cotexit export  sft|dpo|grpo --episodes E.jsonl --traces T.jsonl --out X.jsonl

Endpoints come from the environment (COTEXIT_BASE_URL, COTEXIT_MODEL,
COTEXIT_API_KEY, COTEXIT_API, COTEXIT_EMBED_URL, COTEXIT_EMBED_MODEL).
Exit status: 0 on success, 1 if any item failed, 2 on usage or config errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from . import analyzer as an
from .backends import (
    EmbedEndpointConfig,
    HashEmbedder,
    HttpEmbedder,
    HttpEndpointConfig,
    HttpGenerationBackend,
    ReplayBackend,
    TraceRecord,
    read_traces,
    synthetic_trace,
)
from .config import load_config, parse_override, resolved_flat
from .controller import EpisodeResult, ExitConfig, ExitKind, run_episode, token_reduction
from .errors import ConfigurationError, CotExitError
from .records import JsonlWriter, dumps, make_header, read_episodes, read_jsonl
from .segmenter import segment
from .verification import TaskKind, answers_match

logger = logging.getLogger("cotexit")

EXIT_OK, EXIT_ITEM_ERRORS, EXIT_USAGE = 0, 1, 2


class _Errors:
    def __init__(self) -> None:
        self.items: list[dict[str, Any]] = []

    def add(self, where: str, exc: BaseException | str) -> None:
        msg = str(exc)
        logger.error("%s: %s", where, msg)
        self.items.append({"where": where, "message": msg})

    def __len__(self) -> int:
        return len(self.items)


# ---------------------------------------------------------------- helpers


def _embedder(cfg: ExitConfig):
    if cfg.embedding.backend == "http":
        ecfg = EmbedEndpointConfig.from_env()
        if ecfg is None:
            raise ConfigurationError("embedding.backend=http needs COTEXIT_EMBED_URL in the environment")
        return HttpEmbedder(ecfg)
    return HashEmbedder(cfg.embedding.dim)


def _load_traces(path: str, errors: _Errors) -> list[TraceRecord]:
    out = []
    for no, item in read_traces(path):
        if isinstance(item, Exception):
            errors.add(f"{path}:{no}", item)
        else:
            out.append(item)
    return out


def _load_episodes(path: str, errors: _Errors) -> list[EpisodeResult]:
    out = []
    for no, item in read_episodes(path):
        if isinstance(item, Exception):
            errors.add(f"{path}:{no}", item)
        else:
            out.append(item)
    return out


def _summary(results: Sequence[tuple[EpisodeResult, TraceRecord | None, str | None]], errors: _Errors) -> dict[str, Any]:
    """Accuracy, token reduction and exit composition over finished episodes.

    ``results`` holds (episode, reference trace or None, gold or None).
    """
    n = len(results)
    kinds = Counter(ep.exit_kind.value for ep, _, _ in results)
    graded = [(ep, gold) for ep, tr, gold in results if gold is not None]
    task_of = {ep.question_id: (tr.task if tr else TaskKind.MATH) for ep, tr, _ in results}
    correct = sum(answers_match(ep.final_answer, gold, task_of[ep.question_id]) for ep, gold in graded)
    with_ref = [(ep, tr) for ep, tr, _ in results if tr is not None and tr.total_tokens > 0]
    per_tr = [token_reduction(ep.total_tokens, tr.total_tokens) for ep, tr in with_ref]
    pooled = (
        token_reduction(sum(ep.total_tokens for ep, _ in with_ref), sum(tr.total_tokens for _, tr in with_ref))
        if with_ref
        else None
    )
    return {
        "episodes": n,
        "errors": len(errors),
        "error_items": list(errors.items),
        "accuracy": correct / len(graded) if graded else None,
        "graded": len(graded),
        "mean_token_reduction": sum(per_tr) / len(per_tr) if per_tr else None,
        "token_reduction": pooled,
        "exit_kinds": {k.value: kinds.get(k.value, 0) for k in ExitKind},
        "exit_fractions": {k.value: (kinds.get(k.value, 0) / n if n else 0.0) for k in ExitKind},
        "mean_total_tokens": sum(ep.total_tokens for ep, _, _ in results) / n if n else None,
    }


def _map_ordered(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _write_report(out: Path, command: str, cfg_flat: dict, inputs: list[str], body: dict) -> None:
    doc = {k: v for k, v in make_header(command, cfg_flat, inputs).items() if k != "record"}
    doc["report"] = body
    out.write_text(dumps(doc) + "\n", encoding="utf-8")


def _replay_one(cfg: ExitConfig, embedder, trace: TraceRecord) -> EpisodeResult:
    ep_cfg = dataclasses.replace(cfg, task=trace.task)
    return run_episode(trace.question, ReplayBackend(trace), embedder, ep_cfg, trace.id)


# ---------------------------------------------------------------- commands


def cmd_replay(args: argparse.Namespace, cfg: ExitConfig) -> int:
    errors = _Errors()
    traces = _load_traces(args.traces, errors)
    embedder = _embedder(cfg)

    def work(trace: TraceRecord):
        try:
            return _replay_one(cfg, embedder, trace), None
        except CotExitError as exc:
            return getattr(exc, "partial", None), exc

    outcomes = _map_ordered(work, traces, args.workers)
    results = []
    with open(args.out, "w", encoding="utf-8") as fh:
        w = JsonlWriter(fh)
        w.header(make_header("replay", resolved_flat(cfg), [args.traces]))
        for trace, (ep, exc) in zip(traces, outcomes):
            if exc is not None:
                errors.add(f"trace {trace.id}", exc)
                continue
            w.write("episode", ep.to_dict())
            results.append((ep, trace, trace.gold_answer))
        w.write("summary", _summary(results, errors))
    return EXIT_ITEM_ERRORS if errors else EXIT_OK


def cmd_run(args: argparse.Namespace, cfg: ExitConfig) -> int:
    errors = _Errors()
    questions = []
    for no, obj in read_jsonl(args.questions):
        if isinstance(obj, Exception) or "question" not in obj:
            errors.add(f"{args.questions}:{no}", obj if isinstance(obj, Exception) else "missing field 'question'")
            continue
        questions.append((str(obj.get("id", f"q{no}")), obj["question"], obj.get("gold_answer")))

    embedder = _embedder(cfg)
    if args.backend == "http":
        ecfg = HttpEndpointConfig.from_env(
            temperature=cfg.generation.temperature,
            top_p=cfg.generation.top_p,
            end_of_thinking=cfg.end_of_thinking,
            max_tokens=cfg.max_total_tokens,
        )
        if ecfg is None:
            raise ConfigurationError("--backend http needs COTEXIT_BASE_URL (and COTEXIT_MODEL) in the environment")
        shared = HttpGenerationBackend(ecfg)
        make = lambda qid, q: (shared, None)  # noqa: E731
    elif args.backend == "stub":

        def make(qid: str, q: str):
            tr = synthetic_trace(q, task=cfg.task)
            return ReplayBackend(tr), tr

    else:
        raise ConfigurationError("run supports --backend http or stub; use the replay command for traces")

    def work(item):
        qid, q, _ = item
        gen, ref = make(qid, q)
        try:
            return run_episode(q, gen, embedder, cfg, qid), ref, None
        except CotExitError as exc:
            return getattr(exc, "partial", None), ref, exc

    outcomes = _map_ordered(work, questions, args.workers)
    results = []
    with open(args.out, "w", encoding="utf-8") as fh:
        w = JsonlWriter(fh)
        w.header(make_header("run", resolved_flat(cfg), [args.questions], backend=args.backend))
        for (qid, _, gold), (ep, ref, exc) in zip(questions, outcomes):
            if exc is not None:
                errors.add(f"question {qid}", exc)
                if ep is not None:
                    w.write("partial", {**ep.to_dict(), "error": str(exc)})
                continue
            w.write("episode", ep.to_dict())
            results.append((ep, ref, gold))
        w.write("summary", _summary(results, errors))
    return EXIT_ITEM_ERRORS if errors else EXIT_OK


def _floats(spec: str | None, default: Sequence[float]) -> list[float]:
    if not spec:
        return list(default)
    try:
        return [float(x) for x in spec.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"grid {spec!r} is not a comma-separated list of numbers") from exc


def cmd_analyze(args: argparse.Namespace, cfg: ExitConfig) -> int:
    errors = _Errors()
    out = Path(args.out)
    inputs = [p for p in (args.traces, args.episodes, args.pairs) if p]
    flat = resolved_flat(cfg)
    kind = args.kind

    if kind == "overthink":
        traces = _need_traces(args, errors)
        rep = an.overthinking_fractions(traces)
        body = rep.to_dict()
        if rep.skipped_missing:
            for t in traces:
                if not t.has_trial_answers:
                    errors.add(f"trace {t.id}", "missing required field 'trial_answer' on every step")
        _csv(out.with_suffix(".cdf.csv"), ["position", "cdf"], rep.cdf)
    elif kind == "signals":
        traces = _need_traces(args, errors)
        lam_grid = _floats(args.lambda_grid, an.LAMBDA_GRID)
        k_grid = [int(x) for x in _floats(args.k_grid, an.K_GRID)]
        conf = an.confidence_signal_failures(traces, args.lam)
        cons = an.consistency_signal_failures(traces, args.k)
        lam_pts = an.threshold_sweep(traces, lam_grid, an.SignalKind.CONFIDENCE)
        k_pts = an.threshold_sweep(traces, k_grid, an.SignalKind.CONSISTENCY)
        body = {
            "confidence": conf.to_dict(),
            "consistency": cons.to_dict(),
            "lambda_sweep": [p.to_dict() for p in lam_pts],
            "k_sweep": [p.to_dict() for p in k_pts],
            "token_reduction_basis": "retained reasoning tokens only; probe cost not included",
        }
        for t in traces:
            if not t.has_trial_answers:
                errors.add(f"trace {t.id}", "missing required field 'trial_answer' on every step")
        head = ["parameter", "failure_rate", "token_reduction"]
        _csv(out.with_suffix(".lambda.csv"), head, [(p.parameter, p.failure_rate, p.token_reduction) for p in lam_pts])
        _csv(out.with_suffix(".k.csv"), head, [(p.parameter, p.failure_rate, p.token_reduction) for p in k_pts])
    elif kind == "counterfactual":
        traces = _need_traces(args, errors)
        episodes = _need_episodes(args, errors)
        rep = an.counterfactual_exits(episodes, traces)
        body = rep.to_dict()
    elif kind == "steps":
        pairs = _step_pairs(args, cfg, errors)
        body = {"pairs": [list(p) for p in pairs], "step_savings": an.step_savings(pairs) if pairs else None}
        _csv(out.with_suffix(".csv"), ["orig_steps", "stopped_steps"], pairs)
    else:  # argparse restricts choices
        raise ConfigurationError(f"unknown analysis {kind!r}")

    body["errors"] = list(errors.items)
    _write_report(out, f"analyze {kind}", flat, inputs, body)
    return EXIT_ITEM_ERRORS if errors else EXIT_OK


def _need_traces(args, errors: _Errors) -> list[TraceRecord]:
    if not args.traces:
        raise ConfigurationError(f"analyze {args.kind} needs --traces")
    return _load_traces(args.traces, errors)


def _need_episodes(args, errors: _Errors) -> list[EpisodeResult]:
    if not args.episodes:
        raise ConfigurationError(f"{args.command} {args.kind} needs --episodes")
    return _load_episodes(args.episodes, errors)


def _step_pairs(args, cfg: ExitConfig, errors: _Errors) -> list[tuple[int, int]]:
    if args.pairs:
        pairs = []
        for no, obj in read_jsonl(args.pairs):
            if isinstance(obj, Exception):
                errors.add(f"{args.pairs}:{no}", obj)
                continue
            missing = [k for k in ("orig_steps", "stopped_steps") if k not in obj]
            if missing:
                errors.add(f"{args.pairs}:{no}", f"missing required field(s) {', '.join(missing)}")
                continue
            pairs.append((int(obj["orig_steps"]), int(obj["stopped_steps"])))
        return pairs
    traces = _need_traces(args, errors)
    episodes = _need_episodes(args, errors)
    by_id = {t.id: t for t in traces}
    pairs = []
    for ep in episodes:
        tr = by_id.get(ep.question_id)
        if tr is None:
            errors.add(f"episode {ep.question_id}", "no matching trace")
            continue
        pairs.append((len(segment(tr.reasoning_text, cfg.segmenter)), ep.stop_step))
    return pairs


def cmd_sweep(args: argparse.Namespace, cfg: ExitConfig) -> int:
    """Replay every trace once per value of one config key."""
    errors = _Errors()
    traces = _load_traces(args.traces, errors)
    base = resolved_flat(cfg)
    if args.param not in base:
        raise ConfigurationError(f"unknown sweep parameter {args.param!r}")
    values = [parse_override(f"{args.param}={v}")[1] for v in args.values.split(",") if v.strip()]
    points = []
    for v in values:
        local = load_config(None, {**{k: base[k] for k in base}, args.param: v})
        embedder = _embedder(local)
        results = []
        for tr in traces:
            try:
                results.append((_replay_one(local, embedder, tr), tr, tr.gold_answer))
            except CotExitError as exc:
                errors.add(f"{args.param}={v} trace {tr.id}", exc)
        s = _summary(results, _Errors())
        early = [(ep, g, tr) for ep, tr, g in results if ep.exit_kind is not ExitKind.FULL and g is not None]
        failed = sum(not answers_match(ep.final_answer, g, tr.task) for ep, g, tr in early)
        points.append(
            {
                "parameter": v,
                "failure_rate": failed / len(early) if early else 0.0,
                "token_reduction": s["token_reduction"],
                "accuracy": s["accuracy"],
                "exit_kinds": s["exit_kinds"],
            }
        )
    out = Path(args.out)
    _write_report(out, "sweep", base, [args.traces], {"param": args.param, "points": points, "errors": errors.items})
    _csv(
        out.with_suffix(".csv"),
        ["parameter", "failure_rate", "token_reduction"],
        [(p["parameter"], p["failure_rate"], p["token_reduction"]) for p in points],
    )
    return EXIT_ITEM_ERRORS if errors else EXIT_OK


def cmd_export(args: argparse.Namespace, cfg: ExitConfig) -> int:
    errors = _Errors()
    if not args.traces:
        raise ConfigurationError("export needs --traces")
    traces = _load_traces(args.traces, errors)
    episodes = _need_episodes(args, errors)
    if args.kind == "grpo":
        rows = an.export_grpo(episodes, traces, cfg.end_of_thinking)
    else:
        by_id = {t.id: t for t in traces}
        usable = []
        for ep in episodes:
            tr = by_id.get(ep.question_id)
            if tr is None or tr.gold_answer is None:
                errors.add(f"episode {ep.question_id}", "no matching trace with a gold answer")
                continue
            usable.append(ep)
        labeled = an.label_episodes(usable, traces, cfg.segmenter)
        rows = an.export_sft(labeled, args.ratio_cap) if args.kind == "sft" else an.export_dpo(labeled)
    with open(args.out, "w", encoding="utf-8") as fh:
        w = JsonlWriter(fh)
        w.header(make_header(f"export {args.kind}", resolved_flat(cfg), [args.traces, args.episodes]))
        for row in rows:
            w.write("row", row.to_dict())
        w.write("summary", {"rows": len(rows), "errors": len(errors), "error_items": errors.items})
    return EXIT_ITEM_ERRORS if errors else EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML or JSON config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--task", choices=[t.value for t in TaskKind])
    common.add_argument("--out", required=True, metavar="PATH")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cotexit", description="Early-exit control for chain-of-thought generation.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("replay", parents=[common], help="replay recorded traces through the controller")
    r.add_argument("--traces", required=True)
    r.add_argument("--backend", choices=["replay"], default="replay")

    g = sub.add_parser("run", parents=[common], help="run live or stubbed episodes")
    g.add_argument("--questions", required=True, help="JSONL with id, question, optional gold_answer")
    g.add_argument("--backend", choices=["http", "replay", "stub"], default="http")

    a = sub.add_parser("analyze", parents=[common], help="retroactive trace diagnostics")
    a.add_argument("kind", choices=["overthink", "signals", "counterfactual", "steps"])
    a.add_argument("--traces")
    a.add_argument("--episodes")
    a.add_argument("--pairs", help="JSONL of {orig_steps, stopped_steps} for the steps analysis")
    a.add_argument("--lambda", dest="lam", type=float, default=0.95, help="confidence trigger (default 0.95)")
    a.add_argument("--k", type=int, default=3, help="consistency run length (default 3)")
    a.add_argument("--lambda-grid", help="comma-separated, default 0.93..0.97")
    a.add_argument("--k-grid", help="comma-separated, default 1..8")

    s = sub.add_parser("sweep", parents=[common], help="replay traces over a grid of one config key")
    s.add_argument("--traces", required=True)
    s.add_argument("--param", required=True)
    s.add_argument("--values", required=True, help="comma-separated values")

    e = sub.add_parser("export", parents=[common], help="write SFT, DPO or GRPO rows")
    e.add_argument("kind", choices=["sft", "dpo", "grpo"])
    e.add_argument("--episodes", required=True)
    e.add_argument("--traces")
    e.add_argument("--ratio-cap", type=float, default=0.6)
    return p


COMMANDS = {
    "replay": cmd_replay,
    "run": cmd_run,
    "analyze": cmd_analyze,
    "sweep": cmd_sweep,
    "export": cmd_export,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        overrides = list(args.overrides)
        if args.task:
            overrides.append(f"task={args.task}")
        cfg = load_config(args.config, overrides)
        out_dir = Path(args.out).resolve().parent
        if not out_dir.is_dir():
            raise ConfigurationError(f"output directory {str(out_dir)!r} does not exist")
        return COMMANDS[args.command](args, cfg)
    except ConfigurationError as exc:
        print(f"cotexit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"cotexit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CotExitError as exc:
        # input data the analysis cannot use, e.g. an episode with no trace
        print(f"cotexit: error: {exc}", file=sys.stderr)
        return EXIT_ITEM_ERRORS


if __name__ == "__main__":
    sys.exit(main())
