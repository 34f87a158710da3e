"""Command line interface exposing the pipeline for batch use.

Subcommands: validate, preprocess, rules-infer, rules-apply, rules-stats,
match, train-toy, predict, evaluate.  Exit codes: 0 success, 1 usage error,
2 data error, 3 infeasibility.  Errors print one machine-parseable JSON
record on stderr.  Identical invocations produce byte-identical output.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import graph as graph_mod
from . import matcher, model, rules, scorer, trainer, transform

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INFEASIBLE = 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _fail(kind: str, message: str, code: int):
    raise CliError(json.dumps({"error": kind, "message": message}), code)


def _open_input(path: str):
    if path == "-":
        return sys.stdin
    return open(path, encoding="utf-8")


def _open_output(path: str | None):
    if path is None or path == "-":
        return sys.stdout
    return open(path, "w", encoding="utf-8")


def _load_graphs(path: str) -> list[graph_mod.Graph]:
    try:
        with _open_input(path) as handle:
            return list(graph_mod.read_graphs(handle))
    except graph_mod.GraphError as exc:
        _fail("data", str(exc), EXIT_DATA)
    except OSError as exc:
        _fail("io", str(exc), EXIT_DATA)


def _framework_config(args) -> transform.FrameworkConfig:
    if getattr(args, "config", None):
        try:
            return transform.load_framework_config(args.config)
        except (OSError, transform.TransformError) as exc:
            _fail("config", str(exc), EXIT_DATA)
    return transform.FrameworkConfig()


# ---------------------------------------------------------------------------
# subcommands

def cmd_validate(args) -> int:
    violations = 0
    graphs = 0
    lines = []
    with _open_input(args.input) as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                g = graph_mod.parse_graph(line)
            except graph_mod.GraphError as exc:
                violations += 1
                lines.append(f"line {lineno}: parse: {exc}")
                continue
            graphs += 1
            for v in graph_mod.validate(g):
                violations += 1
                lines.append(f"line {lineno}: {v.subject}: {v.rule}: {v.message}")
    out = _open_output(args.output)
    for line in lines:
        print(line, file=out)
    print(f"validated {graphs} graphs, {violations} violations", file=out)
    return 0 if violations == 0 else EXIT_DATA


def _preprocess_one(payload):
    framework, line, config = payload
    g = graph_mod.parse_graph(line)
    out, _ = transform.preprocess(framework, g, config)
    return graph_mod.serialize_graph(out)


def cmd_preprocess(args) -> int:
    config = _framework_config(args)
    graphs = _load_graphs(args.input)
    try:
        if args.framework == "amr":
            processed = []
            for g in graphs:
                out, _ = transform.preprocess("amr", g, config)
                processed.append(out)
            anchored, _, _ = rules.anchor_flavor2_corpus(processed,
                                                         cache_dir=args.cache_dir)
            results = [graph_mod.serialize_graph(g) for g in anchored]
        elif args.jobs > 1:
            payloads = [(args.framework, graph_mod.serialize_graph(g), config)
                        for g in graphs]
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(_preprocess_one, payloads))
        else:
            results = []
            for g in graphs:
                out, _ = transform.preprocess(args.framework, g, config)
                results.append(graph_mod.serialize_graph(out))
    except transform.TransformError as exc:
        _fail("data", str(exc), EXIT_DATA)
    except rules.InfeasibleEncodingError as exc:
        _fail("infeasible", str(exc), EXIT_INFEASIBLE)
    out = _open_output(args.output)
    for line in results:
        print(line, file=out)
    return 0


def _corpus_items(graphs, framework, config):
    items = []
    names = []
    for g in graphs:
        pre, _ = transform.preprocess(framework, g, config)
        tokens = pre.tokens if pre.tokens is not None else \
            graph_mod.whitespace_tokens(pre.input)
        for node in pre.nodes:
            if node.label is None:
                continue
            anchored = [i for i, t in enumerate(tokens)
                        if any(t.start < a.end and a.start < t.end
                               for a in node.anchors)]
            items.append(([tokens[i].form for i in anchored],
                          [tokens[i].lemma for i in anchored], node.label))
            names.append(f"graph {g.id} node {node.id}")
    return items, names


def cmd_rules_infer(args) -> int:
    """Solve the minimal rule set; table to --rule-table (or --output),
    label/rule counts to stdout."""
    config = _framework_config(args)
    graphs = _load_graphs(args.input)
    items, names = _corpus_items(graphs, args.framework, config)
    problem = rules.build_problem(items, names=names)
    try:
        solution = rules.minimal_rule_set(problem, cache_dir=args.cache_dir)
    except rules.InfeasibleEncodingError as exc:
        _fail("infeasible", str(exc), EXIT_INFEASIBLE)
    table = [problem.universe[i] for i in solution]
    table_path = args.rule_table or args.output
    if table_path and table_path != "-":
        rules.save_rule_table(table, table_path)
    labels = {label for _, _, label in items}
    print(json.dumps({"labels": len(labels), "rules": len(table)}))
    return 0


def cmd_rules_apply(args) -> int:
    if not args.rule_table:
        _fail("usage", "--rule-table is required", EXIT_USAGE)
    try:
        table = rules.load_rule_table(args.rule_table)
    except (OSError, rules.RuleError, json.JSONDecodeError) as exc:
        _fail("data", f"rule table: {exc}", EXIT_DATA)
    config = _framework_config(args)
    graphs = _load_graphs(args.input)
    items, names = _corpus_items(graphs, args.framework, config)
    out = _open_output(args.output)
    records = []
    for (tokens, lemmas, label), name in zip(items, names):
        applicable = [i for i, rule in enumerate(table)
                      if rules.apply_rule(rule, tokens, lemmas) == label]
        if not applicable:
            _fail("infeasible", f"{name}: no retained rule encodes {label!r}",
                  EXIT_INFEASIBLE)
        records.append({"node": name, "label": label, "rules": applicable})
    for record in records:
        print(json.dumps(record, ensure_ascii=False), file=out)
    return 0


def cmd_rules_stats(args) -> int:
    config = _framework_config(args)
    graphs = _load_graphs(args.input)
    items, _ = _corpus_items(graphs, args.framework, config)
    labels = {label for _, _, label in items}
    payload = {"labels": len(labels), "nodes": len(items)}
    if args.rule_table:
        try:
            payload["rules"] = len(rules.load_rule_table(args.rule_table))
        except (OSError, rules.RuleError, json.JSONDecodeError) as exc:
            _fail("data", f"rule table: {exc}", EXIT_DATA)
    out = _open_output(args.output)
    print(json.dumps(payload), file=out)
    return 0


def cmd_match(args) -> int:
    try:
        with _open_input(args.input) as handle:
            rows = [line.split() for line in handle if line.strip()]
        n = int(rows[0][0])
        matrix = np.array([[float(x) for x in row] for row in rows[1:n + 1]])
        if matrix.shape != (n, n):
            raise ValueError(f"expected {n}x{n} matrix, got {matrix.shape}")
    except (OSError, ValueError, IndexError) as exc:
        _fail("data", f"score matrix: {exc}", EXIT_DATA)
    try:
        assignment = matcher.optimal_assignment(matrix)
    except matcher.MatchError as exc:
        _fail("data", str(exc), EXIT_DATA)
    out = _open_output(args.output)
    print(" ".join(str(j) for j in assignment.perm), file=out)
    print(f"score {assignment.score:.12g}", file=out)
    return 0


def cmd_train_toy(args) -> int:
    config = trainer.TrainConfig()
    if args.config:
        try:
            config = trainer.load_train_config(args.config)
        except (OSError, trainer.TrainError, ValueError) as exc:
            _fail("config", str(exc), EXIT_DATA)
    if args.seed is not None:
        config.seed = args.seed
    graphs = _load_graphs(args.input) if args.input else None
    out = _open_output(args.output)

    def emit(record):
        print(json.dumps(record, sort_keys=True), file=out, flush=True)

    try:
        trained, _ = trainer.train(config, graphs=graphs, on_epoch=emit,
                                   cache_dir=args.cache_dir)
    except rules.InfeasibleEncodingError as exc:
        _fail("infeasible", str(exc), EXIT_INFEASIBLE)
    except trainer.TrainError as exc:
        _fail("data", str(exc), EXIT_DATA)
    if args.checkpoint:
        trained.save(args.checkpoint)
    if args.rule_table:
        rules.save_rule_table(trained.meta.rule_table, args.rule_table)
    return 0


def cmd_predict(args) -> int:
    if not args.checkpoint:
        _fail("usage", "--checkpoint is required", EXIT_USAGE)
    try:
        trained = trainer.TrainedModel.load(args.checkpoint)
    except OSError as exc:
        _fail("io", str(exc), EXIT_DATA)
    except (model.CheckpointError, KeyError, ValueError, TypeError,
            json.JSONDecodeError, rules.RuleError) as exc:
        _fail("data", f"checkpoint: {exc}", EXIT_DATA)
    out = _open_output(args.output)
    with _open_input(args.input) as handle:
        for line in handle:
            sentence = line.rstrip("\n")
            if not sentence.strip():
                continue
            g = trainer.predict(trained, sentence)
            print(graph_mod.serialize_graph(g), file=out)
    return 0


def cmd_evaluate(args) -> int:
    gold = _load_graphs(args.gold)
    pred = _load_graphs(args.input)
    if len(gold) != len(pred):
        _fail("data", f"{len(gold)} gold graphs but {len(pred)} predictions",
              EXIT_DATA)
    try:
        reports = [scorer.score_pair(g, p) for g, p in zip(gold, pred)]
    except scorer.ScoreError as exc:
        _fail("data", str(exc), EXIT_DATA)
    total = scorer.aggregate(reports)
    out = _open_output(args.output)
    print(json.dumps(scorer.report_to_json(total), sort_keys=True), file=out)
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrparse",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    default_cache = os.environ.get("MRPARSE_CACHE_DIR") or None

    def common(p, framework=False):
        p.add_argument("--input", required=True, help="JSONL path or - for stdin")
        p.add_argument("--output", default=None, help="output path, default stdout")
        p.add_argument("--config", default=None, help="config file path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--rule-table", dest="rule_table", default=None)
        p.add_argument("--cache-dir", dest="cache_dir", default=default_cache,
                       help="rule-set cache (default: MRPARSE_CACHE_DIR)")
        p.add_argument("--jobs", type=int, default=1)
        if framework:
            p.add_argument("--framework", required=True,
                           choices=graph_mod.FRAMEWORKS)

    common(sub.add_parser("validate", help="check graphs against the schema"))
    common(sub.add_parser("preprocess", help="framework canonicalization"),
           framework=True)
    common(sub.add_parser("rules-infer", help="solve the minimal rule set"),
           framework=True)
    common(sub.add_parser("rules-apply", help="encode nodes with a rule table"),
           framework=True)
    common(sub.add_parser("rules-stats", help="label/rule counts"), framework=True)
    common(sub.add_parser("match", help="solve an assignment score matrix"))

    train_p = sub.add_parser("train-toy", help="train on the synthetic corpus")
    train_p.add_argument("--input", default=None,
                         help="optional gold JSONL corpus; default is synthetic")
    train_p.add_argument("--output", default=None, help="metrics stream, default stdout")
    train_p.add_argument("--config", default=None)
    train_p.add_argument("--seed", type=int, default=None)
    train_p.add_argument("--rule-table", dest="rule_table", default=None)
    train_p.add_argument("--cache-dir", dest="cache_dir", default=default_cache)
    train_p.add_argument("--checkpoint", default=None)
    train_p.add_argument("--jobs", type=int, default=1)

    predict_p = sub.add_parser("predict", help="parse plain-text sentences")
    common(predict_p)
    predict_p.add_argument("--checkpoint", default=None)

    eval_p = sub.add_parser("evaluate", help="score predictions against gold")
    common(eval_p)
    eval_p.add_argument("--gold", required=True, help="gold JSONL path")
    return parser


_COMMANDS = {
    "validate": cmd_validate,
    "preprocess": cmd_preprocess,
    "rules-infer": cmd_rules_infer,
    "rules-apply": cmd_rules_apply,
    "rules-stats": cmd_rules_stats,
    "match": cmd_match,
    "train-toy": cmd_train_toy,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return _COMMANDS[args.command](args)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except BrokenPipeError:
        return 0
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
