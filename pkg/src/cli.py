"""Command-line surface: preprocess, vocab, train, suggest, rescore, eval and the dump commands."""
import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, TextIO, Union

from baselines import build_adj, build_qvmm
from checkpoint import checkpoint_load, checkpoint_save
from corpus import (SessionETL, build_vocabulary, encode_splits, read_sessions, read_splits, read_vocabulary,
                    write_splits, write_vocabulary)
from decoding import BeamConfig, SuggestionService, SuggestRequest
from errors import CheckpointError, DivergenceError, HredError, UsageError
from evaluation import SCENARIOS, render_report, run_scenario
from model import Hyper, export_embeddings, update_gate_trace
from numerics import Prng
from ranker import RankerConfig
from scenarios import write_instances
from settings import Settings, flatten, load_config, resolve_seed
from training import fit

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class _Parser(argparse.ArgumentParser):

    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _cutoffs(text: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cutoffs must be comma-separated integers, got '{text}'")
    if len(values) != 3:
        raise argparse.ArgumentTypeError("expected exactly three cutoffs: training,validation,test")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hred", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--config", help="YAML file layered over config/settings.yaml")
        sub.add_argument("--seed", type=int)
        return sub

    sub = command("preprocess", "segment a raw log into time-split session files")
    sub.add_argument("--log")
    sub.add_argument("--cutoffs", type=_cutoffs)
    sub.add_argument("--out")

    sub = command("vocab", "build the capped vocabulary from a session file")
    sub.add_argument("--sessions")
    sub.add_argument("--vocab-size", type=int)
    sub.add_argument("--out")

    sub = command("train", "fit an HRED model and write a checkpoint")
    sub.add_argument("--sessions")
    sub.add_argument("--vocab")
    sub.add_argument("--out")

    sub = command("suggest", "generate ranked suggestions for a context")
    sub.add_argument("--checkpoint")
    sub.add_argument("--vocab")
    sub.add_argument("--context", default="")
    sub.add_argument("--k", type=int, default=5)
    sub.add_argument("--max-length", type=int)
    sub.add_argument("--interactive", action="store_true")
    sub.add_argument("--out")

    sub = command("rescore", "score candidate queries given a context")
    sub.add_argument("--checkpoint")
    sub.add_argument("--vocab")
    sub.add_argument("--context", default="")
    sub.add_argument("--candidate", action="append", default=[])
    sub.add_argument("--out")

    sub = command("eval", "run a test scenario and write an MRR report")
    sub.add_argument("--sessions")
    sub.add_argument("--vocab")
    sub.add_argument("--checkpoint")
    sub.add_argument("--scenario", choices=SCENARIOS, default="next")
    sub.add_argument("--qvmm-order", type=int)
    sub.add_argument("--out")

    sub = command("dump-embeddings", "write output word embeddings and query vectors")
    sub.add_argument("--checkpoint")
    sub.add_argument("--vocab")
    sub.add_argument("--sessions")
    sub.add_argument("--out")

    sub = command("dump-gates", "write session-level update gate magnitudes for a context")
    sub.add_argument("--checkpoint")
    sub.add_argument("--vocab")
    sub.add_argument("--context", default="")
    sub.add_argument("--out")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}

    def put(section: str, key: str, value: Any) -> None:
        if value is not None:
            overrides.setdefault(section, {})[key] = value

    put("corpus", "vocab_size", getattr(args, "vocab_size", None))
    put("corpus", "cutoffs", getattr(args, "cutoffs", None))
    put("beam", "max_length", getattr(args, "max_length", None))
    put("baselines", "qvmm_order", getattr(args, "qvmm_order", None))
    for key in ("log", "sessions", "vocab", "checkpoint", "out"):
        put("paths", key, getattr(args, key, None))
    return overrides


def _effective_settings(args: argparse.Namespace) -> Settings:
    settings = load_config(args.config, _overrides(args))
    seed = resolve_seed(args.seed, settings)
    return settings.model_copy(update={
        "seed": seed,
        "train": settings.train.model_copy(update={"seed": seed}),
    })


def _path(settings: Settings, key: str) -> Path:
    value = getattr(settings.paths, key)
    if not value:
        raise UsageError(f"--{key} is required")
    return Path(value)


def _split_context(text: str) -> List[str]:
    return [query for query in text.split('\t') if query.strip()]


def _manifest_lines(settings: Settings, extra: Dict[str, Any]) -> List[str]:
    lines = [f"{key}={value}" for key, value in extra.items()]
    return lines + [f"{key}={value}" for key, value in flatten(settings).items()]


def _write_manifest(path: Union[str, Path], settings: Settings, extra: Optional[Dict[str, Any]] = None) -> None:
    lines = _manifest_lines(settings, extra or {})
    Path(path).write_text("\n".join(lines) + "\n", encoding='utf-8')


def _log_settings(settings: Settings) -> None:
    logger.info("Effective configuration: %s", " ".join(f"{k}={v}" for k, v in flatten(settings).items()))


def _emit(lines: Sequence[str], settings: Settings, stdout: TextIO) -> None:
    """Data lines go to --out with a `.manifest` sidecar, or to stdout with the config logged."""
    text = "".join(line + "\n" for line in lines)
    out = settings.paths.out
    if out:
        Path(out).write_text(text, encoding='utf-8')
        _write_manifest(f"{out}.manifest", settings, {"lines": len(lines)})
    else:
        _log_settings(settings)
        stdout.write(text)


def _load_model(settings: Settings):
    if settings.paths.vocab:
        vocab = read_vocabulary(settings.paths.vocab)
        return checkpoint_load(_path(settings, "checkpoint"), vocab_digest=vocab.digest()), vocab

    # Without --vocab, use the vocabulary the checkpoint was trained with.
    checkpoint = checkpoint_load(_path(settings, "checkpoint"))
    trained_with = checkpoint.settings.get("paths.vocab")
    if not trained_with or trained_with == "None":
        raise UsageError("--vocab is required (the checkpoint does not record its vocabulary path)")
    vocab = read_vocabulary(trained_with)
    if vocab.digest() != checkpoint.vocab_digest:
        raise CheckpointError(f"Vocabulary {trained_with} changed since training: digest {vocab.digest()} "
                              f"does not match checkpoint digest {checkpoint.vocab_digest}")
    logger.info("Using vocabulary %s recorded in the checkpoint", trained_with)
    return checkpoint, vocab


def cmd_preprocess(settings: Settings, stdout: TextIO) -> None:
    if len(settings.corpus.cutoffs) != 3:
        raise UsageError("--cutoffs is required (training,validation,test start times)")
    etl = SessionETL(settings.corpus.model_dump())
    splits = etl.process_log(_path(settings, "log"), settings.corpus.cutoffs)
    out = _path(settings, "out")
    write_splits(out, splits)
    counts = splits.counts()
    _write_manifest(out / "manifest.txt", settings, counts)
    logger.info("Wrote sessions to %s: %s", out, counts)


def cmd_vocab(settings: Settings, stdout: TextIO) -> None:
    sessions = read_sessions(_path(settings, "sessions"))
    vocab = build_vocabulary(sessions, settings.corpus.vocab_size)
    out = _path(settings, "out")
    write_vocabulary(out, vocab)
    _write_manifest(f"{out}.manifest", settings, {"size": len(vocab), "digest": vocab.digest()})
    logger.info("Vocabulary of %d words written to %s", len(vocab), out)


def cmd_train(settings: Settings, stdout: TextIO) -> None:
    vocab = read_vocabulary(_path(settings, "vocab"))
    splits = encode_splits(read_splits(_path(settings, "sessions")), vocab)
    fit_on = settings.train.fit_on
    if settings.train.max_sessions is not None:
        capped = getattr(splits, fit_on)[:settings.train.max_sessions]
        splits = splits.model_copy(update={fit_on: capped})

    hyper = Hyper(V=len(vocab), **settings.model.model_dump())
    config = settings.train.train_config(settings.seed)
    out = _path(settings, "out")
    try:
        checkpoint = fit(splits, hyper, config, vocab.digest(), fit_on, flatten(settings))
    except DivergenceError as e:
        if e.last_checkpoint is not None:
            checkpoint_save(e.last_checkpoint, f"{out}.diverged", settings.train.precision)
            logger.error("Saved the last finite parameters to %s.diverged", out)
        raise
    checkpoint_save(checkpoint, out, settings.train.precision)
    logger.info("Checkpoint written to %s (best epoch %d)", out, checkpoint.best_epoch)


def _service(settings: Settings) -> SuggestionService:
    checkpoint, vocab = _load_model(settings)
    return SuggestionService(checkpoint.params, vocab, BeamConfig(**settings.beam.model_dump()))


def _suggestion_lines(service: SuggestionService, context: List[str], k: int) -> List[str]:
    response = service.process_request(SuggestRequest(context=context, k=k))
    return [f"{suggestion.text}\t{suggestion.score:.6f}" for suggestion in response.suggestions]


def cmd_suggest(settings: Settings, stdout: TextIO, args: argparse.Namespace, stdin: TextIO) -> None:
    if args.k < 1:
        raise UsageError("--k must be at least 1")
    service = _service(settings)
    if not args.interactive:
        context = _split_context(args.context)
        if not context:
            raise UsageError("--context is required (queries separated by tabs)")
        _emit(_suggestion_lines(service, context, args.k), settings, stdout)
        return

    _log_settings(settings)
    while True:
        sys.stderr.write("context> ")
        sys.stderr.flush()
        line = stdin.readline()
        if not line or not line.strip():
            break
        try:
            lines = _suggestion_lines(service, _split_context(line.rstrip('\n')), args.k)
        except HredError as e:
            logger.error("%s", e)
            continue
        stdout.write("".join(text + "\n" for text in lines))
        stdout.flush()


def cmd_rescore(settings: Settings, stdout: TextIO, args: argparse.Namespace) -> None:
    if not args.candidate:
        raise UsageError("at least one --candidate is required")
    service = _service(settings)
    scored = service.rescore(_split_context(args.context), args.candidate)
    _emit([f"{s.text}\t{s.score:.6f}" for s in scored], settings, stdout)


def cmd_eval(settings: Settings, stdout: TextIO, args: argparse.Namespace) -> None:
    checkpoint, vocab = _load_model(settings)
    splits = read_splits(_path(settings, "sessions"))
    adj = build_adj(splits.background)
    qvmm = build_qvmm(splits.background, settings.baselines.qvmm_order)
    report = run_scenario(
        args.scenario, splits, adj, qvmm, checkpoint.params, vocab, Prng(settings.seed),
        ranker_config=RankerConfig(**settings.ranker.model_dump()),
        noisy_top_n=settings.baselines.noisy_top_n,
        settings=flatten(settings),
        model_id=Path(settings.paths.checkpoint).name,
    )
    rendered = render_report(report)
    out = settings.paths.out
    if out:
        Path(out).write_text(rendered, encoding='utf-8')
        instances = report["_test_instances"]
        write_instances(f"{out}.instances", instances)
        _write_manifest(f"{out}.instances.manifest", settings,
                        {"scenario": args.scenario, "instances": len(instances)})
    else:
        stdout.write(rendered)


def _vector(values) -> str:
    return " ".join(f"{v:.6f}" for v in values)


def cmd_dump_embeddings(settings: Settings, stdout: TextIO) -> None:
    checkpoint, vocab = _load_model(settings)
    queries: List[str] = []
    if settings.paths.sessions:
        seen = set()
        for session in read_sessions(settings.paths.sessions):
            for query in session.queries:
                if query not in seen:
                    seen.add(query)
                    queries.append(query)
    words, query_vectors = export_embeddings(checkpoint.params, vocab, queries)
    lines = [f"word\t{word}\t{_vector(row)}" for word, row in words]
    lines += [f"query\t{text}\t{_vector(row)}" for text, row in query_vectors]
    _emit(lines, settings, stdout)


def cmd_dump_gates(settings: Settings, stdout: TextIO, args: argparse.Namespace) -> None:
    checkpoint, vocab = _load_model(settings)
    service = SuggestionService(checkpoint.params, vocab, BeamConfig())
    context = _split_context(args.context)
    encoded = service.encode_context(context)
    if not encoded:
        raise UsageError("--context is required (queries separated by tabs)")
    gates = update_gate_trace(checkpoint.params, encoded)
    texts = [query for query in context if service.encode_context([query])]
    lines = [f"{text}\t{float(gate.mean()):.6f}\t{_vector(gate)}" for text, gate in zip(texts, gates)]
    _emit(lines, settings, stdout)


def run(argv: Sequence[str], stdout: Optional[TextIO] = None, stdin: Optional[TextIO] = None) -> int:
    stdout = stdout or sys.stdout
    stdin = stdin or sys.stdin
    try:
        args = build_parser().parse_args(list(argv))
        settings = _effective_settings(args)
    except SystemExit as e:
        return int(e.code or 0)
    except UsageError as e:
        sys.stderr.write(f"error: {e}\n")
        return 1

    logging.basicConfig(level=settings.app.log_level, format=LOG_FORMAT, stream=sys.stderr, force=True)
    try:
        if args.command == "preprocess":
            cmd_preprocess(settings, stdout)
        elif args.command == "vocab":
            cmd_vocab(settings, stdout)
        elif args.command == "train":
            cmd_train(settings, stdout)
        elif args.command == "suggest":
            cmd_suggest(settings, stdout, args, stdin)
        elif args.command == "rescore":
            cmd_rescore(settings, stdout, args)
        elif args.command == "eval":
            cmd_eval(settings, stdout, args)
        elif args.command == "dump-embeddings":
            cmd_dump_embeddings(settings, stdout)
        elif args.command == "dump-gates":
            cmd_dump_gates(settings, stdout, args)
    except UsageError as e:
        sys.stderr.write(f"error: {e}\n")
        return 1
    except (HredError, OSError) as e:
        sys.stderr.write(f"error: {e}\n")
        return 2
    return 0
