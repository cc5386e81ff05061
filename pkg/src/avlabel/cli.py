"""Command-line entry point: one command, six subcommands.

``label`` runs the auto-labeling pipeline, ``analyze`` measures labeling
quality, ``stats`` totals data hours, ``eval`` scores WER/CER pair files,
``vocab`` trains/inspects subword models, and ``decode`` runs the joint
CTC/attention beam search. Subcommands are pure functions of (config,
fixtures, seed): identical inputs produce identical output bytes.

Exit codes: 0 success, 1 structural failure (missing/bad input files,
backend startup failure), 2 config error (bad keys, bad values, bad flags).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Mapping, Sequence

from . import bpe as bpe_mod
from . import decoding, manifest, metrics, pipeline, quality
from .backends import (
    DEFAULT_OP_WEIGHTS,
    Backend,
    BackendError,
    ExternalBackend,
    ScriptedBackend,
)

DEFAULT_TARGETS = ("fr", "it", "es", "pt")
DEFAULT_CTC_WEIGHT = 0.3
DEFAULT_BEAM_SIZE = 40

# Config keys shared by the orchestrating subcommands; every key has a flag
# of the same name (dashes for underscores) and flags win over the file.
_CONFIG_KEYS = {
    "pool",
    "pools",
    "counts",
    "targets",
    "profiles",
    "backend",
    "output_dir",
    "seed",
    "parallelism",
    "min_confidence",
    "ctc_weight",
    "beam_size",
    "lowercase",
    "strip_punct",
}

_BACKEND_KEYS_SCRIPTED = {"type", "table", "error_rate", "op_weights"}
_BACKEND_KEYS_EXTERNAL = {"type", "command", "parallelism", "timeout_s", "max_attempts"}


class ConfigError(Exception):
    """Invalid configuration file or flag combination."""


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(f"{path.name}.tmp{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _dump_json(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, indent=2) + "\n"


def _read_lines(path: Path) -> list[str]:
    try:
        return path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read {path}: {exc}") from exc


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        config = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = sorted(set(config) - _CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    return config


def _merged(args: argparse.Namespace, config: Mapping, key: str, default=None):
    """Flag value if given, else config value, else default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config and config[key] is not None:
        return config[key]
    return default


def _require(value, what: str):
    if value is None:
        raise ConfigError(f"{what} is required (set it in the config or as a flag)")
    return value


def _parse_targets(value) -> tuple[str, ...]:
    if isinstance(value, str):
        value = [t.strip() for t in value.split(",") if t.strip()]
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError("targets must be a non-empty list of language tags")
    for tag in value:
        if not isinstance(tag, str) or not tag:
            raise ConfigError(f"bad language tag in targets: {tag!r}")
    return tuple(value)


def _build_profiles(config_profiles, flag_profiles) -> dict[str, pipeline.LanguageProfile]:
    """Default inventories, overlaid with config then flag overrides.

    An override maps a language tag to its extra letters beyond a-z,
    replacing that language's default extras entirely.
    """
    extras = dict(pipeline.DEFAULT_EXTRA_LETTERS)
    if config_profiles is not None:
        if not isinstance(config_profiles, dict):
            raise ConfigError("profiles must map language tag to extra letters")
        for lang, letters in config_profiles.items():
            if not isinstance(letters, str):
                raise ConfigError(f"profile for {lang!r} must be a string of letters")
            extras[lang] = letters
    for item in flag_profiles or []:
        if "=" not in item:
            raise ConfigError(f"--profile expects lang=letters, got {item!r}")
        lang, _, letters = item.partition("=")
        extras[lang] = letters
    try:
        return {lang: pipeline.make_profile(lang, letters) for lang, letters in extras.items()}
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _build_backend(spec, seed: int, args: argparse.Namespace) -> Backend:
    if args.backend_table is not None:
        spec = {"type": "scripted", "table": args.backend_table}
        if args.error_rate is not None:
            spec["error_rate"] = args.error_rate
    elif args.backend_command is not None:
        spec = {"type": "external", "command": args.backend_command}
    if spec is None:
        raise ConfigError("backend is required (config key 'backend' or --backend-table/--backend-command)")
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError("backend spec must be an object with a 'type' field")
    kind = spec["type"]
    if kind == "scripted":
        unknown = sorted(set(spec) - _BACKEND_KEYS_SCRIPTED)
        if unknown:
            raise ConfigError(f"unknown scripted backend key(s): {', '.join(unknown)}")
        table_path = spec.get("table")
        if not isinstance(table_path, str):
            raise ConfigError("scripted backend needs a 'table' file path")
        error_rate = args.error_rate if args.error_rate is not None else spec.get("error_rate", 0.0)
        op_weights = spec.get("op_weights", list(DEFAULT_OP_WEIGHTS))
        if (
            not isinstance(op_weights, (list, tuple))
            or len(op_weights) != 3
            or not all(isinstance(w, (int, float)) for w in op_weights)
        ):
            raise ConfigError("op_weights must be three numbers [sub, del, ins]")
        try:
            return ScriptedBackend.from_jsonl(
                _read_lines(Path(table_path)),
                error_rate=float(error_rate),
                seed=seed,
                op_weights=tuple(float(w) for w in op_weights),
            )
        except ValueError as exc:
            raise ConfigError(f"bad backend table {table_path}: {exc}") from exc
    if kind == "external":
        unknown = sorted(set(spec) - _BACKEND_KEYS_EXTERNAL)
        if unknown:
            raise ConfigError(f"unknown external backend key(s): {', '.join(unknown)}")
        command = spec.get("command")
        if not isinstance(command, list) or not all(isinstance(c, str) for c in command):
            raise ConfigError("external backend needs 'command' as a list of strings")
        return ExternalBackend(
            command,
            parallelism=int(spec.get("parallelism", 1)),
            timeout_s=float(spec.get("timeout_s", 30.0)),
            max_attempts=int(spec.get("max_attempts", 3)),
        )
    raise ConfigError(f"unknown backend type {kind!r} (expected 'scripted' or 'external')")


def _load_pool(path: str, provenance: str = "") -> manifest.Manifest:
    return manifest.parse_manifest(
        _read_lines(Path(path)), provenance=provenance or Path(path).stem
    )


def _prepare_output_dir(path_str: str, force: bool) -> Path:
    out = Path(path_str)
    if out.exists() and not force:
        raise FileExistsError(
            f"output directory {out} already exists; pass --force to overwrite"
        )
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_pipeline_artifacts(out: Path, result: pipeline.PipelineResult) -> None:
    for lang, m in result.manifests.items():
        _write_atomic(out / f"labeled_{lang}.jsonl", manifest.write_manifest(m))
    _write_atomic(out / "stats.json", _dump_json(result.stats.to_record()))
    _write_atomic(out / "rejections.jsonl", pipeline.write_rejections(result.rejections))


def cmd_label(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    seed = int(_merged(args, config, "seed", 0))
    targets = _parse_targets(_merged(args, config, "targets", list(DEFAULT_TARGETS)))
    profiles = _build_profiles(config.get("profiles"), args.profile)
    missing = sorted(set(targets) - set(profiles))
    if missing:
        raise ConfigError(f"no language profile for target(s): {', '.join(missing)}")
    backend = _build_backend(config.get("backend"), seed, args)
    pool = _load_pool(_require(_merged(args, config, "pool"), "pool"))
    out = _prepare_output_dir(
        _require(_merged(args, config, "output_dir"), "output_dir"), args.force
    )
    parallelism = int(_merged(args, config, "parallelism", 4))
    min_confidence = _merged(args, config, "min_confidence")

    result = pipeline.run_pipeline(
        pool,
        targets,
        backend,
        backend,
        profiles,
        parallelism=parallelism,
        min_confidence=None if min_confidence is None else float(min_confidence),
    )
    _write_pipeline_artifacts(out, result)
    stats = result.stats
    print(f"pool: {stats.input_count} utterances")
    for lang in sorted(targets, key=manifest.language_sort_key):
        funnel = stats.per_language[lang]
        print(f"{lang}: kept {funnel.final_count} ({funnel.hours:.2f} h)")
    print(f"rejected: {stats.total_rejected}")
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    counts_path = _merged(args, config, "counts")
    out = None
    output_dir = _merged(args, config, "output_dir")
    if output_dir is not None:
        out = _prepare_output_dir(output_dir, args.force)

    if counts_path is not None:
        counts_raw = json.loads(Path(counts_path).read_text(encoding="utf-8"))
        if not isinstance(counts_raw, dict) or not counts_raw:
            raise ConfigError("counts file must be a non-empty object keyed by language")
        counts: dict[str, tuple[int, int]] = {}
        for lang, entry in counts_raw.items():
            if (
                not isinstance(entry, dict)
                or set(entry) != {"gold_count", "auto_count"}
                or not all(isinstance(entry[k], int) for k in entry)
            ):
                raise ConfigError(
                    f"counts entry for {lang!r} must be "
                    '{"gold_count": int, "auto_count": int}'
                )
            counts[lang] = (entry["gold_count"], entry["auto_count"])
        report = quality.report_from_counts(counts)
        print(report.render(), end="")
        if out is not None:
            _write_atomic(out / "report.json", _dump_json(report.to_record()))
        return 0

    seed = int(_merged(args, config, "seed", 0))
    targets = _parse_targets(_merged(args, config, "targets", list(DEFAULT_TARGETS)))
    profiles = _build_profiles(config.get("profiles"), args.profile)
    backend = _build_backend(config.get("backend"), seed, args)
    gold = _load_pool(_require(_merged(args, config, "pool"), "pool"))
    if len(gold) == 0:
        raise ValueError("gold pool is empty; nothing to analyze")
    parallelism = int(_merged(args, config, "parallelism", 4))
    min_confidence = _merged(args, config, "min_confidence")
    policy = metrics.NormalizationPolicy(
        lowercase=bool(_merged(args, config, "lowercase", True)),
        strip_punct=bool(_merged(args, config, "strip_punct", True)),
    )
    outcome = quality.simulate_relabel(
        gold,
        backend,
        backend,
        targets,
        profiles,
        parallelism=parallelism,
        min_confidence=None if min_confidence is None else float(min_confidence),
        policy=policy,
    )
    print(outcome.report.render(), end="")
    if out is not None:
        _write_atomic(out / "report.json", _dump_json(outcome.report.to_record()))
        _write_pipeline_artifacts(out, outcome.pipeline)
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    pools_spec = _merged(args, config, "pools")
    if isinstance(pools_spec, list) and all(isinstance(p, str) for p in pools_spec):
        # Flag form: path:labeled_by strings.
        parsed = []
        for item in pools_spec:
            path, sep, labeled_by = item.rpartition(":")
            if not sep or labeled_by not in (manifest.HUMAN, manifest.AUTO):
                raise ConfigError(f"--pools expects path:human or path:auto, got {item!r}")
            parsed.append({"path": path, "labeled_by": labeled_by})
        pools_spec = parsed
    if not isinstance(pools_spec, list) or not pools_spec:
        raise ConfigError("stats needs a non-empty 'pools' list")
    inputs = []
    for entry in pools_spec:
        if (
            not isinstance(entry, dict)
            or set(entry) != {"path", "labeled_by"}
            or entry["labeled_by"] not in (manifest.HUMAN, manifest.AUTO)
        ):
            raise ConfigError(
                'each pools entry must be {"path": str, "labeled_by": "human"|"auto"}'
            )
        inputs.append((_load_pool(entry["path"]), entry["labeled_by"]))
    report = manifest.aggregate_hours(inputs)
    print(report.render(), end="")
    output_dir = _merged(args, config, "output_dir")
    if output_dir is not None:
        out = _prepare_output_dir(output_dir, args.force)
        _write_atomic(out / "hours.json", _dump_json(report.to_record()))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    policy = metrics.NormalizationPolicy(
        lowercase=args.lowercase if args.lowercase is not None else True,
        strip_punct=args.strip_punct if args.strip_punct is not None else True,
    )
    pairs: list[tuple[str, str]] = []
    for lineno, line in enumerate(_read_lines(Path(args.pairs)), start=1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise ValueError(f"{args.pairs} line {lineno}: expected ref<TAB>hyp")
        ref, _, hyp = line.partition("\t")
        pairs.append((ref, hyp))
    if not pairs:
        raise ValueError(f"{args.pairs} contains no pairs")
    wer = metrics.corpus_wer(pairs, policy)
    cer = metrics.corpus_cer(pairs, policy)
    print(f"WER: {wer.percent:.2f}%  (S={wer.substitutions} D={wer.deletions} "
          f"I={wer.insertions} over {wer.ref_tokens} reference words)")
    print(f"CER: {cer.percent:.2f}%  (S={cer.substitutions} D={cer.deletions} "
          f"I={cer.insertions} over {cer.ref_tokens} reference characters)")
    return 0


def cmd_vocab(args: argparse.Namespace) -> int:
    if args.show is not None:
        model = bpe_mod.BpeModel.load(Path(args.show).read_text(encoding="utf-8"))
        print(f"vocab size: {model.vocab_size} (target {model.target_size})")
        print(f"base symbols: {len(model.base_symbols)}")
        print(f"merges: {len(model.merges)}")
        print(f"truncated: {'yes' if model.truncated else 'no'}")
        for left, right in model.merges[: args.head]:
            print(f"merge: {left} + {right} -> {left}{right}")
        return 0
    if args.corpus is None or args.target_size is None or args.output is None:
        raise ConfigError("vocab training needs CORPUS, --target-size, and --output")
    corpus_lines = _read_lines(Path(args.corpus))
    model = bpe_mod.train_bpe(corpus_lines, args.target_size)
    _write_atomic(Path(args.output), model.save())
    print(f"trained vocab of {model.vocab_size} (target {model.target_size}) "
          f"with {len(model.merges)} merges; truncated: {'yes' if model.truncated else 'no'}")
    return 0


def _load_matrix(path: Path, what: str) -> decoding.EmissionMatrix:
    try:
        return decoding.EmissionMatrix.from_text(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise FileNotFoundError(f"cannot read {what} {path}: {exc}") from exc


def cmd_decode(args: argparse.Namespace) -> int:
    emissions = _load_matrix(Path(args.emissions), "emissions")
    if args.scorer is not None:
        table = _load_matrix(Path(args.scorer), "scorer table")
        scorer: decoding.AttentionScorer = decoding.PositionalAttentionScorer.from_probs(
            table.probs
        )
        if scorer.vocab_size != emissions.vocab_size:
            raise ValueError(
                f"scorer table has {scorer.vocab_size} columns but emissions "
                f"have {emissions.vocab_size}"
            )
    else:
        scorer = decoding.UniformAttentionScorer(emissions.vocab_size)
    hypotheses = decoding.beam_search(
        emissions,
        scorer,
        ctc_weight=args.ctc_weight,
        beam_size=args.beam_size,
        max_len=args.max_len,
    )
    print("rank\ttokens\tjoint\tctc\tatt")
    for rank, hyp in enumerate(hypotheses[: args.top_k], start=1):
        tokens = " ".join(map(str, hyp.tokens)) if hyp.tokens else "<empty>"
        print(f"{rank}\t{tokens}\t{hyp.joint_score:.6f}\t{hyp.ctc_log:.6f}\t{hyp.att_log:.6f}")
    return 0


def _add_config_flags(sub: argparse.ArgumentParser, with_backend: bool = True) -> None:
    sub.add_argument("--config", help="JSON config file; flags override its keys")
    sub.add_argument("--output-dir", dest="output_dir", help="directory for output artifacts")
    sub.add_argument("--force", action="store_true", help="overwrite an existing output directory")
    sub.add_argument("--seed", type=int, help="top-level seed for all randomness")
    if with_backend:
        sub.add_argument("--pool", help="input manifest (JSON Lines)")
        sub.add_argument("--targets", help="comma-separated target language tags")
        sub.add_argument(
            "--profile", action="append", metavar="LANG=LETTERS",
            help="override a language's extra letters beyond a-z (repeatable)",
        )
        sub.add_argument("--backend-table", dest="backend_table",
                         help="scripted backend table (JSON Lines)")
        sub.add_argument("--backend-command", dest="backend_command", nargs="+",
                         help="external backend runner command")
        sub.add_argument("--error-rate", dest="error_rate", type=float,
                         help="scripted backend word perturbation rate")
        sub.add_argument("--parallelism", type=int, help="concurrent pipeline workers")
        sub.add_argument("--min-confidence", dest="min_confidence", type=float,
                         help="reject language predictions below this confidence")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avlabel",
        description="Auto-labeling toolkit for multilingual audio-visual speech corpora.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_label = sub.add_parser("label", help="run the labeling pipeline over a pool")
    _add_config_flags(p_label)
    p_label.set_defaults(handler=cmd_label)

    p_analyze = sub.add_parser(
        "analyze", help="measure labeling quality against a gold corpus"
    )
    _add_config_flags(p_analyze)
    p_analyze.add_argument("--counts", help="pre-tallied per-language counts JSON (skips simulation)")
    p_analyze.add_argument("--lowercase", action=argparse.BooleanOptionalAction,
                           help="lowercase before WER scoring (default on)")
    p_analyze.add_argument("--strip-punct", dest="strip_punct",
                           action=argparse.BooleanOptionalAction,
                           help="strip punctuation before WER scoring (default on)")
    p_analyze.set_defaults(handler=cmd_analyze)

    p_stats = sub.add_parser("stats", help="total video counts and hours per language")
    p_stats.add_argument("--config", help="JSON config file; flags override its keys")
    p_stats.add_argument("--pools", nargs="+", metavar="PATH:LABELED_BY",
                         help="manifest paths suffixed with :human or :auto")
    p_stats.add_argument("--output-dir", dest="output_dir", help="directory for hours.json")
    p_stats.add_argument("--force", action="store_true",
                         help="overwrite an existing output directory")
    p_stats.set_defaults(handler=cmd_stats)

    p_eval = sub.add_parser("eval", help="score a ref<TAB>hyp pair file")
    p_eval.add_argument("pairs", help="two-column pair file: reference TAB hypothesis")
    p_eval.add_argument("--lowercase", action=argparse.BooleanOptionalAction,
                        help="lowercase before scoring (default on)")
    p_eval.add_argument("--strip-punct", dest="strip_punct",
                        action=argparse.BooleanOptionalAction,
                        help="strip punctuation before scoring (default on)")
    p_eval.set_defaults(handler=cmd_eval)

    p_vocab = sub.add_parser("vocab", help="train or inspect a subword model")
    p_vocab.add_argument("corpus", nargs="?", help="training corpus, one line per utterance")
    p_vocab.add_argument("--target-size", dest="target_size", type=int,
                         help="total vocabulary size including the 4 specials")
    p_vocab.add_argument("--output", help="where to write the model file")
    p_vocab.add_argument("--show", help="print a summary of an existing model file")
    p_vocab.add_argument("--head", type=int, default=10,
                         help="how many merges --show prints (default 10)")
    p_vocab.set_defaults(handler=cmd_vocab)

    p_decode = sub.add_parser("decode", help="joint CTC/attention beam search")
    p_decode.add_argument("emissions", help="emission matrix file: header 'T V', T rows of V probabilities")
    p_decode.add_argument("--scorer", help="positional attention table, same matrix format "
                                           "(slot 0 = end-of-sequence); uniform if omitted")
    p_decode.add_argument("--ctc-weight", dest="ctc_weight", type=float,
                          default=DEFAULT_CTC_WEIGHT,
                          help=f"CTC weight in the joint score (default {DEFAULT_CTC_WEIGHT})")
    p_decode.add_argument("--beam-size", dest="beam_size", type=int, default=DEFAULT_BEAM_SIZE,
                          help=f"beam width (default {DEFAULT_BEAM_SIZE})")
    p_decode.add_argument("--max-len", dest="max_len", type=int,
                          help="longest hypothesis to consider (default: frame count)")
    p_decode.add_argument("--top-k", dest="top_k", type=int, default=5,
                          help="how many hypotheses to print (default 5)")
    p_decode.set_defaults(handler=cmd_decode)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (
        manifest.ManifestError,
        bpe_mod.BpeError,
        decoding.DecodingError,
        BackendError,
        FileNotFoundError,
        FileExistsError,
        OSError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
