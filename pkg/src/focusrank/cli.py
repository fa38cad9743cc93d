"""Command-line pipeline: gen, prepare, train, eval, rank, gradcheck.

All commands read one JSON config (unknown keys rejected), overridable with
``--set section.key=value``, ``--seed`` and ``--out``. Outputs land under
the configured output directory together with a run manifest that records
the effective config hash, seeds and library versions; nothing in the
outputs depends on wall-clock time, so identical configs reproduce
byte-identical artifacts.

Exit codes: 0 success, 1 validation problem (bad config, bad arguments,
missing artifact), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import datagen, evaluation, ranker
from .baselines import (
    build_cochange,
    build_cochange_literal,
    load_cochange,
    save_cochange,
)
from .dataset import (
    BalanceConfig,
    DatasetSplit,
    balance,
    group_by_project,
    label_pairs,
    load_pairs,
    load_split,
    save_pairs,
    save_split,
    split_cross_project,
    split_temporal,
)
from .embedding import ProviderConfig, RemoteConfig, make_provider
from .errors import (
    CheckpointFormatError,
    ConfigInvalidError,
    FocusRankError,
    MissingArtifactError,
    TooFewCommitsError,
    TooFewProjectsError,
    UnknownNodeError,
)
from .graphs import Project, load_corpus, union_graph

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

APPROACHES = ("nextfocus", "random", "semantic", "cochange")

_VALIDATION_ERRORS = (
    ConfigInvalidError,
    MissingArtifactError,
    UnknownNodeError,
    TooFewCommitsError,
    TooFewProjectsError,
    CheckpointFormatError,
    ValueError,
)


def default_run_config() -> dict:
    return {
        "out_dir": "runs/out",
        "corpus_dir": "data/corpus",
        "gen": datagen.GenConfig().to_dict(),
        "provider": {
            "kind": "hashed",
            "dimension": 256,
            "cache_dir": None,
            "remote": None,
        },
        "split": {"mode": "temporal", "folds": 10, "fold": 0, "seed": 7},
        "balance": {"target_pairs_per_project": 400, "seed": 7},
        "train": ranker.TrainConfig().to_dict(),
        "grid": {},
        "eval": {
            "k_max": 10,
            "tau": None,
            "taus": [1, 2, 3, None],
            "seed": 7,
            "cochange_mode": "aligned",
        },
    }


_GRID_KEYS = {"learning_rate", "alpha", "beta", "lambda_penalty", "h"}
_REMOTE_KEYS = {"endpoint", "model", "auth_env"}


def _merge_config(defaults: dict, user: dict, path: str = "") -> dict:
    """Overlay `user` on `defaults`, rejecting keys defaults do not know."""
    merged = dict(defaults)
    for key, value in user.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigInvalidError(f"unknown config key: {here}")
        base = defaults[key]
        if key == "grid":
            if not isinstance(value, dict):
                raise ConfigInvalidError("grid must be an object of value lists")
            bad = set(value) - _GRID_KEYS
            if bad:
                raise ConfigInvalidError(f"unknown grid keys: {sorted(bad)}")
            merged[key] = value
        elif key == "remote" and value is not None:
            if not isinstance(value, dict) or set(value) - _REMOTE_KEYS:
                raise ConfigInvalidError(
                    f"remote must be an object with keys {sorted(_REMOTE_KEYS)}"
                )
            merged[key] = value
        elif isinstance(base, dict) and isinstance(value, dict):
            merged[key] = _merge_config(base, value, here)
        else:
            merged[key] = value
    return merged


def _apply_set(user: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigInvalidError(f"--set needs key=value, got {assignment!r}")
    dotted, raw = assignment.split("=", 1)
    keys = [k for k in dotted.strip().split(".") if k]
    if not keys:
        raise ConfigInvalidError(f"--set needs a key path, got {assignment!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = user
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigInvalidError(f"--set path {dotted} crosses a non-object value")
    node[keys[-1]] = value


def load_run_config(
    config_path: Optional[str],
    set_args: Sequence[str] = (),
    seed: Optional[int] = None,
    out: Optional[str] = None,
) -> dict:
    user: dict = {}
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise MissingArtifactError(f"config file {path} does not exist")
        with open(path, "r", encoding="utf-8") as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigInvalidError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(user, dict):
            raise ConfigInvalidError(f"{path}: config root must be an object")
    for assignment in set_args:
        _apply_set(user, assignment)
    config = _merge_config(default_run_config(), user)
    if seed is not None:
        config["gen"]["seed"] = seed
        config["split"]["seed"] = seed
        config["balance"]["seed"] = seed
        config["train"]["seed"] = seed
        config["eval"]["seed"] = seed
    if out is not None:
        config["out_dir"] = out
    _validate_run_config(config)
    return config


def _parse_tau(value, where: str) -> Optional[float]:
    if value is None:
        return None
    if value == "inf":
        return math.inf
    if isinstance(value, (int, float)) and not isinstance(value, bool) and value >= 0:
        return float(value)
    raise ConfigInvalidError(f"{where} must be null, \"inf\", or a number >= 0")


def _validate_run_config(config: dict) -> None:
    if not config["out_dir"] or not config["corpus_dir"]:
        raise ConfigInvalidError("out_dir and corpus_dir must be non-empty")
    if config["split"]["mode"] not in ("temporal", "cross_project"):
        raise ConfigInvalidError("split.mode must be temporal or cross_project")
    ev = config["eval"]
    if ev["k_max"] < 1:
        raise ConfigInvalidError("eval.k_max must be >= 1")
    if ev["cochange_mode"] not in ("aligned", "literal"):
        raise ConfigInvalidError("eval.cochange_mode must be aligned or literal")
    _parse_tau(ev["tau"], "eval.tau")
    if not isinstance(ev["taus"], list) or not ev["taus"]:
        raise ConfigInvalidError("eval.taus must be a non-empty list")
    for t in ev["taus"]:
        _parse_tau(t, "eval.taus entries")
    # typed sections validate themselves on construction
    datagen.GenConfig.from_dict(config["gen"]).validate()
    _provider_config(config).validate()
    ranker.TrainConfig.from_dict(config["train"])
    BalanceConfig(**config["balance"])


def _provider_config(config: dict) -> ProviderConfig:
    section = config["provider"]
    remote = section.get("remote")
    return ProviderConfig(
        kind=section["kind"],
        dimension=section["dimension"],
        cache_dir=section.get("cache_dir"),
        remote=RemoteConfig(**remote) if remote else None,
    )


def _config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _write_manifest(config: dict, command: str, outputs: Sequence[str]) -> None:
    out_dir = Path(config["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config_sha256": _config_hash(config),
        "seeds": {
            "gen": config["gen"]["seed"],
            "split": config["split"]["seed"],
            "balance": config["balance"]["seed"],
            "train": config["train"]["seed"],
            "eval": config["eval"]["seed"],
        },
        "versions": {
            "focusrank": __version__,
            "numpy": np.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
        "outputs": sorted(outputs),
    }
    with open(out_dir / f"manifest-{command}.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_corpus(config: dict) -> dict[str, Project]:
    corpus_dir = Path(config["corpus_dir"])
    paths = sorted(p for p in corpus_dir.glob("*.json") if p.name != "manifest.json")
    if not paths:
        raise MissingArtifactError(
            f"no project files under {corpus_dir}; run `focusrank gen` first"
        )
    return load_corpus(paths)


def _diff_labels(project: Project, diff_index: int):
    """Union-graph label lookup for one diff: covers added, removed and
    preserved nodes alike."""
    return union_graph(project.versions[diff_index], project.versions[diff_index + 1])


def _collect_pairs(corpus, items):
    pairs = []
    for name, diff_index in items:
        project = corpus[name]
        d = project.diff_at(diff_index)
        anchors = sorted(d.changed_nodes())
        if not anchors:
            continue
        pairs.extend(label_pairs(d, project.versions[diff_index + 1], anchors, project=name))
    return pairs


def _pair_arrays(pairs, corpus, provider):
    """Embed anchor/candidate labels into (anchors, cands, labels) arrays."""
    unions: dict[tuple[str, int], object] = {}
    texts: list[str] = []
    for pair in pairs:
        key = (pair.project, pair.diff_index)
        if key not in unions:
            unions[key] = _diff_labels(corpus[pair.project], pair.diff_index)
        union = unions[key]
        texts.append(union.label(pair.anchor))
        texts.append(union.label(pair.candidate))
    unique = sorted(set(texts))
    vectors = provider.embed(unique)
    by_text = {t: vectors[i] for i, t in enumerate(unique)}
    anchors = np.stack([by_text[texts[2 * i]] for i in range(len(pairs))])
    cands = np.stack([by_text[texts[2 * i + 1]] for i in range(len(pairs))])
    labels = np.asarray([pair.label for pair in pairs], dtype=np.float64)
    return anchors, cands, labels


def _split_for(config: dict, corpus) -> DatasetSplit:
    mode = config["split"]["mode"]
    diff_keys = [
        (name, i) for name in sorted(corpus) for i in range(corpus[name].n_diffs)
    ]
    if mode == "temporal":
        return split_temporal(diff_keys)
    counts = {name: corpus[name].n_diffs for name in corpus}
    folds = split_cross_project(counts, config["split"]["folds"], config["split"]["seed"])
    fold = config["split"]["fold"]
    if not 0 <= fold < len(folds):
        raise ConfigInvalidError(f"split.fold {fold} out of range (have {len(folds)})")
    return folds[fold]


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"{path} not found; {hint}")
    return path


def cmd_gen(config: dict) -> int:
    gen_cfg = datagen.GenConfig.from_dict(config["gen"])
    paths = datagen.generate(gen_cfg, config["corpus_dir"])
    corpus = _load_corpus(config)
    stats = datagen.describe(corpus)
    out_dir = Path(config["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "corpus-stats.json", "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=1, sort_keys=True)
        fh.write("\n")
    _write_manifest(config, "gen", [str(p) for p in paths] + ["corpus-stats.json"])
    logger.info("generated %d projects under %s", len(paths), config["corpus_dir"])
    return EXIT_OK


def cmd_prepare(config: dict) -> int:
    corpus = _load_corpus(config)
    split = _split_for(config, corpus)
    out_dir = Path(config["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    train_pairs = _collect_pairs(corpus, split.train)
    val_pairs = _collect_pairs(corpus, split.validation)
    test_pairs = _collect_pairs(corpus, split.test)
    balanced = balance(
        group_by_project(train_pairs), BalanceConfig(**config["balance"])
    )

    save_split(split, out_dir / "split.json")
    save_pairs(train_pairs, out_dir / "pairs.train.jsonl")
    save_pairs(balanced, out_dir / "pairs.train.balanced.jsonl")
    save_pairs(val_pairs, out_dir / "pairs.val.jsonl")
    save_pairs(test_pairs, out_dir / "pairs.test.jsonl")

    # warm the embedding cache for everything train/eval will look up
    provider = make_provider(_provider_config(config))
    _pair_arrays(balanced + val_pairs + test_pairs, corpus, provider)

    _write_manifest(config, "prepare", [
        "split.json", "pairs.train.jsonl", "pairs.train.balanced.jsonl",
        "pairs.val.jsonl", "pairs.test.jsonl",
    ])
    logger.info(
        "prepared %d train (%d balanced), %d val, %d test pairs",
        len(train_pairs), len(balanced), len(val_pairs), len(test_pairs),
    )
    return EXIT_OK


def cmd_train(config: dict) -> int:
    corpus = _load_corpus(config)
    out_dir = Path(config["out_dir"])
    train_path = _require(
        out_dir / "pairs.train.balanced.jsonl", "run `focusrank prepare` first"
    )
    val_path = _require(out_dir / "pairs.val.jsonl", "run `focusrank prepare` first")

    provider = make_provider(_provider_config(config))
    train_set = _pair_arrays(load_pairs(train_path), corpus, provider)
    val_set = _pair_arrays(load_pairs(val_path), corpus, provider)

    base_cfg = ranker.TrainConfig.from_dict(config["train"])
    grid = config["grid"]
    if grid:
        ckpt, rows = ranker.grid_search(
            train_set, val_set, base_cfg, grid, provider.fingerprint
        )
        with open(out_dir / "grid-results.json", "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=1, sort_keys=True)
            fh.write("\n")
        outputs = ["checkpoint.json", "grid-results.json"]
    else:
        ckpt = ranker.train(train_set, val_set, base_cfg, provider.fingerprint)
        outputs = ["checkpoint.json"]
    ranker.save_checkpoint(ckpt, out_dir / "checkpoint.json")
    _write_manifest(config, "train", outputs)
    best = min((row["val_loss"] for row in ckpt.history), default=math.nan)
    logger.info("trained %d epochs, best validation loss %.6f", len(ckpt.history), best)
    return EXIT_OK


def _make_scorer(config: dict, approach: str, corpus, split: DatasetSplit):
    out_dir = Path(config["out_dir"])
    if approach == "nextfocus":
        ckpt_path = _require(out_dir / "checkpoint.json", "run `focusrank train` first")
        ckpt = ranker.load_checkpoint(ckpt_path)
        provider = make_provider(_provider_config(config))
        if ckpt.provider_fingerprint and ckpt.provider_fingerprint != provider.fingerprint:
            raise ConfigInvalidError(
                "checkpoint was trained with embedding provider "
                f"{ckpt.provider_fingerprint!r} but config selects {provider.fingerprint!r}"
            )
        return evaluation.NeuralScorer(ckpt, provider)
    if approach == "random":
        return evaluation.RandomScorer(config["eval"]["seed"])
    if approach == "semantic":
        return evaluation.SemanticScorer(make_provider(_provider_config(config)))
    if approach == "cochange":
        if config["eval"]["cochange_mode"] == "literal":
            diffs = [corpus[name].diff_at(i) for name, i in split.train]
            matrix = build_cochange_literal(diffs)
        else:
            train_path = _require(
                out_dir / "pairs.train.jsonl", "run `focusrank prepare` first"
            )
            matrix = build_cochange(load_pairs(train_path))
        save_cochange(matrix, out_dir / "cochange.jsonl")
        return evaluation.CoChangeScorer(matrix)
    raise ConfigInvalidError(f"unknown approach {approach!r}; choose from {APPROACHES}")


def cmd_eval(config: dict, approach: str, plot_data: bool = False) -> int:
    corpus = _load_corpus(config)
    out_dir = Path(config["out_dir"])
    split = load_split(_require(out_dir / "split.json", "run `focusrank prepare` first"))
    scorer = _make_scorer(config, approach, corpus, split)

    k_max = config["eval"]["k_max"]
    tau = _parse_tau(config["eval"]["tau"], "eval.tau")
    report = evaluation.evaluate(scorer, corpus, split.test, k_max=k_max, tau=tau)

    summary = report.summary()
    summary["by_project"] = evaluation.aggregate_by_project(
        report.results, ks=list(report.ks()), dynamic=True
    )
    outputs = [f"report-{approach}.csv", f"report-{approach}.json"]
    with open(out_dir / f"report-{approach}.csv", "w", encoding="utf-8") as fh:
        fh.write(evaluation.report_to_csv(report))
    with open(out_dir / f"report-{approach}.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")

    if plot_data:
        taus = [_parse_tau(t, "eval.taus") for t in config["eval"]["taus"]]
        reports = [
            evaluation.evaluate(scorer, corpus, split.test, k_max=k_max, tau=t)
            for t in taus
        ]
        rows = evaluation.radius_rows(reports, ks=list(range(1, k_max + 1)))
        with open(out_dir / f"plot-{approach}.csv", "w", encoding="utf-8") as fh:
            fh.write(evaluation.radius_rows_csv(rows))
        outputs.append(f"plot-{approach}.csv")

    if approach == "cochange":
        outputs.append("cochange.jsonl")
    _write_manifest(config, f"eval-{approach}", outputs)
    logger.info(
        "%s: mean precision over k<=%d is %.4f on %d anchors (%d skipped)",
        approach, k_max, summary["mean_precision_over_k"],
        summary["anchors"], summary["skipped_no_positive"],
    )
    return EXIT_OK


def cmd_rank(config: dict, project_name: str, anchor: str, k: int) -> int:
    if k < 1:
        raise ConfigInvalidError("k must be >= 1")
    corpus = _load_corpus(config)
    if project_name not in corpus:
        raise ConfigInvalidError(
            f"project {project_name!r} not in corpus ({', '.join(sorted(corpus))})"
        )
    out_dir = Path(config["out_dir"])
    ckpt = ranker.load_checkpoint(
        _require(out_dir / "checkpoint.json", "run `focusrank train` first")
    )
    provider = make_provider(_provider_config(config))

    latest = corpus[project_name].versions[-1]
    if anchor not in latest:
        raise UnknownNodeError(f"{anchor!r} is not a node of {project_name}'s latest version")
    candidates = sorted(latest.node_ids - {anchor})
    tau = _parse_tau(config["eval"]["tau"], "eval.tau")
    candidates = evaluation.radius_filter(latest, anchor, candidates, tau)
    if not candidates:
        raise ConfigInvalidError("no candidates left after the radius filter")

    texts = [latest.label(anchor)] + [latest.label(c) for c in candidates]
    embs = provider.embed(texts)
    anchor_emb = np.tile(embs[0], (len(candidates), 1))
    probs = ranker.predict_proba(ckpt.params, anchor_emb, embs[1:])
    ordered = sorted(zip(candidates, probs), key=lambda cp: (-cp[1], cp[0]))
    for node_id, _ in ordered[:k]:
        print(node_id)
    _write_manifest(config, "rank", [])
    return EXIT_OK


def cmd_gradcheck(trials: int, seed: int) -> int:
    results = ranker.gradient_check(trials=trials, seed=seed)
    for row in results:
        print(
            "trial {trial:02d}: d={d} h={h} batch={batch} "
            "max_rel_error={max_rel_error:.3e} {status}".format(
                status="PASS" if row["passed"] else "FAIL", **row
            )
        )
    failed = [row for row in results if not row["passed"]]
    print(f"gradcheck: {len(results) - len(failed)}/{len(results)} passed")
    return EXIT_OK if not failed else EXIT_VALIDATION


class _Parser(argparse.ArgumentParser):
    """Argument errors are validation errors: exit 1, not argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="focusrank", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="path to a JSON run config")
    parser.add_argument("--seed", type=int, help="override every section seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override one config entry, e.g. --set train.loss.alpha=0.7",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", help="generate the synthetic corpus")
    sub.add_parser("prepare", help="diff, label, split, balance, warm embeddings")
    sub.add_parser("train", help="train the ranker (grid search when configured)")
    p_eval = sub.add_parser("eval", help="evaluate one approach on the test split")
    p_eval.add_argument("--approach", choices=APPROACHES, default="nextfocus")
    p_eval.add_argument(
        "--plot-data", action="store_true",
        help="also sweep eval.taus and emit the radius/precision series",
    )
    p_rank = sub.add_parser("rank", help="print the top-k next-focus nodes")
    p_rank.add_argument("--project", required=True)
    p_rank.add_argument("--anchor", required=True)
    p_rank.add_argument("--k", type=int, default=5)
    p_grad = sub.add_parser("gradcheck", help="compare gradients to finite differences")
    p_grad.add_argument("--trials", type=int, default=20)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck(args.trials, args.seed if args.seed is not None else 0)
        config = load_run_config(args.config, args.set, args.seed, args.out)
        if args.command == "gen":
            return cmd_gen(config)
        if args.command == "prepare":
            return cmd_prepare(config)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "eval":
            return cmd_eval(config, args.approach, args.plot_data)
        if args.command == "rank":
            return cmd_rank(config, args.project, args.anchor, args.k)
        parser.error(f"unknown command {args.command!r}")
    except _VALIDATION_ERRORS as exc:
        logger.error("%s", exc)
        return EXIT_VALIDATION
    except FocusRankError as exc:
        logger.error("%s", exc)
        return EXIT_RUNTIME
    except OSError as exc:
        logger.error("%s", exc)
        return EXIT_RUNTIME
    return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
