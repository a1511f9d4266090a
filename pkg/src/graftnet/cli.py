"""Command-line surface: generate, retrieve, train, eval, answer, fuse, ablate.

Configuration is flat key/value text with section prefixes (retrieval.E,
model.L, trainer.p0, ...); --set key=value flags override file values, and a
single global seed fans out to per-stage seeds. Exit codes: 0 success,
2 config error, 3 data error, 4 numeric fault.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .data import subsample_kb
from .errors import ConfigError, DataError, NumericFault
from .model import ModelConfig, ModelParams
from .params import load_checkpoint, save_checkpoint
from .pipeline import (World, ablate_grid, load_world, make_world, retrieve_subgraphs,
                       run_experiment, save_world, split_questions, stage_seed)
from .retrieval import (MODES, RetrievalConfig, WordVectorTable, load_subgraph,
                        save_subgraph)
from .synth import WorldSpec
from .training import (EvalConfig, TrainerConfig, build_vocab, evaluate_probs,
                       fuse_all, make_examples, predict_probs, train, tune_beta,
                       tune_threshold)

SECTIONS = {
    "world": WorldSpec,
    "retrieval": RetrievalConfig,
    "model": ModelConfig,
    "trainer": TrainerConfig,
    "eval": EvalConfig,
}

# seeds are governed by the global 'seed' key and the per-stage fan-out
_REJECTED_KEYS = {"world.seed", "trainer.seed"}


@dataclasses.dataclass
class RunConfig:
    world: WorldSpec
    retrieval: RetrievalConfig
    model: ModelConfig
    trainer: TrainerConfig
    eval: EvalConfig
    seed: int = 0


def _coerce(raw: str, default):
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config_file(path) -> dict[str, str]:
    """Lines of 'key = value'; '#' starts a comment."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    kv = {}
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()
    return kv


def build_run_config(kv: dict[str, str]) -> RunConfig:
    """Validate and coerce flat key/value pairs into the typed configs."""
    values: dict[str, dict] = {name: {} for name in SECTIONS}
    seed = 0
    for key, raw in kv.items():
        if key in _REJECTED_KEYS:
            raise ConfigError(f"{key} is managed by the global 'seed' key")
        if key == "seed":
            try:
                seed = int(raw)
            except ValueError:
                raise ConfigError(f"seed must be an integer, got {raw!r}")
            continue
        section, _, field = key.partition(".")
        if section not in SECTIONS or not field:
            raise ConfigError(f"unknown configuration key: {key}")
        cls = SECTIONS[section]
        defaults = cls()
        if not hasattr(defaults, field) or field.startswith("_"):
            raise ConfigError(f"unknown configuration key: {key}")
        try:
            values[section][field] = _coerce(raw, getattr(defaults, field))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})")
    return RunConfig(
        world=WorldSpec(**values["world"]),
        retrieval=RetrievalConfig(**values["retrieval"]),
        model=ModelConfig(**values["model"]),
        trainer=TrainerConfig(**values["trainer"]),
        eval=EvalConfig(**values["eval"]),
        seed=seed,
    )


def config_from_args(args) -> RunConfig:
    kv: dict[str, str] = {}
    if getattr(args, "config", None):
        kv.update(parse_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        kv[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        kv["seed"] = str(args.seed)
    cfg = build_run_config(kv)
    cfg.model.validate()
    cfg.trainer.validate()
    cfg.eval.validate()
    return cfg


def _require_dir(path, what) -> Path:
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"missing {what} directory: {path}")
    return path


def _write_json(path, payload):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")


def _load_table(args) -> WordVectorTable:
    if getattr(args, "vectors", None):
        return WordVectorTable.load(args.vectors)
    return WordVectorTable()


# ---------------------------------------------------------------------------
# checkpoint config sidecar
# ---------------------------------------------------------------------------


def save_model_sidecar(base_path, mcfg: ModelConfig, params: ModelParams,
                       mode: str, theta: float):
    lines = [f"{k} = {v}" for k, v in sorted({
        **mcfg.to_dict(),
        "vocab_size": params.vocab_size,
        "num_entities": params.num_entities,
        "num_relation_ids": params.num_relation_ids,
        "mode": mode,
        "theta": theta,
    }.items())]
    base = Path(base_path)
    base.with_suffix(base.suffix + ".config").write_text("\n".join(lines) + "\n",
                                                         encoding="utf-8")


def load_model_sidecar(base_path) -> dict:
    base = Path(base_path)
    path = base.with_suffix(base.suffix + ".config")
    if not path.exists():
        raise DataError(f"missing checkpoint config: {path}")
    raw = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        raw[key.strip()] = value.strip()
    mcfg = ModelConfig(
        n=int(raw["n"]), L=int(raw["L"]), mixing_rate=float(raw["mixing_rate"]),
        heterogeneous_updates=raw["heterogeneous_updates"] == "True",
        directed_propagation=raw["directed_propagation"] == "True",
        relation_attention=raw["relation_attention"] == "True",
    )
    return {
        "mcfg": mcfg,
        "vocab_size": int(raw["vocab_size"]),
        "num_entities": int(raw["num_entities"]),
        "num_relation_ids": int(raw["num_relation_ids"]),
        "mode": raw["mode"],
        "theta": float(raw["theta"]),
    }


def load_model(base_path) -> tuple[ModelParams, ModelConfig, dict]:
    sidecar = load_model_sidecar(base_path)
    arrays = load_checkpoint(base_path)
    params = ModelParams.from_arrays(arrays, sidecar["mcfg"])
    return params, sidecar["mcfg"], sidecar


# ---------------------------------------------------------------------------
# shared data plumbing
# ---------------------------------------------------------------------------


def load_cached_subgraphs(world: World, subgraph_dir) -> dict:
    directory = _require_dir(subgraph_dir, "subgraph cache")
    return {q.id: load_subgraph(directory, q.id) for q in world.questions}


def build_split_examples(world: World, subgraphs, mode: str, seed: int):
    splits = split_questions(world.questions, seed=stage_seed(seed, "split"))
    vocab = build_vocab(world.corpus, world.questions)
    examples = {}
    recalls = {}
    for name, questions in splits.items():
        examples[name], recalls[name] = make_examples(world.corpus, vocab,
                                                      subgraphs, questions, mode)
    return examples, recalls, vocab


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(args):
    cfg = config_from_args(args)
    spec = dataclasses.replace(cfg.world, seed=stage_seed(cfg.seed, "world"))
    world = make_world(spec)
    save_world(world, args.out)
    print(f"world: {len(world.kb.entities)} entities, {world.kb.num_triples} triples, "
          f"{len(world.corpus)} sentences, {len(world.questions)} questions")
    print(f"wrote {args.out}")


def cmd_retrieve(args):
    cfg = config_from_args(args)
    world = load_world(_require_dir(args.world, "world"))
    kb = world.kb
    if args.kb_fraction is not None and args.kb_fraction < 1.0:
        kb = subsample_kb(kb, args.kb_fraction,
                          seed=stage_seed(cfg.seed, f"subsample:{args.kb_fraction}"))
    subgraphs, report = retrieve_subgraphs(kb, world.corpus, world.links,
                                           world.questions, cfg.retrieval,
                                           table=_load_table(args))
    out = Path(args.out)
    for sg in subgraphs.values():
        save_subgraph(sg, out)
    report["kb_fraction"] = args.kb_fraction if args.kb_fraction is not None else 1.0
    _write_json(out / "report.json", report)
    print(f"retrieved {report['num_questions']} subgraphs, "
          f"answer recall {report['recall']:.4f}")


def cmd_train(args):
    cfg = config_from_args(args)
    if args.mode not in MODES:
        raise ConfigError(f"unknown mode {args.mode!r}; expected one of {MODES}")
    world = load_world(_require_dir(args.world, "world"))
    subgraphs = load_cached_subgraphs(world, args.subgraphs)
    examples, recalls, vocab = build_split_examples(world, subgraphs, args.mode,
                                                    cfg.seed)
    params = ModelParams.init(
        vocab_size=len(vocab),
        num_entities=(max(world.kb.entities) + 1) if world.kb.entities else 1,
        num_relation_ids=world.kb.link_relation_id + 1,
        config=cfg.model, seed=stage_seed(cfg.seed, "init"))

    tcfg = dataclasses.replace(cfg.trainer, seed=stage_seed(cfg.seed, "train"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    history = train(examples["train"], params, tcfg, cfg.model,
                    dev_examples=examples["dev"],
                    log_fn=lambda entry: print(json.dumps(entry, sort_keys=True)))
    with open(out / "history.jsonl", "w", encoding="utf-8") as f:
        for entry in history:
            f.write(json.dumps(entry, sort_keys=True) + "\n")

    dev_probs = predict_probs(examples["dev"], params, cfg.model)
    theta = tune_threshold(dev_probs, examples["dev"]) if examples["dev"] else cfg.eval.theta
    base = out / "model.ckpt"
    save_checkpoint(params.store, base)
    save_model_sidecar(base, cfg.model, params, args.mode, theta)

    report = {"mode": args.mode, "theta": theta, "train_recall": recalls["train"],
              "epochs_run": len(history)}
    if history:
        report["final_train_loss"] = history[-1]["train_loss"]
        if "dev_hits1" in history[-1]:
            report["dev_hits1"] = history[-1]["dev_hits1"]
    _write_json(out / "train_report.json", report)
    print(f"checkpoint written to {base} (theta = {theta})")


def cmd_eval(args):
    cfg = config_from_args(args)
    world = load_world(_require_dir(args.world, "world"))
    subgraphs = load_cached_subgraphs(world, args.subgraphs)
    params, mcfg, sidecar = load_model(args.checkpoint)
    mode = args.mode or sidecar["mode"]
    examples, recalls, _ = build_split_examples(world, subgraphs, mode, cfg.seed)
    theta = args.theta if args.theta is not None else sidecar["theta"]

    test_probs = predict_probs(examples["test"], params, mcfg)
    metrics = evaluate_probs(test_probs, examples["test"], theta)
    metrics.update({"theta": theta, "beta": None, "mode": mode,
                    "test_recall": recalls["test"]})
    if args.out:
        _write_json(Path(args.out) / "report.json", metrics)
    print(json.dumps(metrics, sort_keys=True))


def cmd_answer(args):
    cfg = config_from_args(args)
    world = load_world(_require_dir(args.world, "world"))
    questions = {q.id: q for q in world.questions}
    if args.question_id not in questions:
        raise DataError(f"question {args.question_id} not found in world")
    question = questions[args.question_id]
    subgraph = load_subgraph(_require_dir(args.subgraphs, "subgraph cache"),
                             args.question_id)
    params, mcfg, sidecar = load_model(args.checkpoint)
    vocab = build_vocab(world.corpus, world.questions)
    subgraphs = {question.id: subgraph}
    examples, _ = make_examples(world.corpus, vocab, subgraphs, [question],
                                sidecar["mode"])
    probs = predict_probs(examples, params, mcfg)[0]
    print(f"question {question.id}: {' '.join(question.tokens)}")
    if probs is None:
        print("unanswerable: no seed entities")
        return
    ranked = sorted(probs.items(), key=lambda kv: (-kv[1], kv[0]))[:args.top]
    gold = set(question.answers)
    for entity, p in ranked:
        marker = " *" if entity in gold else ""
        print(f"  {p:.4f}  {entity:6d}  {world.kb.entities[entity]}{marker}")


def cmd_fuse(args):
    cfg = config_from_args(args)
    world = load_world(_require_dir(args.world, "world"))
    subgraphs = load_cached_subgraphs(world, args.subgraphs)

    kb_params, kb_mcfg, kb_side = load_model(args.kb_checkpoint)
    text_params, text_mcfg, text_side = load_model(args.text_checkpoint)
    kb_examples, _, _ = build_split_examples(world, subgraphs, kb_side["mode"],
                                             cfg.seed)
    text_examples, _, _ = build_split_examples(world, subgraphs, text_side["mode"],
                                               cfg.seed)

    kb_dev = predict_probs(kb_examples["dev"], kb_params, kb_mcfg)
    text_dev = predict_probs(text_examples["dev"], text_params, text_mcfg)
    beta = tune_beta(kb_dev, text_dev, kb_examples["dev"])
    fused_dev = fuse_all(kb_dev, text_dev, beta)
    theta = tune_threshold(fused_dev, kb_examples["dev"])

    kb_test = predict_probs(kb_examples["test"], kb_params, kb_mcfg)
    text_test = predict_probs(text_examples["test"], text_params, text_mcfg)
    fused_test = fuse_all(kb_test, text_test, beta)
    metrics = evaluate_probs(fused_test, kb_examples["test"], theta)
    metrics.update({"theta": theta, "beta": beta})
    if args.out:
        _write_json(Path(args.out) / "fuse_report.json", metrics)
    print(json.dumps(metrics, sort_keys=True))


def _parse_floats(raw: str) -> list[float]:
    try:
        return [float(x) for x in raw.split(",") if x.strip() != ""]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers: {raw!r}")


def cmd_ablate(args):
    cfg = config_from_args(args)
    world = load_world(_require_dir(args.world, "world"))
    fractions = _parse_floats(args.kb_fractions)
    p0_grid = _parse_floats(args.p0_grid)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    if not fractions or not p0_grid or not variants:
        raise ConfigError("ablate requires nonempty grids")
    if args.mode not in MODES:
        raise ConfigError(f"unknown mode {args.mode!r}; expected one of {MODES}")

    rows = ablate_grid(world, kb_fractions=fractions, p0_grid=p0_grid,
                       variants=variants, mode=args.mode, rcfg=cfg.retrieval,
                       mcfg=cfg.model, tcfg=cfg.trainer, seed=cfg.seed,
                       reps=args.reps)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "ablate.jsonl", "w", encoding="utf-8") as f:
            for row in rows:
                f.write(json.dumps(row, sort_keys=True) + "\n")
    header = f"{'fraction':>8} {'p0':>5} {'variant':>10} {'rep':>3} {'hits@1':>7} {'f1':>7}"
    print(header)
    for row in rows:
        print(f"{row['kb_fraction']:>8.2f} {row['p0']:>5.2f} {row['variant']:>10} "
              f"{row['rep']:>3d} {row['hits1']:>7.4f} {row['f1']:>7.4f}")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(parser):
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one configuration key")
    parser.add_argument("--seed", type=int, help="global seed (fans out per stage)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graftnet",
        description="KB + text question answering: retrieval, propagation, training.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic world")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("retrieve", help="build question subgraphs")
    _add_common(p)
    p.add_argument("--world", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kb-fraction", type=float, default=None)
    p.add_argument("--vectors", help="optional word-vector table file")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("train", help="train a model on cached subgraphs")
    _add_common(p)
    p.add_argument("--world", required=True)
    p.add_argument("--subgraphs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", default="ef", choices=MODES)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _add_common(p)
    p.add_argument("--world", required=True)
    p.add_argument("--subgraphs", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", default=None, choices=MODES)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("answer", help="rank entities for one question")
    _add_common(p)
    p.add_argument("--world", required=True)
    p.add_argument("--subgraphs", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--question-id", type=int, required=True)
    p.add_argument("--top", type=int, default=10)
    p.set_defaults(func=cmd_answer)

    p = sub.add_parser("fuse", help="late-fuse a KB model and a text model")
    _add_common(p)
    p.add_argument("--world", required=True)
    p.add_argument("--subgraphs", required=True)
    p.add_argument("--kb-checkpoint", required=True)
    p.add_argument("--text-checkpoint", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("ablate", help="grid of runs over p0 x KB fraction x variants")
    _add_common(p)
    p.add_argument("--world", required=True)
    p.add_argument("--out")
    p.add_argument("--kb-fractions", default="1.0")
    p.add_argument("--p0-grid", default="0.0")
    p.add_argument("--variants", default="full")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--mode", default="ef", choices=MODES)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericFault as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
