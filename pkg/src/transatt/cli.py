"""Command-line pipeline: gen-synth, build-dataset, train, predict, eval, inspect-attention.

Effective settings come from built-in defaults, then an optional INI-style
config file (``[model]``, ``[train]``, ``[synth]``, ``[data]`` sections of
``key = value`` lines), then command-line flags.  Exit codes: 0 success,
2 usage or config error, 3 data error, 4 numerical divergence.
"""

import argparse
import configparser
from dataclasses import asdict, fields
import json
import logging
from pathlib import Path
import sys

from . import __version__
from .encoder import EmbeddingFormatError, load_embeddings
from .evaluation import DEFAULT_KS, OracleRanker, read_common_attrs, run_apc, run_ape
from .kb import ClassPath, KbError, build_dataset, extract_class_paths
from .model import (FORMAT_VERSION, CheckpointError, ModelConfig, load_checkpoint,
                    rank_attributes_for_entity, rank_attributes_for_path, save_checkpoint,
                    write_attention_csv)
from .synth import SynthConfig, export, generate, load
from .trainer import DivergenceError, TrainConfig, train

log = logging.getLogger("transatt")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4
CHECKPOINT_NAME = "checkpoint.json"

DATA_DEFAULTS = {"min_attr_support": 20, "embeddings": "", "common_attrs": "",
                 "ks": ",".join(str(k) for k in DEFAULT_KS)}


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


def _defaults():
    return {
        "model": asdict(ModelConfig()),
        "train": asdict(TrainConfig()),
        "synth": asdict(SynthConfig()),
        "data": dict(DATA_DEFAULTS),
    }


def _coerce(section, key, raw, template):
    """Parse a config-file string into the type of the built-in default."""
    text = str(raw).strip()
    try:
        if isinstance(template, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(template, int):
            return int(text)
        if isinstance(template, float):
            return float(text)
        if isinstance(template, tuple):
            parts = tuple(int(x) for x in text.split(","))
            if len(parts) != len(template):
                raise ValueError(text)
            return parts
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {text!r} "
                          f"as {type(template).__name__}") from None
    return text


def read_config_file(path):
    """Overrides from an INI file; unknown sections or keys are rejected."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from None
    defaults = _defaults()
    out = {}
    for section in parser.sections():
        if section not in defaults:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in defaults[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            out[(section, key)] = _coerce(section, key, raw, defaults[section][key])
    return out


def effective_config(args):
    """Merge defaults < config file < flags into a section -> dict mapping."""
    cfg = _defaults()
    if getattr(args, "config", None):
        for (section, key), v in read_config_file(args.config).items():
            cfg[section][key] = v
    for dest, v in vars(args).items():
        if "." in dest and v is not None:
            section, key = dest.split(".", 1)
            cfg[section][key] = v
    seed = getattr(args, "seed", None)
    if seed is not None:
        if getattr(args, "command", None) == "gen-synth":
            cfg["synth"]["seed"] = seed
        else:
            cfg["model"]["seed"] = cfg["train"]["seed"] = seed
    return cfg


def format_config(cfg):
    lines = []
    for section in ("model", "train", "synth", "data"):
        lines.append(f"[{section}]")
        for key, v in cfg[section].items():
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{key} = {v}")
        lines.append("")
    return "\n".join(lines)


def parse_ks(text):
    try:
        ks = [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"malformed k list {text!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise ConfigError(f"k list must hold positive integers, got {text!r}")
    return sorted(set(ks))


def _model_config(cfg):
    try:
        return ModelConfig(**cfg["model"]).validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _train_config(cfg):
    try:
        return TrainConfig(**cfg["train"]).validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _synth_config(cfg):
    try:
        return SynthConfig(**cfg["synth"]).validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _common_attrs(cfg):
    path = cfg["data"]["common_attrs"]
    if not path:
        return ()
    try:
        return tuple(read_common_attrs(path))
    except OSError as exc:
        raise DataError(f"cannot read common-attribute file {path}: {exc}") from None


def _load_data(directory):
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"dataset directory {d} does not exist")
    try:
        return load(d)
    except OSError as exc:
        raise DataError(f"cannot read dataset {d}: {exc}") from None


def _load_model(path):
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    except (CheckpointError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"bad checkpoint {path}: {exc}") from None


def _entity_paths(data, entity):
    try:
        ps = extract_class_paths(data.kb, entity)
    except KeyError:
        raise DataError(f"unknown entity {entity!r}") from None
    if ps.is_empty:
        raise DataError(f"entity {entity!r} has no class-path")
    return ps


# -- commands ------------------------------------------------------------

def cmd_gen_synth(args, cfg):
    try:
        data = generate(_synth_config(cfg))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    export(data, args.out)
    print(json.dumps({"out": str(args.out), "entities": len(data.kb.entities),
                      "classes": len(data.kb.classes), "attributes": len(data.kb.attributes),
                      "holdout_paths": len(data.holdout_paths)}))
    return EXIT_OK


def _training_kb(data, split):
    if split == "all" or not data.test_entities:
        return data.kb
    return data.train_kb


def cmd_build_dataset(args, cfg):
    data = _load_data(args.dataset)
    tuples, kept = build_dataset(_training_kb(data, args.split), cfg["data"]["min_attr_support"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "tuples.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# entity\tattribute\tclass-paths (|-separated)\n")
        for t in tuples:
            fh.write(f"{t.entity}\t{t.attribute}\t{'|'.join(str(p) for p in t.path_set)}\n")
    with open(out / "attributes.txt", "w", encoding="utf-8", newline="\n") as fh:
        for a in sorted(kept):
            fh.write(a + "\n")
    print(json.dumps({"tuples": len(tuples), "entities": len({t.entity for t in tuples}),
                      "attributes": len(kept)}))
    return EXIT_OK


def cmd_train(args, cfg):
    mcfg, tcfg = _model_config(cfg), _train_config(cfg)
    if args.save_every is not None and args.save_every < 1:
        raise ConfigError("--save-every must be >= 1")
    data = _load_data(args.dataset)
    table = None
    if cfg["data"]["embeddings"]:
        try:
            table = load_embeddings(cfg["data"]["embeddings"])
        except OSError as exc:
            raise DataError(f"cannot read embeddings: {exc}") from None
    tuples, _ = build_dataset(_training_kb(data, args.split), cfg["data"]["min_attr_support"])
    out = Path(args.out) if args.out else Path(args.dataset) / CHECKPOINT_NAME

    def on_epoch(record, model):
        print(json.dumps({k: record[k] for k in ("epoch", "mean_loss", "val_hits1", "seconds")}),
              flush=True)
        if args.save_every and record["epoch"] % args.save_every == 0:
            save_checkpoint(model, out)

    model, state = train(tuples, mcfg, tcfg, table=table, callback=on_epoch)
    save_checkpoint(model, out)
    log.info("saved checkpoint %s (best epoch %d of %d)", out, state.best_epoch, state.epoch)
    return EXIT_OK


def _print_ranking(ranked):
    for attr, s in ranked:
        print(f"{attr}\t{s:.6f}")


def cmd_predict(args, cfg):
    if (args.entity is None) == (args.path is None):
        raise ConfigError("give exactly one of --entity or --path")
    if args.topk < 1:
        raise ConfigError("--topk must be >= 1")
    model = _load_model(args.checkpoint)
    if args.path is not None:
        path = ClassPath.parse(args.path)
        if args.emit_attention:
            raise ConfigError("--emit-attention needs --entity")
        _print_ranking(rank_attributes_for_path(path, model, args.topk))
        return EXIT_OK
    if not args.dataset:
        raise ConfigError("--entity needs --dataset")
    ps = _entity_paths(_load_data(args.dataset), args.entity)
    ranked, att = rank_attributes_for_entity(ps, model, args.topk, _common_attrs(cfg))
    _print_ranking(ranked)
    if args.emit_attention:
        write_attention_csv(args.emit_attention, ps.paths, ranked, att)
    return EXIT_OK


def cmd_inspect_attention(args, cfg):
    if args.topk < 1:
        raise ConfigError("--topk must be >= 1")
    model = _load_model(args.checkpoint)
    ps = _entity_paths(_load_data(args.dataset), args.entity)
    ranked, att = rank_attributes_for_entity(ps, model, args.topk, _common_attrs(cfg))
    write_attention_csv(args.out or sys.stdout, ps.paths, ranked, att)
    return EXIT_OK


def cmd_eval(args, cfg):
    ks = parse_ks(args.k if args.k is not None else cfg["data"]["ks"])
    data = _load_data(args.dataset)
    if args.oracle:
        if not data.kb.r3:
            raise DataError("--oracle needs planted path attributes (ground_truth_r3.tsv)")
        model = OracleRanker(data.kb.attributes, data.kb.path_attributes)
    elif args.checkpoint:
        model = _load_model(args.checkpoint)
    else:
        raise ConfigError("give --checkpoint or --oracle")
    if args.task == "ape":
        entities = data.kb.entities
        if args.split == "test" and data.test_entities:
            entities = data.test_entities
        elif args.split == "train" and data.train_entities:
            entities = data.train_entities
        report = run_ape(model, data.kb, ks, _common_attrs(cfg), entities=entities)
    else:
        if not data.kb.r3:
            raise DataError("APC needs planted path attributes (ground_truth_r3.tsv)")
        paths = data.holdout_paths if args.paths == "holdout" and data.holdout_paths else \
            sorted(data.kb.path_attributes)
        report = run_apc(model, paths, data.kb.path_attributes, ks)
    print(report.to_table())
    print(report.to_json())
    if args.json_out:
        Path(args.json_out).write_text(report.to_json() + "\n", encoding="utf-8")
    return EXIT_OK


# -- parser --------------------------------------------------------------

def _range(text):
    try:
        lo, hi = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}") from None
    return (lo, hi)


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _add_section_flags(p, section, template, skip=()):
    for f in fields(template):
        if f.name in skip:
            continue
        default = getattr(template(), f.name)
        if isinstance(default, bool):
            typ = _bool
        elif isinstance(default, tuple):
            typ = _range
        else:
            typ = type(default)
        p.add_argument("--" + f.name.replace("_", "-"), dest=f"{section}.{f.name}", type=typ,
                       default=None, metavar=f.name.upper())


def _common(p):
    p.add_argument("--config", help="INI-style config file")
    p.add_argument("--print-config", action="store_true",
                   help="print the effective configuration and exit")
    p.add_argument("--seed", type=int, default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="transatt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"transatt {__version__} (checkpoint format_version {FORMAT_VERSION})")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("gen-synth", help="generate a synthetic KB with planted truth")
    _common(p)
    p.add_argument("--out", required=True)
    _add_section_flags(p, "synth", SynthConfig, skip=("seed",))
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("build-dataset", help="write filtered training tuples")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "all"), default="train")
    p.add_argument("--min-attr-support", dest="data.min_attr_support", type=int, default=None)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", help=f"checkpoint path (default DATASET/{CHECKPOINT_NAME})")
    p.add_argument("--split", choices=("train", "all"), default="train")
    p.add_argument("--save-every", type=int, default=None, metavar="N",
                   help="also write the checkpoint every N epochs")
    p.add_argument("--min-attr-support", dest="data.min_attr_support", type=int, default=None)
    p.add_argument("--embeddings", dest="data.embeddings", default=None,
                   help="word2vec text file with class-word vectors")
    _add_section_flags(p, "model", ModelConfig, skip=("seed",))
    _add_section_flags(p, "train", TrainConfig, skip=("seed",))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="rank attributes for an entity or a class-path")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset")
    p.add_argument("--entity")
    p.add_argument("--path", help="slash-joined class-path, root first")
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--emit-attention", metavar="CSV")
    p.add_argument("--common-attrs", dest="data.common_attrs", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="run APE or APC and print the report")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--oracle", action="store_true", help="score with the planted truth instead")
    p.add_argument("--task", choices=("ape", "apc"), default="ape")
    p.add_argument("--k", default=None, help="comma-separated k list")
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p.add_argument("--paths", choices=("holdout", "all"), default="holdout")
    p.add_argument("--common-attrs", dest="data.common_attrs", default=None)
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect-attention", help="attention matrix of one entity as CSV")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--entity", required=True)
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--out")
    p.add_argument("--common-attrs", dest="data.common_attrs", default=None)
    p.set_defaults(func=cmd_inspect_attention)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = effective_config(args)
        if args.print_config:
            print(format_config(cfg), end="")
            return EXIT_OK
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (DataError, KbError, EmbeddingFormatError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
