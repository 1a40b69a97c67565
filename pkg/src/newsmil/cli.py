"""Command-line entry point.

Subcommands: train, eval, gradcheck, stats, synth.  Options can come from
a `key = value` config file (--config); explicit flags override the file.
The fully resolved configuration is echoed into the output directory.

Exit codes: 0 success, 1 usage/config error, 2 data/parse error,
3 numeric failure (gradcheck or NaN/Inf during training).  Diagnostics go
to stderr; results go to files and stdout.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields as dataclass_fields
from datetime import date
from pathlib import Path

from . import corpus, model, textprep, train
from .errors import DataError, NumericError
from .tensor import make_rng

GRADCHECK_TOLERANCE = 1e-5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_date(text: str) -> date:
    return date.fromisoformat(text.strip())


# option name -> (converter, default); names use dashes, dests underscores
_OPTION_TYPES = {
    "config": (str, None),
    "news": (str, None),
    "prices": (str, None),
    "embeddings": (str, None),
    "stopwords": (str, None),
    "filter-keywords": (str, None),
    "checkpoint": (str, None),
    "out": (str, None),
    "spec": (str, None),
    "train-end": (_parse_date, None),
    "val-end": (_parse_date, None),
    "split": (str, "test"),
    "variant": (str, "mil-rep"),
    "seed": (int, 0),
    "seeds": (int, 5),
    "embed-dim": (int, 100),
    "lstm-units": (int, 50),
    "attn-dim": (int, 100),
    "clf-hidden": (int, 150),
    "batch-size": (int, 32),
    "max-epochs": (int, 100),
    "patience": (int, 10),
    "min-count": (int, 5),
    "news-lag-days": (int, 0),
    "keep-prob": (float, 0.5),
    "strict": (_parse_bool, True),
    "fine-tune-embeddings": (_parse_bool, False),
    "use-adj-close": (_parse_bool, False),
    "instances": (_parse_bool, False),
}


def parse_kv_file(path) -> dict[str, str]:
    """Line-oriented `key = value` pairs; '#' starts a comment."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, eq, value = line.partition("=")
            if not eq:
                raise DataError("expected `key = value`", path=path, line=lineno)
            out[key.strip()] = value.strip()
    return out


def _resolve(args: argparse.Namespace, option_names: list[str]) -> dict:
    """Merge precedence: explicit flag > config-file value > default."""
    resolved = {}
    config_values: dict[str, str] = {}
    if getattr(args, "config", None):
        config_path = args.config
        if not Path(config_path).exists():
            raise UsageError(f"config file not found: {config_path}")
        config_values = parse_kv_file(config_path)
        unknown = set(config_values) - set(_OPTION_TYPES)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for name in option_names:
        conv, default = _OPTION_TYPES[name]
        dest = name.replace("-", "_")
        value = getattr(args, dest, None)
        if value is None and name in config_values:
            try:
                value = conv(config_values[name])
            except ValueError as exc:
                raise UsageError(f"bad config value for {name}: {exc}") from None
        if value is None:
            value = default
        resolved[dest] = value
    return resolved


def _require(cfg: dict, *names: str) -> None:
    missing = [n for n in names if cfg.get(n.replace("-", "_")) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n for n in missing))


def _require_file(cfg: dict, key: str) -> Path:
    path = Path(cfg[key])
    if not path.exists():
        raise UsageError(f"{key.replace('_', '-')} file not found: {path}")
    return path


def _echo_config(out_dir: Path, cfg: dict) -> None:
    lines = []
    for dest in sorted(cfg):
        value = cfg[dest]
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, date):
            value = value.isoformat()
        lines.append(f"{dest.replace('_', '-')} = {value}")
    (out_dir / "config.resolved.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _add_options(parser: argparse.ArgumentParser, names: list[str]) -> None:
    for name in names:
        conv, _ = _OPTION_TYPES[name]
        dest = name.replace("-", "_")
        if conv is _parse_bool:
            group = parser.add_mutually_exclusive_group()
            group.add_argument(f"--{name}", dest=dest, action="store_const", const=True,
                               default=None)
            group.add_argument(f"--no-{name}", dest=dest, action="store_const", const=False,
                               default=None)
            if name == "strict":
                group.add_argument("--lenient", dest=dest, action="store_const", const=False,
                                   default=None)
        else:
            parser.add_argument(f"--{name}", dest=dest, type=conv, default=None)


_INGEST_OPTIONS = ["config", "news", "prices", "stopwords", "filter-keywords",
                   "train-end", "val-end", "min-count", "news-lag-days", "strict",
                   "use-adj-close"]
_MODEL_OPTIONS = ["embed-dim", "lstm-units", "attn-dim", "clf-hidden", "variant"]
_TRAIN_OPTIONS = ["embeddings", "checkpoint", "out", "seed", "batch-size", "max-epochs",
                  "patience", "keep-prob", "fine-tune-embeddings"]
_EVAL_OPTIONS = ["checkpoint", "out", "split", "instances"]


def _load_stopwords(cfg: dict) -> frozenset:
    if cfg.get("stopwords"):
        return textprep.load_stopwords(_require_file(cfg, "stopwords"))
    return textprep.default_stopwords()


def _ingest(cfg: dict) -> tuple[corpus.Dataset, int]:
    news_path = _require_file(cfg, "news")
    prices_path = _require_file(cfg, "prices")
    news, skipped = corpus.parse_news(news_path, strict=cfg["strict"])
    if skipped:
        print(f"warning: skipped {skipped} malformed headline line(s)", file=sys.stderr)
    if cfg.get("filter_keywords"):
        keywords = textprep.load_stopwords(_require_file(cfg, "filter_keywords"))
        before = len(news)
        news = corpus.filter_keywords(news, keywords)
        print(f"keyword filter kept {len(news)} of {before} headlines", file=sys.stderr)
    bars = corpus.parse_prices(prices_path)
    dataset, dropped = corpus.assemble_dataset(
        news, bars, cfg["train_end"], cfg["val_end"],
        stopwords=_load_stopwords(cfg),
        use_adj_close=cfg["use_adj_close"],
        news_lag_days=cfg["news_lag_days"],
    )
    if dropped:
        print(f"warning: dropped {dropped} headline(s) dated after the last trading day",
              file=sys.stderr)
    return dataset, dropped


def _train_config(cfg: dict) -> train.TrainConfig:
    return train.TrainConfig(
        batch_size=cfg["batch_size"], max_epochs=cfg["max_epochs"],
        patience=cfg["patience"], keep_prob=cfg["keep_prob"], seed=cfg["seed"],
        variant=cfg["variant"], fine_tune_embeddings=cfg["fine_tune_embeddings"],
        lstm_units=cfg["lstm_units"], attn_dim=cfg["attn_dim"],
        clf_hidden=cfg["clf_hidden"],
    )


def cmd_train(args) -> int:
    cfg = _resolve(args, _INGEST_OPTIONS + _MODEL_OPTIONS + _TRAIN_OPTIONS)
    _require(cfg, "news", "prices", "train-end", "val-end", "out")
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(out_dir, cfg)

    dataset, _ = _ingest(cfg)
    vocab = corpus.build_training_vocab(dataset, min_count=cfg["min_count"])
    dataset = corpus.encode_dataset(dataset, vocab)
    print(f"bags: {len(dataset.train)} train / {len(dataset.val)} val / "
          f"{len(dataset.test)} test; |V| = {len(vocab)}", file=sys.stderr)

    rng = make_rng(cfg["seed"])
    if cfg.get("embeddings"):
        embeddings = textprep.load_pretrained(
            _require_file(cfg, "embeddings"), vocab, cfg["embed_dim"], rng,
            trainable=cfg["fine_tune_embeddings"])
    else:
        embeddings = textprep.init_embeddings(vocab, cfg["embed_dim"], rng,
                                              trainable=cfg["fine_tune_embeddings"])

    config = _train_config(cfg)
    best, history = train.fit(
        dataset, embeddings, config,
        progress=lambda h: print(
            f"epoch {h.epoch}: train_loss {h.train_loss:.4f} "
            f"val_accuracy {h.val_accuracy:.4f}", file=sys.stderr))

    ckpt_path = Path(cfg["checkpoint"]) if cfg.get("checkpoint") else out_dir / "model.ckpt"
    model.save_checkpoint(ckpt_path, best, vocab)
    # metrics come from the reloaded checkpoint so a later `eval` on the
    # same file reproduces them exactly despite float32 storage
    saved, _ = model.load_checkpoint(ckpt_path)
    metric_rows = []
    for split_name in ("val", "test"):
        bags = getattr(dataset, split_name)
        if not bags:
            continue
        metrics = train.evaluate(saved, bags, variant=cfg["variant"])
        metric_rows.append((split_name, metrics))
        print(f"{split_name} accuracy {metrics.accuracy:.6f} "
              f"(loss {metrics.loss:.6f}, n={metrics.total})")
    train.write_history_csv(out_dir / "history.csv", history)
    train.write_metrics_csv(out_dir / "metrics.csv", metric_rows)
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args, _INGEST_OPTIONS + _MODEL_OPTIONS + _EVAL_OPTIONS + ["seed"])
    _require(cfg, "checkpoint", "news", "prices", "train-end", "val-end")
    if cfg["split"] not in corpus.SPLITS:
        raise UsageError(f"--split must be one of {corpus.SPLITS}, got {cfg['split']!r}")
    params, vocab = model.load_checkpoint(_require_file(cfg, "checkpoint"))

    # explicitly supplied dimensions must agree with the checkpoint
    explicit = {
        "embed-dim": (getattr(args, "embed_dim"), params.input_dim),
        "lstm-units": (getattr(args, "lstm_units"), params.units),
        "attn-dim": (getattr(args, "attn_dim"), params.attn_dim),
        "clf-hidden": (getattr(args, "clf_hidden"), params.clf_hidden),
    }
    for name, (wanted, actual) in explicit.items():
        if wanted is not None and wanted != actual:
            raise UsageError(f"--{name} {wanted} does not match checkpoint value {actual}")

    dataset, _ = _ingest(cfg)
    dataset = corpus.encode_dataset(dataset, vocab)
    bags = dataset.split_bags(cfg["split"])
    if not bags:
        raise UsageError(f"split {cfg['split']!r} contains no bags")
    metrics = train.evaluate(params, bags, variant=cfg["variant"])
    print(f"{cfg['split']} accuracy {metrics.accuracy:.6f} (loss {metrics.loss:.6f}, "
          f"tp={metrics.tp} tn={metrics.tn} fp={metrics.fp} fn={metrics.fn})")
    if cfg.get("out"):
        out_dir = Path(cfg["out"])
        out_dir.mkdir(parents=True, exist_ok=True)
        _echo_config(out_dir, cfg)
        train.write_metrics_csv(out_dir / "metrics.csv", [(cfg["split"], metrics)])
        if cfg["instances"]:
            rows = train.instance_report(params, bags, variant=cfg["variant"])
            train.write_instance_csv(out_dir / "instances.csv", rows)
    elif cfg["instances"]:
        raise UsageError("--instances needs --out to write the report into")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _resolve(args, ["config", "seed", "seeds"])
    worst: dict[str, float] = {}
    for offset in range(cfg["seeds"]):
        for family, err in model.gradcheck(cfg["seed"] + offset).items():
            worst[family] = max(worst.get(family, 0.0), err)
    failures = []
    for family, err in worst.items():
        status = "ok" if err <= GRADCHECK_TOLERANCE else "FAIL"
        print(f"{family} {err:.3e} {status}")
        if err > GRADCHECK_TOLERANCE:
            failures.append(family)
    if failures:
        print(f"gradcheck failed for: {', '.join(failures)}", file=sys.stderr)
        return 3
    return 0


def cmd_stats(args) -> int:
    cfg = _resolve(args, _INGEST_OPTIONS + ["out"])
    _require(cfg, "news", "prices", "train-end", "val-end", "out")
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(out_dir, cfg)
    dataset, _ = _ingest(cfg)
    table = corpus.stats(dataset)
    corpus.write_stats_csv(out_dir / "stats.csv", table)
    for name in corpus.SPLITS:
        st = table[name]
        if st is None:
            print(f"{name}: absent")
            continue
        corpus.write_histogram_csv(out_dir / f"histogram_{name}.csv", st)
        print(f"{name}: count {st.count} mean {st.mean:.6f} std {st.std:.6f} "
              f"min {st.min} max {st.max}")
    return 0


_SYNTH_KEYS = {
    "n-train": int, "n-val": int, "n-test": int, "min-instances": int,
    "max-instances": int, "pool-size": int, "majority-frac": float,
    "pos-prior": float, "min-title-len": int, "max-title-len": int,
    "seed": int, "start": _parse_date,
}


def load_synth_spec(path) -> corpus.SynthSpec:
    values = parse_kv_file(path)
    unknown = set(values) - set(_SYNTH_KEYS)
    if unknown:
        raise UsageError(f"unknown synth spec keys: {', '.join(sorted(unknown))}")
    kwargs = {}
    for key, raw in values.items():
        try:
            kwargs[key.replace("-", "_")] = _SYNTH_KEYS[key](raw)
        except ValueError as exc:
            raise UsageError(f"bad synth spec value for {key}: {exc}") from None
    return corpus.SynthSpec(**kwargs)


def cmd_synth(args) -> int:
    cfg = _resolve(args, ["config", "spec", "out", "seed"])
    _require(cfg, "spec", "out")
    spec = load_synth_spec(_require_file(cfg, "spec"))
    if getattr(args, "seed", None) is not None:
        spec = corpus.SynthSpec(**{
            **{f.name: getattr(spec, f.name) for f in dataclass_fields(spec)},
            "seed": args.seed})
    try:
        data = corpus.synthesize(spec)
    except ValueError as exc:
        raise UsageError(f"invalid synth spec: {exc}") from None
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus.write_news_tsv(out_dir / "news.tsv", data.news)
    corpus.write_prices_csv(out_dir / "prices.csv", data.bars)
    corpus.write_polarity_csv(out_dir / "polarity.csv", data.polarities)
    print(f"wrote {len(data.news)} headlines over {spec.n_bags} trading days; "
          f"train-end {data.train_end} val-end {data.val_end}", file=sys.stderr)
    print(f"train-end = {data.train_end}")
    print(f"val-end = {data.val_end}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="newsmil",
                     description="Multiple-instance learning over financial news headlines")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="ingest data, fit the model, write a checkpoint")
    _add_options(p_train, _INGEST_OPTIONS + _MODEL_OPTIONS + _TRAIN_OPTIONS)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    _add_options(p_eval, _INGEST_OPTIONS + _MODEL_OPTIONS + _EVAL_OPTIONS + ["seed"])
    p_eval.set_defaults(func=cmd_eval)

    p_grad = sub.add_parser("gradcheck", help="finite-difference check of every gradient family")
    _add_options(p_grad, ["config", "seed", "seeds"])
    p_grad.set_defaults(func=cmd_gradcheck)

    p_stats = sub.add_parser("stats", help="per-split bag statistics and histograms")
    _add_options(p_stats, _INGEST_OPTIONS + ["out"])
    p_stats.set_defaults(func=cmd_stats)

    p_synth = sub.add_parser("synth", help="generate a planted-polarity synthetic dataset")
    _add_options(p_synth, ["config", "spec", "out", "seed"])
    p_synth.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
