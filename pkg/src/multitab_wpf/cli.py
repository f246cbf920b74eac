"""Command-line entry point: ``multitab-wpf <subcommand> ...``.

Subcommands: synth, ingest, augment, train, predict, evaluate, ablate.
Every JSON artefact is written with sorted keys and carries a config echo,
so repeating a command with the same arguments and seed reproduces it
byte for byte.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or missing
input, unknown labels, missing checkpoint), 3 runtime failure.

Relative ``--run`` directories are placed under ``$WPF_RUN_ROOT``
(default ``runs``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import torch

from . import __version__
from .augment import DEFAULT_EXCHANGE_RATIO, MERGE_PAIRINGS, AugmentationConfig, augment_dataset
from .encoder import DEFAULT_EMBED_DIM, EncoderConfig, load_checkpoint
from .evaluation import AP_KS, PROTOCOLS, RECALL_KS, evaluate
from .identify import (
    DEFAULT_NEIGHBORS,
    DEFAULT_TAU,
    DEFAULT_THETA,
    IdentificationIndex,
    combine_and_decide,
)
from .losses import DEFAULT_BETA, DEFAULT_MARGIN, LossConfig
from .pipeline import ABLATIONS, run_ablation
from .synth import SynthConfig, generate_sessions
from .trainer import (
    OPTIMIZERS,
    AugmentPlan,
    IdentifyConfig,
    TrainConfig,
    config_echo,
    embed_dataset,
    train,
    write_run,
)
from .traces import (
    DEFAULT_INPUT_DIM,
    DEFAULT_MIN_PACKETS,
    DatasetError,
    filter_short,
    load_dataset,
    save_dataset,
    split_dataset,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
RUN_ROOT_ENV = "WPF_RUN_ROOT"

log = logging.getLogger("multitab_wpf")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


class _Formatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def _int_list(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("values must be positive integers")
    return vals


def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1]")
    return v


def run_root() -> Path:
    return Path(os.environ.get(RUN_ROOT_ENV, "runs"))


def _run_dir(arg: str) -> Path:
    p = Path(arg)
    return p if p.is_absolute() else run_root() / p


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text(text)


def _load(path, **kw):
    try:
        return load_dataset(path, **kw)
    except (FileNotFoundError, DatasetError) as e:
        raise DataError(str(e)) from None


# -- argument groups --------------------------------------------------------


def _add_synth_args(p, base: SynthConfig):
    g = p.add_argument_group("synthetic data")
    g.add_argument("--classes", type=int, default=base.n_classes, help="number of webpage classes")
    g.add_argument("--per-class", type=int, default=base.traces_per_class, help="single-tab traces per class")
    g.add_argument("--max-tabs", type=int, default=base.max_tabs, help="largest tab count per session")
    g.add_argument("--noise", type=float, default=base.noise_rate, help="per-burst noise probability")
    g.add_argument("--bursts", type=int, default=base.signature_length, help="bursts per page template")
    g.add_argument("--preamble", type=int, default=base.preamble_max,
                   help="longest random setup preamble before each page, in packets")
    g.add_argument("--sessions", type=int, default=None, help="session count (classes * per-class when unset)")


def _add_encoder_args(p):
    g = p.add_argument_group("encoder")
    g.add_argument("--input-dim", type=int, default=DEFAULT_INPUT_DIM, help="packets per model input (d_i)")
    g.add_argument("--embed-dim", type=int, default=DEFAULT_EMBED_DIM, help="embedding dimension (d_o)")
    g.add_argument("--channels", type=_int_list, default=",".join(map(str, EncoderConfig().block_channel_sizes)),
                   help="channels of the four convolutional blocks")
    g.add_argument("--dropout", type=float, default=EncoderConfig().dropout, help="dropout after each block")


def _add_loss_args(p):
    g = p.add_argument_group("loss")
    g.add_argument("--margin", type=float, default=DEFAULT_MARGIN, help="cosine margin for negative pairs")
    g.add_argument("--beta", type=float, default=DEFAULT_BETA, help="weight of the sample-pair term")


def _add_train_args(p):
    g = p.add_argument_group("training")
    d = TrainConfig()
    g.add_argument("--epochs", type=int, default=d.epochs, help="training epochs")
    g.add_argument("--batch-size", type=int, default=d.batch_size, help="traces per batch")
    g.add_argument("--lr", type=float, default=d.learning_rate, help="learning rate")
    g.add_argument("--optimizer", choices=sorted(OPTIMIZERS), default=d.optimizer, help="optimizer")
    g.add_argument("--seed", type=int, default=d.seed, help="seed for weights, shuffling and augmentation")
    g.add_argument("--patience", type=int, default=d.early_stop_patience, help="early-stop patience, 0 disables")


def _add_augment_args(p, counts_default=0):
    g = p.add_argument_group("augmentation")
    g.add_argument("--exchange-ratio", type=_fraction, default=DEFAULT_EXCHANGE_RATIO,
                   help="fraction of bursts exchanged per trace (m_e)")
    g.add_argument("--n-merged", type=int, default=counts_default, help="merged traces to add")
    g.add_argument("--n-exchanged", type=int, default=counts_default, help="burst-exchanged traces to add")
    g.add_argument("--pairing", choices=MERGE_PAIRINGS, default="random", help="merge pairing strategy")
    g.add_argument("--regenerate", action="store_true", help="regenerate augmented traces every epoch")


def _add_identify_args(p, defaults=True):
    g = p.add_argument_group("identification")
    g.add_argument("--b", type=int, default=DEFAULT_NEIGHBORS if defaults else None,
                   help="neighbours retrieved on each side")
    g.add_argument("--theta", type=float, default=DEFAULT_THETA if defaults else None,
                   help="weight of sample scores")
    g.add_argument("--tau", type=_fraction, default=DEFAULT_TAU if defaults else None,
                   help="relative score threshold for predicted labels")
    if defaults:
        g.add_argument("--exclude-augmented", action="store_true",
                       help="index only original training traces as k-NN references")


def _add_metric_args(p):
    g = p.add_argument_group("metrics")
    g.add_argument("--recall-k", type=_int_list, default=",".join(map(str, RECALL_KS)), help="comma-separated k for Recall@k")
    g.add_argument("--ap-k", type=_int_list, default=",".join(map(str, AP_KS)), help="comma-separated k for AP@k")
    g.add_argument("--protocol", choices=PROTOCOLS, default="closed", help="closed or open world")


# -- configs from args ------------------------------------------------------


def _configs(a):
    try:
        enc = EncoderConfig(input_dim=a.input_dim, embed_dim=a.embed_dim,
                            block_channel_sizes=a.channels, dropout=a.dropout)
        loss = LossConfig(margin=a.margin, beta=a.beta)
        tc = TrainConfig(epochs=a.epochs, batch_size=a.batch_size, learning_rate=a.lr,
                         optimizer=a.optimizer, seed=a.seed, early_stop_patience=a.patience,
                         regenerate_augmentation=a.regenerate)
        ident = IdentifyConfig(b=a.b, theta=a.theta, tau=a.tau, include_augmented=not a.exclude_augmented)
        aug_cfg = AugmentationConfig(exchange_ratio=a.exchange_ratio, rng_seed=a.seed, merge_pairing=a.pairing)
    except ValueError as e:
        raise UsageError(str(e)) from None
    if a.n_merged < 0 or a.n_exchanged < 0:
        raise UsageError("augmentation counts must be non-negative")
    plan = AugmentPlan(aug_cfg, a.n_merged, a.n_exchanged) if a.n_merged or a.n_exchanged else None
    return enc, loss, tc, ident, plan


def _echo(a, **configs) -> dict:
    out = config_echo(**configs)
    out["command"] = a.command
    return out


# -- subcommands ------------------------------------------------------------


def cmd_synth(a) -> int:
    try:
        cfg = SynthConfig(n_classes=a.classes, traces_per_class=a.per_class, max_tabs=a.max_tabs,
                          noise_rate=a.noise, preamble_max=a.preamble, signature_length=a.bursts, seed=a.seed)
    except ValueError as e:
        raise UsageError(str(e)) from None
    ds = generate_sessions(cfg, a.sessions)
    out = Path(a.out)
    echo = {"command": "synth", "synth": json.loads(json.dumps(asdict(cfg))), "sessions": len(ds)}
    if a.split:
        parts = split_dataset(ds, seed=a.seed)
        for part in parts:
            save_dataset(part, out / part.split_tag)
        echo["splits"] = {p.split_tag: len(p) for p in parts}
    else:
        save_dataset(ds, out)
    (out / "config-echo.json").write_text(_dump(echo))
    sys.stdout.write(_dump(echo))
    return EXIT_OK


def cmd_ingest(a) -> int:
    catalog = None
    if a.catalog:
        try:
            catalog = [ln.strip() for ln in Path(a.catalog).read_text().splitlines() if ln.strip()]
        except OSError as e:
            raise DataError(f"cannot read catalog: {e}") from None
    ds = _load(a.input, format=a.format, catalog=catalog, unmonitored=a.unmonitored,
               map_unknown_to_unmonitored=a.unmonitored is not None)
    kept = filter_short(ds, a.min_packets)
    parts = split_dataset(kept, a.split, seed=a.seed, by_combination=a.by_combination)
    out = Path(a.out)
    for part in parts:
        save_dataset(part, out / part.split_tag)
    echo = {
        "command": "ingest", "input": str(a.input), "format": a.format, "min_packets": a.min_packets,
        "split": list(a.split), "seed": a.seed, "by_combination": a.by_combination,
        "loaded": len(ds), "rejected": [[ln, why] for ln, why in ds.rejected],
        "too_short": len(ds) - len(kept), "splits": {p.split_tag: len(p) for p in parts},
        "class_catalog": list(ds.class_catalog),
    }
    (out / "config-echo.json").write_text(_dump(echo))
    sys.stdout.write(_dump({k: v for k, v in echo.items() if k != "class_catalog"}))
    return EXIT_OK


def cmd_augment(a) -> int:
    ds = _load(a.input)
    try:
        cfg = AugmentationConfig(exchange_ratio=a.exchange_ratio, rng_seed=a.seed, merge_pairing=a.pairing)
        out_ds = augment_dataset(ds, cfg, a.n_merged, a.n_exchanged, a.input_dim)
    except ValueError as e:
        raise UsageError(str(e)) from None
    out = Path(a.out)
    save_dataset(out_ds, out)
    echo = {"command": "augment", "augmentation": asdict(cfg), "n_merged": a.n_merged,
            "n_exchanged": a.n_exchanged, "input_dim": a.input_dim, "n_original": len(ds),
            "n_total": len(out_ds)}
    (out / "config-echo.json").write_text(_dump(echo))
    sys.stdout.write(_dump(echo))
    return EXIT_OK


def cmd_train(a) -> int:
    enc, loss, tc, ident, plan = _configs(a)
    tr = _load(a.train)
    va = _load(a.val)
    if tr.class_catalog != va.class_catalog:
        raise DataError("train and validation datasets have different class catalogs")
    torch.manual_seed(a.seed)
    result = train(tr, va, enc, loss, tc, ident, plan)
    echo = _echo(a, encoder=enc, loss=loss, train=tc, identify=ident, augmentation=plan)
    echo["train_data"], echo["val_data"] = str(a.train), str(a.val)
    run = write_run(_run_dir(a.run), result, echo, ident)
    summary = {"run": str(run), "best": result.log[-1], "config": echo}
    sys.stdout.write(_dump(summary))
    return EXIT_OK


def _open_run(run_arg: str):
    run = _run_dir(run_arg)
    ckpt = run / "best.ckpt"
    if not ckpt.exists():
        raise DataError(f"no trained model: checkpoint {ckpt} not found (run `train` first)")
    idx_path = run / "index.npz"
    if not idx_path.exists():
        raise DataError(f"index snapshot {idx_path} not found")
    try:
        model, _, _ = load_checkpoint(ckpt)
        index = IdentificationIndex.load(idx_path)
    except (ValueError, RuntimeError, OSError) as e:
        raise DataError(f"cannot read run {run}: {e}") from None
    return run, model, index


def _override(index: IdentificationIndex, a) -> IdentificationIndex:
    changes = {k: getattr(a, k) for k in ("b", "theta", "tau") if getattr(a, k) is not None}
    try:
        return index.replace(**changes) if changes else index
    except ValueError as e:
        raise UsageError(str(e)) from None


def cmd_predict(a) -> int:
    run, model, index = _open_run(a.run)
    index = _override(index, a)
    ds = _load(a.input, catalog=index.class_catalog, unmonitored=index.unmonitored)
    emb, _ = embed_dataset(model, ds)
    lines = [json.dumps({"config": {"command": "predict", "run": str(run), "index": index.config_echo()}},
                        sort_keys=True)]
    names = index.class_catalog
    for i, e in enumerate(emb):
        scores, predicted, ranking = combine_and_decide(e, index)
        lines.append(json.dumps({
            "trace": i,
            "predicted": [names[j] for j in predicted],
            "ranking": [names[j] for j in ranking[:a.top]],
            "scores": [round(float(scores[j]), 10) for j in ranking[:a.top]],
        }, sort_keys=True))
    _emit("\n".join(lines) + "\n", a.out)
    return EXIT_OK


def cmd_evaluate(a) -> int:
    run, model, index = _open_run(a.run)
    index = _override(index, a)
    test = _load(a.test, catalog=index.class_catalog, unmonitored=index.unmonitored)
    try:
        report = evaluate(index, test, a.recall_k, a.ap_k, a.protocol,
                          embed=lambda ds: embed_dataset(model, ds)[0])
    except ValueError as e:
        raise DataError(str(e)) from None
    report.config.update({"command": "evaluate", "run": str(run), "test_data": str(a.test)})
    _emit(report.to_text() if a.format == "text" else report.to_json(), a.out)
    return EXIT_OK


def cmd_ablate(a) -> int:
    enc, loss, tc, ident, plan = _configs(a)
    if a.data:
        tr = _load(Path(a.data) / "train")
        va = _load(Path(a.data) / "validation")
        te = _load(Path(a.data) / "test")
    else:
        try:
            cfg = SynthConfig(n_classes=a.classes, traces_per_class=a.per_class, max_tabs=a.max_tabs,
                              noise_rate=a.noise, preamble_max=a.preamble, signature_length=a.bursts, seed=a.seed)
        except ValueError as e:
            raise UsageError(str(e)) from None
        tr, va, te = split_dataset(generate_sessions(cfg, a.sessions), seed=a.seed)
    settings = a.settings or tuple(ABLATIONS)
    unknown = [s for s in settings if s not in ABLATIONS]
    if unknown:
        raise UsageError(f"unknown ablation setting(s) {unknown}; choose from {list(ABLATIONS)}")
    reports = run_ablation(tr, va, te, enc, loss, tc, ident, plan, settings, a.recall_k, a.ap_k, a.protocol)
    echo = _echo(a, encoder=enc, loss=loss, train=tc, identify=ident, augmentation=plan)
    echo["data"] = a.data or {"synth": {"classes": a.classes, "per_class": a.per_class,
                                        "max_tabs": a.max_tabs, "noise": a.noise, "bursts": a.bursts, "preamble": a.preamble,
                                        "sessions": a.sessions, "seed": a.seed}}
    table = {"config": echo, "results": {}}
    for name, rep in reports.items():
        d = rep.to_dict()
        table["results"][name] = {"recall": d["recall"], "ap": d["ap"], "n_samples": d["n_samples"]}
    _emit(_dump(table), a.out)
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="multitab-wpf", description=__doc__, formatter_class=_Formatter)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, help_):
        return sub.add_parser(name, help=help_, description=help_, formatter_class=_Formatter)

    s = add("synth", "generate a synthetic multi-tab dataset")
    _add_synth_args(s, SynthConfig())
    s.add_argument("--seed", type=int, default=0, help="generator and split seed")
    s.add_argument("--split", action="store_true", help="write train/validation/test (8:1:1) subdirectories")
    s.add_argument("--out", required=True, help="dataset directory to write")
    s.set_defaults(func=cmd_synth)

    s = add("ingest", "validate, filter and split a raw trace collection")
    s.add_argument("--input", required=True, help="records file or dataset directory")
    s.add_argument("--format", choices=("ndjson", "csv-dir"), default="ndjson", help="raw input layout")
    s.add_argument("--catalog", help="file with one monitored class id per line")
    s.add_argument("--unmonitored", help="sentinel class for labels outside the catalog (open world)")
    s.add_argument("--min-packets", type=int, default=DEFAULT_MIN_PACKETS, help="drop traces shorter than this")
    s.add_argument("--split", type=_int_list, default="8,1,1", help="train,validation,test ratios")
    s.add_argument("--by-combination", action="store_true", help="keep each label combination in one split")
    s.add_argument("--seed", type=int, default=0, help="split seed")
    s.add_argument("--out", required=True, help="directory for the train/validation/test datasets")
    s.set_defaults(func=cmd_ingest)

    s = add("augment", "add merged and burst-exchanged traces to a dataset")
    s.add_argument("--input", required=True, help="dataset to augment")
    s.add_argument("--out", required=True, help="dataset directory to write")
    s.add_argument("--seed", type=int, default=0, help="augmentation seed")
    s.add_argument("--input-dim", type=int, default=DEFAULT_INPUT_DIM, help="truncation length of merged traces")
    s.add_argument("--exchange-ratio", type=_fraction, default=DEFAULT_EXCHANGE_RATIO,
                   help="fraction of bursts exchanged per trace (m_e)")
    s.add_argument("--n-merged", type=int, default=0, help="merged traces to add")
    s.add_argument("--n-exchanged", type=int, default=0, help="burst-exchanged traces to add")
    s.add_argument("--pairing", choices=MERGE_PAIRINGS, default="random", help="how merge pairs are drawn")
    s.set_defaults(func=cmd_augment)

    s = add("train", "train the encoder and proxies; writes a run directory")
    s.add_argument("--train", required=True, help="training dataset")
    s.add_argument("--val", required=True, help="validation dataset")
    s.add_argument("--run", default="run", help=f"run directory (relative paths go under ${RUN_ROOT_ENV})")
    _add_encoder_args(s)
    _add_loss_args(s)
    _add_train_args(s)
    _add_augment_args(s)
    _add_identify_args(s)
    s.set_defaults(func=cmd_train)

    s = add("predict", "predict label sets for every trace of a dataset")
    s.add_argument("--run", required=True, help="trained run directory")
    s.add_argument("--input", required=True, help="dataset to predict")
    s.add_argument("--top", type=int, default=10, help="ranked classes to list per trace")
    s.add_argument("--out", help="output file (default stdout)")
    _add_identify_args(s, defaults=False)
    s.set_defaults(func=cmd_predict)

    s = add("evaluate", "compute Recall@k and AP@k on a test dataset")
    s.add_argument("--run", required=True, help="trained run directory")
    s.add_argument("--test", required=True, help="test dataset")
    s.add_argument("--format", choices=("json", "text"), default="json", help="report format")
    s.add_argument("--out", help="output file (default stdout)")
    _add_metric_args(s)
    _add_identify_args(s, defaults=False)
    s.set_defaults(func=cmd_evaluate)

    s = add("ablate", "compare raw features, fine-tuning only and the three loss modes")
    s.add_argument("--data", help="directory with train/validation/test datasets (default: synthesize)")
    _add_synth_args(s, SynthConfig(signature_length=12, noise_rate=0.1, max_tabs=3, preamble_max=60))
    s.add_argument("--settings", type=lambda t: tuple(x for x in t.split(",") if x),
                   help=f"comma-separated subset of {','.join(ABLATIONS)}")
    s.add_argument("--out", help="output file (default stdout)")
    _add_encoder_args(s)
    _add_loss_args(s)
    _add_train_args(s)
    _add_augment_args(s)
    _add_identify_args(s)
    _add_metric_args(s)
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return a.func(a)
    except UsageError as e:
        sys.stderr.write(f"multitab-wpf {a.command}: usage error: {e}\n")
        return EXIT_USAGE
    except DataError as e:
        sys.stderr.write(f"multitab-wpf {a.command}: data error: {e}\n")
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001 - reported as a runtime failure
        log.debug("runtime failure", exc_info=True)
        sys.stderr.write(f"multitab-wpf {a.command}: runtime failure: {type(e).__name__}: {e}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
