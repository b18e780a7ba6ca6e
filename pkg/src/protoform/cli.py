"""Experiment harness.

Subcommands: train, evaluate, baseline, probe, gradcheck, synth.  Every
command is a pure function of its inputs and seeds: reports carry no
timestamps, iteration orders are fixed, and reruns produce byte-identical
outputs.  Exit codes: 0 success, 1 assertion/validation failure, 2 I/O or
config error.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import asdict, replace

import numpy as np

from . import baselines as B
from . import corpus as C
from . import engine as E
from . import metrics as M
from . import phylo as P
from . import synth as S
from . import transformer as T

WORKERS_ENV = "PROTOFORM_WORKERS"


class CliInputError(Exception):
    """Bad input file or configuration; maps to exit code 2."""


class ValidationFailure(Exception):
    """A check failed on otherwise-readable inputs; maps to exit code 1."""


# ---------------------------------------------------------------------------
# configuration plumbing


def _read_config(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path:
        if not os.path.exists(path):
            raise CliInputError(f"config file not found: {path}")
        cp.read(path, encoding="utf-8")
    return cp


def parse_options_from(args, cp) -> C.ParseOptions:
    sec = cp["corpus"] if cp.has_section("corpus") else {}
    proto = args.proto_column or sec.get("proto_column") or None
    mode = sec.get("mode", "phonetic")
    if getattr(args, "orthographic", False):
        mode = "orthographic"
    strip = args.strip_length or sec.get("strip_length", "false").lower() == "true"
    stress = sec.get("stress", "separate")
    return C.ParseOptions(
        proto_column=proto,
        tokenizer=C.TokenizerOptions(mode=mode, strip_length=strip, stress=stress),
    )


def transformer_config_from(args, cp) -> T.TransformerConfig:
    preset = getattr(args, "preset", None)
    sec = dict(cp["transformer"]) if cp.has_section("transformer") else {}
    preset = preset or sec.pop("preset", None)
    if preset is not None and preset not in T.PRESETS:
        raise CliInputError(f"unknown preset {preset!r}; choose from {sorted(T.PRESETS)}")
    cfg = T.PRESETS[preset] if preset else T.TransformerConfig()
    if sec:
        fields = {}
        for key, raw in sec.items():
            if key not in T.TransformerConfig.__dataclass_fields__:
                raise CliInputError(f"unknown [transformer] option {key!r}")
            kind = T.TransformerConfig.__dataclass_fields__[key].type
            fields[key] = float(raw) if kind == "float" else int(raw)
        try:
            cfg = replace(cfg, **fields)
        except ValueError as exc:
            raise CliInputError(str(exc))
    return cfg


def parse_seeds(spec: str) -> list:
    """'0-9', '3', or '1,4,7'; also 'N@B' = N consecutive seeds from base B."""
    spec = spec.strip()
    out: list = []
    if "@" in spec:
        n, base = spec.split("@", 1)
        out = list(range(int(base), int(base) + int(n)))
    elif "-" in spec and "," not in spec:
        lo, hi = spec.split("-", 1)
        out = list(range(int(lo), int(hi) + 1))
    else:
        out = [int(s) for s in spec.split(",") if s.strip()]
    if not out or len(set(out)) != len(out):
        raise CliInputError(f"seed list {spec!r} must be nonempty and distinct")
    return out


def load_dataset(args, cp) -> tuple:
    if not args.dataset:
        raise CliInputError("--dataset is required")
    if not os.path.exists(args.dataset):
        raise CliInputError(f"dataset file not found: {args.dataset}")
    options = parse_options_from(args, cp)
    with open(args.dataset, encoding="utf-8") as fh:
        text = fh.read()
    try:
        return C.parse_dataset(text, options), options
    except C.CorpusError as exc:
        raise CliInputError(f"cannot parse {args.dataset}: {exc}")


def _echo_config(out_dir: str, args, options: C.ParseOptions, cfg, seeds) -> None:
    cp = configparser.ConfigParser()
    cp["corpus"] = {
        "dataset": args.dataset or "",
        "proto_column": options.proto_column or "",
        "mode": options.tokenizer.mode,
        "strip_length": str(options.tokenizer.strip_length).lower(),
        "stress": options.tokenizer.stress,
        "split_seed": str(args.split_seed),
    }
    if cfg is not None:
        cp["transformer"] = {k: repr(v) for k, v in sorted(asdict(cfg).items()) if k != "seed"}
    cp["experiment"] = {"seeds": ",".join(str(s) for s in seeds)}
    with open(os.path.join(out_dir, "config.ini"), "w", encoding="utf-8") as fh:
        cp.write(fh)


# ---------------------------------------------------------------------------
# train


def _train_one(payload: dict) -> dict:
    """Runs in a worker process; reads everything from the payload."""
    if payload.get("dtype"):
        E.set_default_dtype(payload["dtype"])
    with open(payload["dataset"], encoding="utf-8") as fh:
        ds = C.parse_dataset(fh.read(), payload["options"])
    train_ds, val_ds, _ = C.split_dataset(ds, payload["split_seed"])
    vocab = C.build_vocab(train_ds)
    cfg = payload["cfg"].with_seed(payload["seed"])
    model = T.Model(cfg, vocab, ds.languages)
    trained = T.train(model, train_ds, val_ds, cfg)
    prefix = payload["prefix"]
    trained.save(prefix)
    with open(prefix + "_history.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,lr,train_loss,val_ped\n")
        for row in trained.history:
            fh.write(f"{row['epoch']},{row['lr']:.10g},{row['train_loss']:.6f},{row['val_ped']:.6f}\n")
    return {"seed": payload["seed"], "best_epoch": trained.best_epoch,
            "best_val_ped": trained.best_val_ped}


def cmd_train(args) -> int:
    cp = _read_config(args.config)
    ds, options = load_dataset(args, cp)
    cfg = transformer_config_from(args, cp)
    seeds = parse_seeds(args.seeds)
    os.makedirs(args.out, exist_ok=True)
    _echo_config(args.out, args, options, cfg, seeds)
    payloads = [{
        "dataset": args.dataset,
        "options": options,
        "split_seed": args.split_seed,
        "cfg": cfg,
        "seed": seed,
        "prefix": os.path.join(args.out, f"seed{seed}"),
        "dtype": os.environ.get("PROTOFORM_DTYPE", ""),
    } for seed in seeds]
    workers = int(os.environ.get(WORKERS_ENV, "1"))
    if workers > 1 and len(payloads) > 1:
        import multiprocessing as mp
        with mp.get_context("spawn").Pool(min(workers, len(payloads))) as pool:
            results = pool.map(_train_one, payloads)
    else:
        results = [_train_one(p) for p in payloads]
    for r in sorted(results, key=lambda r: r["seed"]):
        print(f"seed {r['seed']}: best epoch {r['best_epoch']} "
              f"(val PED {r['best_val_ped']:.4f})")
    return 0


# ---------------------------------------------------------------------------
# evaluate / baseline


def _load_trained(checkpoint_dir: str, seeds) -> list:
    out = []
    for seed in seeds:
        prefix = os.path.join(checkpoint_dir, f"seed{seed}")
        if not os.path.exists(prefix + ".ckpt"):
            raise CliInputError(f"checkpoint not found: {prefix}.ckpt")
        out.append(T.TrainedModel.load(prefix))
    return out


def _metric_values(rep: M.MetricsReport) -> dict:
    return {"PED": rep.ped, "NPED": rep.nped, "Acc%": rep.accuracy,
            "FER": rep.fer, "BCFS": rep.bcfs}


COLUMNS = ("PED", "NPED", "Acc%", "FER", "BCFS")


def _format_table(rows: list) -> str:
    """rows: (system, {col: (mean, sd | None)})."""
    width = max(len(r[0]) for r in rows) + 2
    head = "system".ljust(width) + "  ".join(c.rjust(16) for c in COLUMNS)
    lines = [head]
    for name, vals in rows:
        cells = []
        for col in COLUMNS:
            mean, sd = vals[col]
            if mean is None:
                cells.append("-".rjust(16))
            elif sd is None:
                cells.append(f"{mean:.4f}".rjust(16))
            else:
                cells.append(f"{mean:.4f}±{sd:.4f}".rjust(16))
        lines.append(name.ljust(width) + "  ".join(cells))
    return "\n".join(lines) + "\n"


def _write_results(out_dir: str, rows: list) -> None:
    table = _format_table(rows)
    sys.stdout.write(table)
    with open(os.path.join(out_dir, "results.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    with open(os.path.join(out_dir, "results.csv"), "w", encoding="utf-8") as fh:
        fh.write("system," + ",".join(
            f"{c.lower().rstrip('%')},{c.lower().rstrip('%')}_sd" for c in COLUMNS) + "\n")
        for name, vals in rows:
            cells = []
            for col in COLUMNS:
                mean, sd = vals[col]
                cells.append("" if mean is None else f"{mean:.6f}")
                cells.append("" if sd is None else f"{sd:.6f}")
            fh.write(name + "," + ",".join(cells) + "\n")


def _aggregate(per_seed: list) -> dict:
    out = {}
    for col in COLUMNS:
        vals = [m[col] for m in per_seed]
        if any(v is None for v in vals):
            out[col] = (None, None)
        elif len(vals) == 1:
            out[col] = (vals[0], None)
        else:
            out[col] = (float(np.mean(vals)), float(np.std(vals, ddof=1)))
    return out


def _baseline_rows(kinds, train_ds, test_ds, ft, seed) -> list:
    golds = [cs.proto for cs in test_ds.sets]
    rows = []
    for kind in kinds:
        if kind == "random":
            preds = [B.random_daughter(cs, seed) for cs in test_ds.sets]
            name = "random-daughter"
        elif kind == "majority":
            try:
                preds = [B.majority_constituent(train_ds, cs) for cs in test_ds.sets]
            except B.UnsupportedOperation as exc:
                raise ValidationFailure(str(exc))
            name = "majority-constituent"
        elif kind in ("pattern", "linear"):
            sites = B.align_cognates(train_ds)
            clf = B.train_site_classifier(sites, kind, B.ContextConfig(), seed=seed)
            preds = [B.reconstruct_with_classifier(clf, cs) for cs in test_ds.sets]
            name = "corpar-style" if kind == "pattern" else "svm-style"
        else:
            raise CliInputError(f"unknown baseline {kind!r}")
        rep = _evaluate_safe(preds, golds, ft)
        rows.append((name, _aggregate([_metric_values(rep)])))
    return rows


def _evaluate_safe(preds, golds, ft):
    try:
        return M.evaluate(preds, golds, ft)
    except M.MetricsError as exc:
        raise ValidationFailure(f"metric computation failed: {exc}")


def _feature_table_for(options: C.ParseOptions):
    if options.tokenizer.mode == "orthographic":
        return None  # FER is not meaningful outside IPA
    return M.FeatureTable.bundled()


def cmd_evaluate(args) -> int:
    cp = _read_config(args.config)
    ds, options = load_dataset(args, cp)
    seeds = parse_seeds(args.seeds)
    train_ds, _, test_ds = C.split_dataset(ds, args.split_seed)
    ft = _feature_table_for(options)
    golds = [cs.proto for cs in test_ds.sets]
    os.makedirs(args.out, exist_ok=True)

    rows = []
    ckpt_dir = args.checkpoints or args.out
    trained = _load_trained(ckpt_dir, seeds)
    expected = C.build_vocab(train_ds)
    per_seed = []
    empty_total = 0
    for tm in trained:
        if (tm.vocab.source_tokens != expected.source_tokens
                or tm.vocab.target_tokens != expected.target_tokens):
            raise ValidationFailure(
                "checkpoint vocabulary does not match this dataset/split; "
                "evaluate with the dataset and split seed used for training"
            )
        enc = C.encode_dataset(test_ds, tm.vocab)
        preds = T.greedy_decode(tm.model, enc, tm.max_decode_len)
        empty_total += sum(not p for p in preds)
        per_seed.append(_metric_values(_evaluate_safe(preds, golds, ft)))
    rows.append(("transformer", _aggregate(per_seed)))
    with open(os.path.join(args.out, "per_seed.csv"), "w", encoding="utf-8") as fh:
        fh.write("seed," + ",".join(c.lower().rstrip("%") for c in COLUMNS) + "\n")
        for seed, m in zip(seeds, per_seed):
            fh.write(str(seed) + "," + ",".join(
                "" if m[c] is None else f"{m[c]:.6f}" for c in COLUMNS) + "\n")
    if empty_total:
        print(f"note: {empty_total} empty prediction(s) across seeds")

    if args.baselines:
        rows.extend(_baseline_rows(args.baselines.split(","), train_ds, test_ds,
                                   ft, seeds[0]))
    _write_results(args.out, rows)
    return 0


def cmd_baseline(args) -> int:
    cp = _read_config(args.config)
    ds, options = load_dataset(args, cp)
    train_ds, _, test_ds = C.split_dataset(ds, args.split_seed)
    ft = _feature_table_for(options)
    os.makedirs(args.out, exist_ok=True)
    kinds = args.kinds.split(",")
    rows = _baseline_rows(kinds, train_ds, test_ds, ft, args.seed)
    _write_results(args.out, rows)
    return 0


# ---------------------------------------------------------------------------
# probe


def cmd_probe(args) -> int:
    seeds = parse_seeds(args.seeds)
    trained = _load_trained(args.checkpoints, seeds)
    os.makedirs(args.out, exist_ok=True)
    dendros = []
    for seed, tm in zip(seeds, trained):
        embs = T.extract_language_embeddings(tm.model)
        m = P.cosine_distance_matrix(embs)
        tree = P.ward_cluster(m)
        P.write_newick(os.path.join(args.out, f"seed{seed}.nwk"), tree)
        P.write_distance_csv(os.path.join(args.out, f"seed{seed}_distances.csv"), m)
        dendros.append(tree)
    cons = P.consensus(dendros, threshold=args.consensus_threshold)
    P.write_newick(os.path.join(args.out, "consensus.nwk"), cons)
    lines = [f"runs: {len(dendros)}",
             f"consensus: {P.serialize_newick(cons)}"]
    if args.gold_tree:
        if not os.path.exists(args.gold_tree):
            raise CliInputError(f"gold tree not found: {args.gold_tree}")
        try:
            gold = P.load_newick(args.gold_tree)
        except P.PhyloError as exc:
            raise CliInputError(f"cannot parse gold tree: {exc}")
        try:
            score = P.gqd(gold, cons)
            per_seed = [P.gqd(gold, t) for t in dendros]
        except P.PhyloError as exc:
            raise ValidationFailure(str(exc))
        lines.append(f"gqd_consensus: {score:.6f}")
        lines.append("gqd_per_seed: " + ",".join(f"{g:.6f}" for g in per_seed))
    summary = "\n".join(lines) + "\n"
    sys.stdout.write(summary)
    with open(os.path.join(args.out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(summary)
    return 0


# ---------------------------------------------------------------------------
# gradcheck / synth


def cmd_gradcheck(args) -> int:
    worst_overall = 0.0
    failed = []
    for kind in E.OP_KINDS:
        worst = max(E.grad_check(kind, seed) for seed in (0, 1, 2))
        worst_overall = max(worst_overall, worst)
        status = "ok" if worst < E.TOLERANCE else "FAIL"
        print(f"{kind:18s} max rel err {worst:.3e}  {status}")
        if worst >= E.TOLERANCE:
            failed.append(kind)
    print(f"overall max rel err {worst_overall:.3e} over {len(E.OP_KINDS)} ops, 3 seeds")
    if failed:
        print(f"FAILED: {','.join(failed)}")
        raise ValidationFailure(f"gradient check failed for: {','.join(failed)}")
    return 0


def cmd_synth(args) -> int:
    if not os.path.exists(args.rules):
        raise CliInputError(f"rules file not found: {args.rules}")
    try:
        rules = S.load_rules(args.rules)
        tsv = S.generate_tsv(rules, args.n_sets, args.n_daughters or len(rules.daughters),
                             args.seed)
    except S.SynthError as exc:
        raise CliInputError(str(exc))
    if args.out_file == "-":
        sys.stdout.write(tsv)
    else:
        with open(args.out_file, "w", encoding="utf-8", newline="") as fh:
            fh.write(tsv)
        print(f"wrote {args.n_sets} sets to {args.out_file}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protoform",
        description="Protoform reconstruction: training, evaluation, baselines, probing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def dataset_flags(p):
        p.add_argument("--dataset", help="cognate-set TSV")
        p.add_argument("--proto-column", default=None, help="proto-language column name")
        p.add_argument("--strip-length", action="store_true", help="drop vowel-length marks")
        p.add_argument("--orthographic", action="store_true", help="character tokenization")
        p.add_argument("--split-seed", type=int, default=0, help="train/val/test split seed")
        p.add_argument("--config", default=None, help="INI config file")

    p = sub.add_parser("train", help="train one model per seed")
    dataset_flags(p)
    p.add_argument("--preset", choices=sorted(T.PRESETS), default=None)
    p.add_argument("--seeds", default="10@0", help="e.g. 0-9, 3, 1,4,7, or N@base")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("evaluate", help="score checkpoints on the test split")
    dataset_flags(p)
    p.add_argument("--seeds", default="10@0")
    p.add_argument("--checkpoints", default=None, help="directory with seedN.ckpt (default: --out)")
    p.add_argument("--baselines", default="", help="comma list: random,majority,pattern,linear")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("baseline", help="run baselines only")
    dataset_flags(p)
    p.add_argument("--kinds", default="random,pattern,linear")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_baseline)

    p = sub.add_parser("probe", help="language-embedding dendrograms, consensus, GQD")
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--seeds", default="10@0")
    p.add_argument("--gold-tree", default=None, help="Newick gold phylogeny")
    p.add_argument("--consensus-threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_probe)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a synthetic dataset from rewrite rules")
    p.add_argument("--rules", required=True)
    p.add_argument("--n-sets", type=int, required=True)
    p.add_argument("--n-daughters", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-file", required=True, help="path or - for stdout")
    p.set_defaults(handler=cmd_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (CliInputError, FileNotFoundError, IsADirectoryError, PermissionError,
            configparser.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValidationFailure, C.CorpusError, E.EngineError, M.MetricsError,
            B.BaselineError, P.PhyloError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
