"""``abfr`` command line: phantom -> anchors -> represent -> train, plus bench,
eval and nifti-info.

Stages hand off through files. Every option can also come from a JSON
``--config`` file (keys are the option names with dashes as underscores);
precedence is command line > config file > built-in default, and the
resolved configuration is written to ``config.json`` in each output
directory. The seed falls back to the ``ABFR_SEED`` environment variable.

Exit codes: 0 success, 1 some subjects/configs failed, 2 configuration or
usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import anchors as A
from . import evaluation as E
from . import model as M
from . import sampling as S
from . import volume as V
from .kan import KanVariant
from .rng import Rng, mix_seed

log = logging.getLogger("abfr")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


DEFAULTS = {
    "phantom": {
        "n": 80, "T": 120, "class_effect": 0.8, "noise_sigma": 1.0, "n_regions": 8,
        "dims": [40, 48, 40], "outer_radii": [17.0, 21.0, 16.0], "thickness": 5.0,
    },
    "anchors": {
        "mode": "random", "H": 100, "s": 8, "tau": 100, "stride": [8, 8, 8], "roi": None,
        "bin_width": 0.5, "max_attempts": None,
    },
    "represent": {
        "N": 256, "sizes": [8, 12, 16], "R": None, "tau_sample": 1, "variance_repeats": 5,
        "coverage_size": 8, "jobs": 1,
    },
    "train": {
        "encoder_block": "mlp", "head_block": "mlp", "embed_dim": 64, "n_layers": 2, "n_heads": 4,
        "keep_ratio": 0.8, "grid_size": 8, "degree": 4, "expansion": 2, "epochs": 100, "lr": 1e-3,
        "weight_decay": 1e-4, "T_0": 10, "T_mult": 2, "eta_min": 0.0, "batch_size": 8, "folds": 5,
        "jobs": 1, "shuffle_labels": False,
    },
    "bench": {
        "configs": ["mlp-mlp"], "embed_dim": 64, "n_layers": 2, "n_heads": 4, "keep_ratio": 0.8,
        "grid_size": 8, "degree": 4, "expansion": 2, "epochs": 100, "lr": 1e-3, "weight_decay": 1e-4,
        "T_0": 10, "T_mult": 2, "eta_min": 0.0, "batch_size": 8, "folds": 5, "jobs": 1,
    },
    "eval": {},
    "nifti-info": {},
}

# commands whose outputs depend on randomness
SEEDED = {"phantom", "anchors", "represent", "train", "bench"}


# --- helpers -----------------------------------------------------------------

def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _names(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _roi(text: str) -> list[list[int]]:
    vals = _ints(text)
    if len(vals) != 6:
        raise argparse.ArgumentTypeError("roi needs x0,x1,y0,y1,z0,z1")
    return [vals[0:2], vals[2:4], vals[4:6]]


def resolve(command: str, cli: dict, env=os.environ) -> dict:
    """Merge defaults, the optional JSON config file and explicit flags."""
    cfg = dict(DEFAULTS[command])
    path = cli.pop("config", None)
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg.update({k.replace("-", "_"): v for k, v in doc.items()})
    cfg.update({k: v for k, v in cli.items() if v is not None})
    if command in SEEDED and cfg.get("seed") is None:
        if env.get("ABFR_SEED") is None:
            raise ConfigError("a seed is required: pass --seed, set it in --config, or export ABFR_SEED")
        try:
            cfg["seed"] = int(env["ABFR_SEED"])
        except ValueError:
            raise ConfigError(f"ABFR_SEED is not an integer: {env['ABFR_SEED']!r}") from None
    return cfg


def _out_dir(cfg: dict) -> Path:
    out = cfg.get("out")
    if not out:
        raise ConfigError("--out is required")
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def _dump_config(out: Path, command: str, cfg: dict) -> None:
    doc = {"command": command, **{k: v for k, v in cfg.items() if k not in ("out",)}}
    (out / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def _existing(path, what: str) -> Path:
    if not path:
        raise ConfigError(f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def read_manifest(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"subject_id", "path", "label"} <= set(rows[0]):
        raise ConfigError(f"{path}: manifest needs columns subject_id,path,label")
    for r in rows:
        p = Path(r["path"])
        r["path"] = p if p.is_absolute() else path.parent / p
    return rows


def write_manifest(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["subject_id", "path", "label"])
        w.writerows(rows)


def _positive(cfg: dict, *keys) -> None:
    for k in keys:
        if cfg.get(k) is None or cfg[k] < 1:
            raise ConfigError(f"{k} must be a positive integer (got {cfg.get(k)!r})")


# --- phantom -----------------------------------------------------------------

def cmd_phantom(cfg: dict) -> int:
    _positive(cfg, "n", "T")
    base = V.PhantomSpec(
        dims=tuple(cfg["dims"]), outer_radii=tuple(cfg["outer_radii"]), thickness=float(cfg["thickness"]),
        T=int(cfg["T"]), n_regions=int(cfg["n_regions"]), class_effect=float(cfg["class_effect"]),
        noise_sigma=float(cfg["noise_sigma"]),
    )
    try:
        base.validate()
        mask = V.shell_mask(base)
    except V.PhantomSpecError as exc:
        raise ConfigError(str(exc)) from None
    out = _out_dir(cfg)
    V.save_mask(mask, out / "mask.abfv")
    rows = []
    for i in range(int(cfg["n"])):
        label = i % 2
        spec = replace(base, seed=mix_seed(cfg["seed"], i), label=label)
        vol, _, _ = V.make_phantom(spec)
        name = f"sub-{i:04d}.abfv"
        V.save_raw(vol, out / name)
        rows.append([f"sub-{i:04d}", name, label])
    write_manifest(out / "manifest.csv", rows)
    _dump_config(out, "phantom", cfg)
    log.info("wrote %d phantom subjects to %s", len(rows), out)
    return EXIT_OK


# --- anchors -----------------------------------------------------------------

def _load_mask(path) -> V.Mask3D:
    p = _existing(path, "mask")
    try:
        return V.load_mask(p)
    except V.VolumeError as exc:
        raise ConfigError(f"cannot read mask {p}: {exc}") from None


def cmd_anchors(cfg: dict) -> int:
    mask = _load_mask(cfg.get("mask"))
    _positive(cfg, "s", "tau")
    if cfg["mode"] == "random":
        _positive(cfg, "H")
        aset = A.select_random_anchors(
            mask, int(cfg["H"]), int(cfg["s"]), int(cfg["tau"]), rng=Rng(cfg["seed"]),
            max_attempts=cfg.get("max_attempts"),
        )
    elif cfg["mode"] == "grid":
        roi = cfg["roi"] or A.mask_bounding_roi(mask)
        aset = A.select_grid_anchors(mask, [tuple(r) for r in roi], cfg["stride"], int(cfg["s"]), int(cfg["tau"]))
        aset.seed = cfg["seed"]
    else:
        raise ConfigError(f"unknown anchor mode {cfg['mode']!r}; valid: random, grid")
    out = _out_dir(cfg)
    A.save_anchor_set(aset, out / "anchors.json")
    report = A.boundary_distance_report(aset, mask, float(cfg["bin_width"]))
    report.write_distances(out / "boundary_distances.csv")
    report.write_histogram(out / "boundary_histogram.csv")
    with open(out / "anchor_summary.csv", "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["mode", "H", "mean_distance", *sorted(aset.diagnostics)])
        w.writerow([aset.mode, aset.H, repr(report.mean), *(aset.diagnostics[k] for k in sorted(aset.diagnostics))])
    _dump_config(out, "anchors", cfg)
    print(f"{aset.mode} anchors: H={aset.H} mean boundary distance={report.mean:.4f}")
    return EXIT_OK


# --- represent ---------------------------------------------------------------

def _represent_one(args):
    sid, path, label, mask_path, anchors_path, cfg = args
    try:
        mask = V.load_mask(mask_path)
        aset = A.load_anchor_set(anchors_path)
        vol = V.load_raw(path) if Path(path).suffix == ".abfv" else V.load_nifti(path)[0]
        if not isinstance(vol, V.Volume4D):
            raise S.SamplingError("subject volume must be 4-D")
        rng = Rng(mix_seed(cfg["seed"], cfg["_index"]))
        sizes = S.cycle_sizes(cfg["sizes"], cfg["R"])
        ats = S.anchor_series(vol, aset, mask)
        table = A.SupportTable(mask)
        rep = S.iterative_representation(
            vol, mask, aset, sizes, int(cfg["N"]), rng, int(cfg["tau_sample"]), label, ats, table,
        )
        single = S.sample_patches(vol, mask, int(cfg["N"]), cfg["coverage_size"], int(cfg["tau_sample"]),
                                  Rng(mix_seed(cfg["seed"], cfg["_index"], 1)), table=table)
        cov_iter, _ = S.gm_coverage([it.patches for it in rep.iterations], mask)
        cov_single, _ = S.gm_coverage(single, mask)
        n_bad = int(sum(it.degenerate.sum() for it in rep.iterations))
        bad_anchor = int(np.sum(np.std(ats, axis=1) == 0))
        return sid, rep, (cov_iter, cov_single), (n_bad, bad_anchor), None
    except Exception as exc:  # noqa: BLE001 - reported per subject
        return sid, None, None, None, f"{type(exc).__name__}: {exc}"


def cmd_represent(cfg: dict) -> int:
    manifest = read_manifest(_existing(cfg.get("manifest"), "manifest"))
    mask_path = _existing(cfg.get("mask"), "mask")
    anchors_path = _existing(cfg.get("anchors"), "anchors")
    _positive(cfg, "N", "tau_sample", "jobs")
    cfg["R"] = len(cfg["sizes"]) if cfg["R"] is None else int(cfg["R"])
    _positive(cfg, "R")
    out = _out_dir(cfg)
    tasks = []
    for i, row in enumerate(manifest):
        sub = dict(cfg, _index=i)
        tasks.append((row["subject_id"], str(row["path"]), int(row["label"]), str(mask_path), str(anchors_path), sub))
    if cfg["jobs"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["jobs"]) as ex:
            results = list(ex.map(_represent_one, tasks))
    else:
        results = [_represent_one(t) for t in tasks]

    rows, failed = [], 0
    cov_f = open(out / "coverage.csv", "w", newline="")
    flag_f = open(out / "flags.csv", "w", newline="")
    with cov_f, flag_f:
        cw, fw = _writer(cov_f), _writer(flag_f)
        cw.writerow(["subject_id", "iterative_coverage", "single_pass_coverage"])
        fw.writerow(["subject_id", "status", "degenerate_pairs", "constant_anchors", "error"])
        for sid, rep, cov, flags, err in results:
            if err is not None:
                failed += 1
                log.error("subject %s failed: %s", sid, err)
                fw.writerow([sid, "failed", "", "", err])
                continue
            S.save_representation(rep, out / f"{sid}.abfr")
            rows.append([sid, f"{sid}.abfr", rep.label])
            cw.writerow([sid, repr(cov[0]), repr(cov[1])])
            fw.writerow([sid, "ok", flags[0], flags[1], ""])
    write_manifest(out / "manifest.csv", rows)

    repeats = int(cfg["variance_repeats"])
    if repeats >= 2 and rows:
        first = next(t for t, r in zip(tasks, results) if r[4] is None)
        vol = V.load_raw(first[1]) if Path(first[1]).suffix == ".abfv" else V.load_nifti(first[1])[0]
        mask, aset = V.load_mask(mask_path), A.load_anchor_set(anchors_path)
        with open(out / "variance.csv", "w", newline="") as fh:
            w = _writer(fh)
            w.writerow(["R", "variance"])
            for R in range(1, cfg["R"] + 1):
                v = S.fc_sampling_variance(vol, mask, aset, R, repeats, Rng(mix_seed(cfg["seed"], 7, R)),
                                           cfg["sizes"], int(cfg["N"]), int(cfg["tau_sample"]))
                w.writerow([R, repr(v)])
    _dump_config(out, "represent", cfg)
    print(f"represented {len(rows)}/{len(manifest)} subjects")
    return EXIT_PARTIAL if failed else EXIT_OK


# --- train / bench -------------------------------------------------------------

def _load_reps(path) -> tuple[list[str], list[S.SubjectRepresentation]]:
    manifest = read_manifest(_existing(path, "reps"))
    ids, reps = [], []
    for row in manifest:
        rep = S.load_representation(row["path"])
        if rep.label is None:
            rep.label = int(row["label"])
        ids.append(row["subject_id"])
        reps.append(rep)
    return ids, reps


def _model_config(cfg: dict, rep: S.SubjectRepresentation, enc, head) -> M.ModelConfig:
    try:
        return M.ModelConfig(
            H=rep.H, pos_dim=rep.positions.shape[1], embed_dim=int(cfg["embed_dim"]),
            n_layers=int(cfg["n_layers"]), n_heads=int(cfg["n_heads"]), keep_ratio=float(cfg["keep_ratio"]),
            encoder_block=enc, head_block=head, grid_size=int(cfg["grid_size"]), degree=int(cfg["degree"]),
            expansion=int(cfg["expansion"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _train_spec(cfg: dict) -> M.TrainSpec:
    try:
        return M.TrainSpec(
            epochs=int(cfg["epochs"]), lr=float(cfg["lr"]), weight_decay=float(cfg["weight_decay"]),
            T_0=int(cfg["T_0"]), T_mult=int(cfg["T_mult"]), eta_min=float(cfg["eta_min"]),
            batch_size=int(cfg["batch_size"]), folds=int(cfg["folds"]), seed=int(cfg["seed"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def shuffled_labels(reps, seed: int) -> list[S.SubjectRepresentation]:
    """Copies of ``reps`` with labels permuted (null control)."""
    labels = [r.label for r in reps]
    Rng(mix_seed(seed, 99)).shuffle(labels)
    return [S.SubjectRepresentation(r.F_bar, r.positions, l, r.meta) for r, l in zip(reps, labels)]


def cmd_train(cfg: dict) -> int:
    ids, reps = _load_reps(cfg.get("reps"))
    _positive(cfg, "jobs")
    mcfg = _model_config(cfg, reps[0], cfg["encoder_block"], cfg["head_block"])
    spec = _train_spec(cfg)
    if cfg.get("shuffle_labels"):
        reps = shuffled_labels(reps, spec.seed)
    out = _out_dir(cfg)
    try:
        res = M.run_cv(reps, mcfg, spec, jobs=int(cfg["jobs"]))
    except M.ModelError as exc:
        raise ConfigError(str(exc)) from None
    for f in res.folds:
        model = M.ABFRClassifier(mcfg, 0)
        model.load_state_dict(f.state)
        M.save_model(model, out / f"fold_{f.fold}.abfk")
        M.write_log_csv(out / f"fold_{f.fold}_log.csv", f.log)
    E.write_metrics_csv(out / "metrics.csv", res.fold_metrics)
    E.write_summary_csv(out / "summary.csv", res.fold_metrics)
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["subject_id", "fold", "label", "prob"])
        rows = [(int(j), f.fold, float(p)) for f in res.folds for j, p in zip(f.val_index, f.val_prob)]
        for j, fold, p in sorted(rows):
            w.writerow([ids[j], fold, reps[j].label, repr(p)])
    _dump_config(out, "train", cfg)
    print(f"{mcfg.name}: acc {res.mean['acc']:.4f} +- {res.std['acc']:.4f}, auc {res.mean['auc']:.4f} +- {res.std['auc']:.4f}")
    return EXIT_OK


def parse_pair(name: str) -> tuple[KanVariant, KanVariant]:
    parts = name.split("-")
    if len(parts) != 2:
        raise ConfigError(f"config {name!r} must look like <encoder>-<head>, e.g. fastkan-wavkan")
    try:
        return KanVariant.parse(parts[0]), KanVariant.parse(parts[1])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_bench(cfg: dict) -> int:
    _, reps = _load_reps(cfg.get("reps"))
    pairs = [(n, *parse_pair(n)) for n in cfg["configs"]]
    configs = [(n, _model_config(cfg, reps[0], e, h)) for n, e, h in pairs]
    spec = _train_spec(cfg)
    out = _out_dir(cfg)
    records = E.benchmark(configs, reps, spec, jobs=int(cfg["jobs"]))
    E.write_bench_csv(out / "bench.csv", records)
    _dump_config(out, "bench", cfg)
    failed = [r for r in records if r.error]
    for r in failed:
        log.error("config %s failed: %s", r.config, r.error)
    return EXIT_PARTIAL if failed else EXIT_OK


# --- eval / nifti-info ---------------------------------------------------------

def cmd_eval(cfg: dict) -> int:
    a = _existing(cfg.get("a"), "a")
    b = _existing(cfg.get("b"), "b")
    try:
        res = E.compare_runs(E.read_metrics_csv(a), E.read_metrics_csv(b))
    except E.MetricError as exc:
        raise ConfigError(str(exc)) from None
    lines = [["metric", "t", "p", "dof", "degenerate"]]
    for k in E.METRIC_NAMES:
        r = res[k]
        lines.append([k, repr(r.t), repr(r.p), r.dof, int(r.degenerate)])
    if cfg.get("out"):
        out = Path(cfg["out"])
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            _writer(fh).writerows(lines)
    for row in lines:
        print(",".join(str(v) for v in row))
    return EXIT_OK


def cmd_nifti_info(cfg: dict) -> int:
    path = _existing(cfg.get("path"), "path")
    try:
        hdr = V.parse_nifti_header(path.read_bytes())
    except V.NiftiError as exc:
        print(f"{path}: {exc} (field: {exc.field})", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(hdr.summary(), indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "phantom": cmd_phantom,
    "anchors": cmd_anchors,
    "represent": cmd_represent,
    "train": cmd_train,
    "bench": cmd_bench,
    "eval": cmd_eval,
    "nifti-info": cmd_nifti_info,
}


def _variant(text: str) -> str:
    try:
        return KanVariant.parse(text).value
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--reps", help="manifest.csv written by `represent`")
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--n-layers", type=int)
    p.add_argument("--n-heads", type=int)
    p.add_argument("--keep-ratio", type=float)
    p.add_argument("--grid-size", type=int)
    p.add_argument("--degree", type=int)
    p.add_argument("--expansion", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--T-0", dest="T_0", type=int)
    p.add_argument("--T-mult", dest="T_mult", type=int)
    p.add_argument("--eta-min", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--folds", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abfr", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="JSON file of option values")
        if name in SEEDED:
            p.add_argument("--seed", type=int)
        return p

    p = command("phantom", "synthesize a labelled phantom cohort")
    p.add_argument("--out")
    p.add_argument("--n", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--class-effect", type=float)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--n-regions", type=int)
    p.add_argument("--dims", type=_ints)

    p = command("anchors", "select anchor patches and report boundary distances")
    p.add_argument("--mask")
    p.add_argument("--out")
    p.add_argument("--mode")
    p.add_argument("--H", type=int)
    p.add_argument("--s", type=int)
    p.add_argument("--tau", type=int)
    p.add_argument("--stride", type=_ints)
    p.add_argument("--roi", type=_roi, help="x0,x1,y0,y1,z0,z1 (inclusive)")
    p.add_argument("--bin-width", type=float)
    p.add_argument("--max-attempts", type=int)

    p = command("represent", "build per-subject FC representations")
    p.add_argument("--manifest")
    p.add_argument("--mask")
    p.add_argument("--anchors", help="anchors.json written by `anchors`")
    p.add_argument("--out")
    p.add_argument("--N", type=int)
    p.add_argument("--sizes", type=_floats)
    p.add_argument("--R", type=int, help="number of sampling passes (sizes are cycled)")
    p.add_argument("--tau-sample", type=int)
    p.add_argument("--variance-repeats", type=int)
    p.add_argument("--jobs", type=int)

    p = command("train", "k-fold cross-validated training")
    p.add_argument("--out")
    p.add_argument("--encoder-block", type=_variant)
    p.add_argument("--head-block", type=_variant)
    p.add_argument("--shuffle-labels", action="store_true", default=None)
    p.add_argument("--jobs", type=int)
    _model_flags(p)

    p = command("bench", "time full k-fold training for several block configurations")
    p.add_argument("--out")
    p.add_argument("--configs", type=_names, help="comma list like mlp-mlp,fastkan-wavkan")
    p.add_argument("--jobs", type=int)
    _model_flags(p)

    p = command("eval", "one-tailed paired t-tests of run A over run B")
    p.add_argument("a", nargs="?", help="metrics.csv of run A")
    p.add_argument("b", nargs="?", help="metrics.csv of run B")
    p.add_argument("--out", help="optional CSV report path")

    p = command("nifti-info", "print a NIfTI-1 header summary")
    p.add_argument("path", nargs="?")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    args = {k: v for k, v in vars(ns).items() if k not in ("command", "verbose")}
    try:
        cfg = resolve(ns.command, args)
        return COMMANDS[ns.command](cfg)
    except ConfigError as exc:
        print(f"abfr {ns.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (A.InfeasibleError,) as exc:
        print(f"abfr {ns.command}: {exc} (acceptance rate {exc.acceptance_rate:.4g})", file=sys.stderr)
        return EXIT_CONFIG
    except (A.AnchorError, S.SamplingError, V.VolumeError, M.ModelError, ValueError) as exc:
        print(f"abfr {ns.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
