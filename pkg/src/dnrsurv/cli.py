"""Command-line pipeline: synth, stain, train, cluster, describe, select, evaluate, km.

Every stage writes its outputs atomically into ``--out`` together with a
``manifest.<stage>.json`` holding the resolved configuration, the command
line and content hashes of inputs and outputs. ``dnrsurv replay`` re-runs a
stage from its manifest and checks the outputs are byte-identical.

Exit codes: 0 success, 1 validation error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import descriptor, dnr, embank, spkm, stain, synth
from .config import PipelineConfig, load_config
from .errors import NUMERIC_ERRORS, DnrError, InvalidInput
from .survival import (brier_score, breslow_baseline, c_index, fit_cox, forward_select, kaplan_meier,
                       log_rank, loocv_linear_predictors, predict_survival, significance_marker)
from .tensorfile import (as_float, as_int, atomic_write_bytes, read_csv, read_tensor, sha256, write_csv,
                         write_tensor)

log = logging.getLogger("dnrsurv")

PATCH_COLUMNS = ("patch_id", "patient_id", "slide_id", "row", "col")
PATIENT_COLUMNS = ("patient_id", "time", "event")


# ---------------------------------------------------------------- file helpers

def write_json(path, data):
    text = json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n"
    atomic_write_bytes(path, text.encode("utf-8"))


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def read_patches(path):
    _, cols = read_csv(path, PATCH_COLUMNS)
    rows = as_int(path, "row", cols["row"])
    colv = as_int(path, "col", cols["col"])
    if len(set(cols["patch_id"])) != len(cols["patch_id"]):
        raise InvalidInput(f"{path}: duplicate patch_id values")
    return cols["patch_id"], cols["patient_id"], cols["slide_id"], rows, colv


def read_patients(path):
    _, cols = read_csv(path, PATIENT_COLUMNS)
    t = as_float(path, "time", cols["time"])
    e = as_int(path, "event", cols["event"])
    if np.any(t <= 0):
        raise InvalidInput(f"{path}: column 'time' must be positive")
    if not np.all(np.isin(e, (0, 1))):
        raise InvalidInput(f"{path}: column 'event' must be 0 or 1")
    return cols["patient_id"], t, e, cols


def read_descriptors(path):
    header, cols = read_csv(path, ("patient_id",))
    names = [h for h in header if h != "patient_id"]
    if not names:
        raise InvalidInput(f"{path}: no feature columns")
    mat = np.column_stack([as_float(path, n, cols[n]) for n in names])
    return cols["patient_id"], names, mat


def align_patients(desc_path, desc_ids, pat_path, pat_ids, t, e):
    index = {p: i for i, p in enumerate(pat_ids)}
    missing = [p for p in desc_ids if p not in index]
    if missing:
        raise InvalidInput(f"{pat_path}: patient_id {missing[0]!r} from {desc_path} not found")
    rows = np.array([index[p] for p in desc_ids], dtype=int)
    return t[rows], e[rows]


# ---------------------------------------------------------------- stages

def stage_synth(args, cfg: PipelineConfig, out: Path):
    params = dict(cfg.synth)
    params.pop("seed", None)
    if args.n_patients is not None:
        params["n_patients"] = args.n_patients
    k_true = params.get("k_true", synth.SynthConfig.k_true)
    if args.beta_star == "zero":
        params["beta_star"] = np.zeros(k_true + k_true * k_true)
    cohort = synth.generate(synth.SynthConfig(seed=cfg.seed, **params))
    write_csv(out / "patches.csv", PATCH_COLUMNS,
              zip(cohort.patch_ids, cohort.patch_patient, cohort.patch_slide, cohort.rows, cohort.cols))
    write_tensor(out / "features.dnrb", cohort.features)
    write_csv(out / "patients.csv", PATIENT_COLUMNS, zip(cohort.patient_ids, cohort.time, cohort.event))
    write_csv(out / "truth_assignments.csv", ("patch_id", "cluster"), zip(cohort.patch_ids, cohort.true_labels))
    names = descriptor.feature_names(k_true)
    write_csv(out / "truth_descriptors.csv", ["patient_id"] + names,
              ([p] + list(row) for p, row in zip(cohort.patient_ids, cohort.descriptors)))
    write_csv(out / "beta_star.csv", ("feature", "beta"), zip(names, cohort.config.beta_star))
    write_json(out / "synth_report.json", {
        "n_patients": cohort.config.n_patients, "n_patches": len(cohort.patch_ids),
        "k_true": k_true, "censoring_target": cohort.config.censoring_rate,
        "censoring_achieved": cohort.achieved_censoring, "notes": cohort.notes,
    })
    return []


def _training_subset(slides, spatial_all, max_patches, seed):
    """Whole slides in seeded random order until the patch budget is met."""
    order = list(dict.fromkeys(slides))
    rng = np.random.default_rng([seed, 7])
    perm = rng.permutation(len(order))
    by_slide: dict = {}
    for i, s in enumerate(slides):
        by_slide.setdefault(s, []).append(i)
    chosen = []
    for j in perm:
        members = [i for i in by_slide[order[j]] if spatial_all[i]]
        if not members:
            continue
        chosen.extend(members)
        if len(chosen) >= max_patches:
            break
    return np.array(sorted(chosen), dtype=int)


def stage_train(args, cfg: PipelineConfig, out: Path):
    feats = read_tensor(args.features).astype(float)
    _, _, slides, rows, cols = read_patches(args.patches)
    if feats.ndim != 2 or feats.shape[0] != len(slides):
        raise InvalidInput(f"{args.features}: expected {len(slides)} rows (one per patch), got shape {feats.shape}")
    targets = None
    inputs = [args.features, args.patches]
    if args.targets:
        targets = read_tensor(args.targets).astype(float)
        inputs.append(args.targets)
        if targets.shape[0] != feats.shape[0]:
            raise InvalidInput(f"{args.targets}: row count differs from {args.features}")
    spatial_all = embank.grid_neighbors(slides, rows, cols, cfg.spatial_connectivity)
    sub = _training_subset(slides, spatial_all, cfg.train_max_patches, cfg.seed)
    if sub.size < 2:
        raise InvalidInput(f"{args.patches}: fewer than two patches with spatial neighbors")
    spatial = embank.grid_neighbors([slides[i] for i in sub], rows[sub], cols[sub], cfg.spatial_connectivity)
    tcfg = dnr.TrainConfig(latent_dim=cfg.latent_dim, epochs_pretrain=cfg.epochs_pretrain,
                           epochs_divide=cfg.epochs_divide, epochs_rule=cfg.epochs_rule, rounds=cfg.rounds,
                           lam=cfg.lam, tau=cfg.tau, lr=cfg.lr, batch_size=cfg.batch_size,
                           momentum=cfg.momentum, k_neighbors=cfg.k_neighbors, seed=cfg.seed)
    res = dnr.train(feats[sub], spatial, tcfg, targets=None if targets is None else targets[sub])
    write_tensor(out / "encoder.dnrb", res.codec.encoder)
    write_tensor(out / "decoder.dnrb", res.codec.decoder)
    write_tensor(out / "bank.dnrb", res.bank.vectors)
    write_tensor(out / "embeddings.dnrb", res.codec.embed(feats))
    write_csv(out / "loss_trace.csv", ("epoch", "phase", "mse", "divide", "rule", "total"),
              ((r.epoch, r.phase, r.mse, r.divide, r.rule, r.total) for r in res.trace))
    spatial_cos = dnr.mean_spatial_similarity(res.codec.embed(feats[sub]), spatial)
    write_json(out / "train_report.json", {
        "n_train_patches": int(sub.size), "n_patches": int(feats.shape[0]),
        "final_loss": res.trace[-1].total if res.trace else None,
        "mean_spatial_cosine": spatial_cos,
        "rounds": [{"round": p.round, "expansion": len(p.expansion_set)} for p in res.partitions],
    })
    return inputs


def stage_cluster(args, cfg, out):
    emb = read_tensor(args.embeddings).astype(float)
    pids, *_ = read_patches(args.patches)
    if emb.ndim != 2 or emb.shape[0] != len(pids):
        raise InvalidInput(f"{args.embeddings}: expected {len(pids)} rows (one per patch), got shape {emb.shape}")
    model = spkm.fit(emb, cfg.k, seed=cfg.seed)
    labels = spkm.assign_many(model, emb)
    write_tensor(out / "centroids.dnrb", model.centroids)
    write_csv(out / "assignments.csv", ("patch_id", "cluster"), zip(pids, labels))
    write_json(out / "cluster_report.json", {"k": cfg.k, "inertia": model.inertia,
                                             "iterations": model.iterations_run, "repaired": model.repaired})
    return [args.embeddings, args.patches]


def stage_describe(args, cfg, out):
    pids, patients, slides, rows, cols = read_patches(args.patches)
    _, acols = read_csv(args.assignments, ("patch_id", "cluster"))
    lab_by_patch = dict(zip(acols["patch_id"], as_int(args.assignments, "cluster", acols["cluster"])))
    missing = [p for p in pids if p not in lab_by_patch]
    if missing:
        raise InvalidInput(f"{args.assignments}: patch_id {missing[0]!r} has no cluster")
    labels = np.array([lab_by_patch[p] for p in pids])
    if labels.min() < 0 or labels.max() >= cfg.k:
        raise InvalidInput(f"{args.assignments}: column 'cluster' has ids outside [0, {cfg.k}) for K={cfg.k}")
    ids, mat = descriptor.build_all(patients, slides, rows, cols, labels, cfg.k, cfg.neighborhood)
    write_csv(out / "descriptors.csv", ["patient_id"] + descriptor.feature_names(cfg.k),
              ([p] + list(r) for p, r in zip(ids, mat)))
    return [args.assignments, args.patches]


def stage_select(args, cfg, out):
    ids, names, H = read_descriptors(args.descriptors)
    pat_ids, t, e, _ = read_patients(args.patients)
    t, e = align_patients(args.descriptors, ids, args.patients, pat_ids, t, e)
    trace, fit = forward_select(H, t, e, alpha=cfg.alpha, names=names)
    write_csv(out / "selection.csv", ("step", "candidate", "column", "lr", "p_value", "accepted"),
              ((i, s.candidate, s.column, s.lr, s.p_value, s.accepted) for i, s in enumerate(trace.steps)))
    write_json(out / "selection_report.json", {
        "alpha": cfg.alpha, "n_feat": trace.n_feat, "selected": trace.selected_names,
        "excluded_constant": trace.excluded, "skipped": [list(s) for s in trace.skipped],
        "beta": [] if fit is None else list(fit.beta),
    })
    return [args.descriptors, args.patients]


def evaluate_cohort(H, names, t, e, selected, brier_time="median"):
    """LOOCV linear predictors and the metrics report for a selected covariate set."""
    cols = [names.index(s) for s in selected]
    if cols:
        eta = loocv_linear_predictors(H[:, cols], t, e)
        full = fit_cox(H[:, cols], t, e)
        eta_full = full.linear_predictor(H[:, cols])
    else:
        eta = np.zeros(t.size)
        eta_full = np.zeros(t.size)
    ok = ~np.isnan(eta)
    t_eval = float(np.median(t)) if brier_time == "median" else float(brier_time)
    baseline = breslow_baseline(eta_full, t, e)
    surv = predict_survival(np.where(ok, eta, 0.0), baseline, t_eval)
    brier = brier_score(surv[ok], t[ok], e[ok], t_eval)
    metrics = {
        "n": int(t.size), "events": int(e.sum()), "n_feat": len(cols), "selected": list(selected),
        "c_index_loocv": c_index(eta, t, e), "c_index_full": c_index(eta_full, t, e),
        "loocv_missing": int((~ok).sum()),
        "brier": brier.score, "brier_time": t_eval, "brier_excluded": brier.n_excluded,
    }
    high = eta > np.nanmedian(eta)
    if ok.all() and 0 < high.sum() < t.size:
        lr = log_rank(t, e, high.astype(int))
        metrics.update(logrank_stat=lr.statistic, logrank_p=lr.p_value,
                       logrank_marker=significance_marker(lr.p_value))
    else:
        metrics.update(logrank_stat=None, logrank_p=None, logrank_marker="")
    return eta, high, metrics


def stage_evaluate(args, cfg, out):
    ids, names, H = read_descriptors(args.descriptors)
    pat_ids, t, e, _ = read_patients(args.patients)
    t, e = align_patients(args.descriptors, ids, args.patients, pat_ids, t, e)
    _, scols = read_csv(args.selection, ("candidate", "accepted"))
    selected = [c for c, a in zip(scols["candidate"], scols["accepted"]) if a.strip() in ("1", "True", "true")]
    unknown = [s for s in selected if s not in names]
    if unknown:
        raise InvalidInput(f"{args.selection}: candidate {unknown[0]!r} not a column of {args.descriptors}")
    eta, high, metrics = evaluate_cohort(H, names, t, e, selected, cfg.brier_time)
    write_csv(out / "predictions.csv", ("patient_id", "eta_loocv", "risk_group"),
              zip(ids, eta, np.where(high, "high", "low")))
    write_json(out / "metrics.json", metrics)
    lines = [f"{k}={_text(v)}" for k, v in sorted(metrics.items())]
    atomic_write_bytes(out / "metrics.txt", ("\n".join(lines) + "\n").encode("utf-8"))
    print("\n".join(lines))
    return [args.descriptors, args.patients, args.selection]


def _text(v):
    if isinstance(v, list):
        return ",".join(map(str, v))
    if isinstance(v, float):
        return f"{v:.6g}"
    return "" if v is None else str(v)


def stage_km(args, cfg, out):
    pat_ids, t, e, pcols = read_patients(args.patients)
    inputs = [args.patients]
    if args.groups == "median-split":
        if not args.predictions:
            raise InvalidInput("--groups median-split requires --predictions")
        _, prc = read_csv(args.predictions, ("patient_id", "eta_loocv"))
        inputs.append(args.predictions)
        eta_by = dict(zip(prc["patient_id"], as_float(args.predictions, "eta_loocv", prc["eta_loocv"])))
        missing = [p for p in pat_ids if p not in eta_by]
        if missing:
            raise InvalidInput(f"{args.predictions}: patient_id {missing[0]!r} missing")
        eta = np.array([eta_by[p] for p in pat_ids])
        keep = ~np.isnan(eta)
        groups = np.where(eta > np.median(eta[keep]), "high", "low")
    elif args.groups.startswith("column:"):
        col = args.groups.split(":", 1)[1]
        if col not in pcols:
            raise InvalidInput(f"{args.patients}: missing column '{col}'")
        groups = np.array(pcols[col])
        keep = groups != ""
    else:
        raise InvalidInput("--groups must be 'median-split' or 'column:<name>'")
    t, e, groups = t[keep], e[keep], groups[keep]
    rows, curves = [], {}
    for g in sorted(set(groups)):
        m = groups == g
        km = kaplan_meier(t[m], e[m])
        curves[g] = km
        rows.append((0.0, 1.0, int(m.sum()), g))
        rows.extend((tt, s, n, g) for tt, s, n in zip(km.time, km.survival, km.at_risk))
    write_csv(out / "km.csv", ("time", "survival", "at_risk", "group"), rows)
    report = {"groups": sorted(set(groups)), "n": int(t.size)}
    if len(curves) >= 2:
        lr = log_rank(t, e, groups)
        report.update(statistic=lr.statistic, p_value=lr.p_value, df=lr.df,
                      marker=significance_marker(lr.p_value))
        print(f"log-rank chi2={lr.statistic:.4f} df={lr.df} p={lr.p_value:.4g}")
    write_json(out / "logrank.json", report)
    if cfg_plot(args):
        atomic_write_bytes(out / "km.svg", km_svg(curves, t.max()).encode("utf-8"))
    return inputs


def cfg_plot(args):
    return bool(getattr(args, "plot", False))


def km_svg(curves, t_max, width=480, height=320, pad=40) -> str:
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]
    sx = (width - 2 * pad) / t_max
    sy = height - 2 * pad
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{sy}" fill="none" stroke="#444"/>']
    for n, (g, km) in enumerate(curves.items()):
        x0, y0 = pad, pad
        pts = [f"{x0:.2f},{y0:.2f}"]
        for tt, s in zip(km.time, km.survival):
            x = pad + tt * sx
            pts.append(f"{x:.2f},{y0:.2f}")
            y0 = pad + (1 - s) * sy
            pts.append(f"{x:.2f},{y0:.2f}")
        pts.append(f"{width - pad:.2f},{y0:.2f}")
        c = colors[n % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{" ".join(pts)}"/>')
        parts.append(f'<text x="{width - pad - 60}" y="{pad + 14 * (n + 1)}" fill="{c}" font-size="11">{g}</text>')
    parts.append(f'<text x="{width / 2:.0f}" y="{height - 8}" font-size="11" text-anchor="middle">time (days)</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _expand_images(paths):
    out = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            out.extend(sorted(p.glob("*.png")))
        elif p.exists():
            out.append(p)
        else:
            raise InvalidInput(f"{p}: file not found")
    if not out:
        raise InvalidInput("no PNG images given")
    return out


def stage_stain(args, cfg, out):
    from PIL import Image

    files = _expand_images(args.images)
    he, rows = [], []
    shape = None
    for f in files:
        rgb = np.asarray(Image.open(f).convert("RGB"))
        if shape is None:
            shape = rgb.shape
        elif rgb.shape != shape:
            raise InvalidInput(f"{f}: size {rgb.shape[:2]} differs from {shape[:2]}")
        od = stain.rgb_to_od(rgb)
        level = float(np.linalg.norm(od.reshape(-1, 3), axis=1).mean())
        fg = level > cfg.foreground_min_od
        h_vec = e_vec = (np.nan,) * 3
        conc = np.zeros(rgb.shape[:2] + (2,))
        if fg:
            try:
                sm = stain.estimate_stain_matrix(od, cfg.od_threshold, cfg.angle_percentile)
                conc = stain.deconvolve(od, sm).channels
                h_vec, e_vec = tuple(sm.h_vector), tuple(sm.e_vector)
            except DnrError as exc:
                log.warning("%s: %s; treated as background", f, exc)
                fg = False
        he.append(conc)
        rows.append((f.name, level, int(fg)) + tuple(h_vec) + tuple(e_vec))
    write_tensor(out / "he.dnrb", np.stack(he))
    write_csv(out / "stain_report.csv",
              ("image", "mean_od", "foreground", "h_r", "h_g", "h_b", "e_r", "e_g", "e_b"), rows)
    return [str(f) for f in files]


STAGES = {
    "synth": stage_synth, "stain": stage_stain, "train": stage_train, "cluster": stage_cluster,
    "describe": stage_describe, "select": stage_select, "evaluate": stage_evaluate, "km": stage_km,
}


# ---------------------------------------------------------------- parser

def _common(p):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--rounds", type=int)
    p.add_argument("--neighborhood", type=int, choices=(4, 8))
    p.add_argument("--brier-time", dest="brier_time", help="days, or 'median'")
    p.add_argument("--plot", action="store_true", help="also write SVG plots")


def build_parser():
    ap = argparse.ArgumentParser(prog="dnrsurv", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    _common(p)
    p.add_argument("--beta-star", choices=("default", "zero"), default="default")
    p.add_argument("--n-patients", type=int)

    p = sub.add_parser("stain", help="PNG tiles to HE concentrations")
    _common(p)
    p.add_argument("--images", nargs="+", required=True)

    p = sub.add_parser("train", help="fit the embedding codec")
    _common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--patches", required=True)
    p.add_argument("--targets")

    p = sub.add_parser("cluster", help="spherical k-means on embeddings")
    _common(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--patches", required=True)

    p = sub.add_parser("describe", help="patient descriptors from assignments")
    _common(p)
    p.add_argument("--assignments", required=True)
    p.add_argument("--patches", required=True)

    p = sub.add_parser("select", help="forward selection by likelihood ratio")
    _common(p)
    p.add_argument("--descriptors", required=True)
    p.add_argument("--patients", required=True)

    p = sub.add_parser("evaluate", help="LOOCV predictors and metrics")
    _common(p)
    p.add_argument("--descriptors", required=True)
    p.add_argument("--patients", required=True)
    p.add_argument("--selection", required=True)

    p = sub.add_parser("km", help="Kaplan-Meier curves and log-rank test")
    _common(p)
    p.add_argument("--patients", required=True)
    p.add_argument("--groups", default="median-split")
    p.add_argument("--predictions")

    p = sub.add_parser("pipeline", help="synth -> train -> cluster -> describe -> select -> evaluate -> km")
    _common(p)
    p.add_argument("--beta-star", choices=("default", "zero"), default="default")
    p.add_argument("--n-patients", type=int)

    p = sub.add_parser("replay", help="re-run a stage from its manifest and compare outputs")
    p.add_argument("manifest")
    p.add_argument("--out", help="directory for the re-run (default: a temporary directory)")
    return ap


def _config_from_args(args) -> PipelineConfig:
    overrides = {k: getattr(args, k, None) for k in
                 ("seed", "k", "tau", "lam", "alpha", "rounds", "neighborhood", "brier_time")}
    return load_config(args.config, overrides)


def run_stage(name, argv, args) -> dict:
    cfg = _config_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = STAGES[name](args, cfg, out)
    written = sorted(_stage_outputs(name, out))
    manifest = {
        "stage": name, "argv": list(argv), "cwd": os.getcwd(), "seed": cfg.seed, "config": cfg.to_dict(),
        "inputs": {str(Path(p).resolve()): sha256(p) for p in inputs},
        "outputs": {n: sha256(out / n) for n in written},
    }
    write_json(out / f"manifest.{name}.json", manifest)
    return manifest


_OUTPUTS = {
    "synth": ("patches.csv", "features.dnrb", "patients.csv", "truth_assignments.csv",
              "truth_descriptors.csv", "beta_star.csv", "synth_report.json"),
    "stain": ("he.dnrb", "stain_report.csv"),
    "train": ("encoder.dnrb", "decoder.dnrb", "bank.dnrb", "embeddings.dnrb", "loss_trace.csv",
              "train_report.json"),
    "cluster": ("centroids.dnrb", "assignments.csv", "cluster_report.json"),
    "describe": ("descriptors.csv",),
    "select": ("selection.csv", "selection_report.json"),
    "evaluate": ("predictions.csv", "metrics.json", "metrics.txt"),
    "km": ("km.csv", "logrank.json", "km.svg"),
}


def _stage_outputs(name, out):
    return [n for n in _OUTPUTS[name] if (out / n).exists()]


def run_pipeline(args, argv_common):
    out = Path(args.out).resolve()
    out.mkdir(parents=True, exist_ok=True)
    o = str(out)
    synth_argv = ["synth", "--out", o, "--beta-star", args.beta_star] + argv_common
    if args.n_patients is not None:
        synth_argv += ["--n-patients", str(args.n_patients)]
    steps = [
        synth_argv,
        ["train", "--out", o, "--features", f"{o}/features.dnrb", "--patches", f"{o}/patches.csv"] + argv_common,
        ["cluster", "--out", o, "--embeddings", f"{o}/embeddings.dnrb", "--patches", f"{o}/patches.csv"]
        + argv_common,
        ["describe", "--out", o, "--assignments", f"{o}/assignments.csv", "--patches", f"{o}/patches.csv"]
        + argv_common,
        ["select", "--out", o, "--descriptors", f"{o}/descriptors.csv", "--patients", f"{o}/patients.csv"]
        + argv_common,
        ["evaluate", "--out", o, "--descriptors", f"{o}/descriptors.csv", "--patients", f"{o}/patients.csv",
         "--selection", f"{o}/selection.csv"] + argv_common,
        ["km", "--out", o, "--patients", f"{o}/patients.csv", "--groups", "median-split",
         "--predictions", f"{o}/predictions.csv"] + argv_common,
    ]
    parser = build_parser()
    for step in steps:
        log.info("stage %s", step[0])
        sub_args = parser.parse_args(step)
        run_stage(step[0], step, sub_args)


def _common_argv(args):
    """Re-serialize the shared flags so pipeline stages see the same settings."""
    out = []
    if args.config:
        out += ["--config", str(Path(args.config).resolve())]
    for flag, attr in (("--seed", "seed"), ("--k", "k"), ("--tau", "tau"), ("--lambda", "lam"),
                       ("--alpha", "alpha"), ("--rounds", "rounds"), ("--neighborhood", "neighborhood"),
                       ("--brier-time", "brier_time")):
        v = getattr(args, attr, None)
        if v is not None:
            out += [flag, str(v)]
    if args.plot:
        out.append("--plot")
    return out


def replay(manifest_path, out_dir=None) -> tuple[bool, dict]:
    """Re-run the stage recorded in a manifest; returns (identical, per-file status)."""
    mpath = Path(manifest_path)
    if not mpath.exists():
        raise InvalidInput(f"{mpath}: manifest not found")
    man = json.loads(mpath.read_text(encoding="utf-8"))
    for p, digest in man["inputs"].items():
        if not Path(p).exists() or sha256(p) != digest:
            raise InvalidInput(f"{mpath}: input {p} is missing or changed since the recorded run")
    tmp = None
    if out_dir is None:
        tmp = tempfile.mkdtemp(prefix="dnrsurv-replay-")
        out_dir = tmp
    argv = list(man["argv"])
    argv[argv.index("--out") + 1] = str(Path(out_dir).resolve())
    cwd = os.getcwd()
    try:
        os.chdir(man["cwd"])
        args = build_parser().parse_args(argv)
        new = run_stage(man["stage"], argv, args)
    finally:
        os.chdir(cwd)
    status = {n: new["outputs"].get(n) == h for n, h in man["outputs"].items()}
    return all(status.values()) and set(new["outputs"]) == set(man["outputs"]), status


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            ok, status = replay(args.manifest, args.out)
            for name, same in sorted(status.items()):
                print(f"{'identical' if same else 'DIFFERENT'} {name}")
            return 0 if ok else 2
        if args.command == "pipeline":
            run_pipeline(args, _common_argv(args))
            return 0
        run_stage(args.command, argv, args)
        return 0
    except NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InvalidInput, DnrError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
