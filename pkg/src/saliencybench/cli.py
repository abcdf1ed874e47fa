"""Command-line entry point.

Subcommands: dataset-gen, train, explain, evaluate, cleverhans, bridge-check.
Every run is driven by a JSON config (--config) plus --out, --workers and
--seed-override; the log level comes from SALIENCYBENCH_LOG. Exit codes:
0 success, 1 failed checks, 2 config error, 3 all requested methods lacked a
capability, 4 I/O error.

Evaluation fans (sample, method) tasks over a fork-based worker pool; results
are merged in a fixed order so the emitted CSV bytes do not depend on the
worker count, and a crashing task only excludes its own cell.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import bridge as bridge_mod
from . import figures
from .diagnostics import (
    CleverHansCriteria,
    DiagnosticSample,
    aggregate_report,
    detect_clever_hans,
)
from .errors import (
    CapabilityMissingError,
    ConfigError,
    EmptySalientAreaError,
    IOFormatError,
    MissingMasksError,
    SaliencyBenchError,
)
from .metrics import (
    CfPair,
    PerturbationSpec,
    aggregate,
    class_sensitivity,
    constant_reference,
    global_contribution,
    idr,
    insertion_auc,
    iosr,
    max_sensitivity,
    mcr,
    mcs,
    pointing_game,
    sensitivity_radius_sweep,
)
from .model import MicroCnnConfig, load_model, save_model, train_micro_cnn
from .report import MetricRow, write_curve_csv, write_report_csv, write_report_json
from .saliency import METHOD_NAMES, build_explainer, export_pgm, save_saliency
from .synth import GeneratorConfig, generate_dataset, load_dataset, pairs_from_records, write_dataset

log = logging.getLogger("saliencybench")

PER_SAMPLE_METRICS = ("pg", "iosr", "iauc", "sco", "cs", "sens")
DATASET_METRICS = ("gco", "mcs", "mcr", "idr")
EXIT_CHECKS_FAILED = 1
EXIT_CONFIG = 2
EXIT_CAPABILITY = 3
EXIT_IO = 4


def _setup_logging() -> None:
    level = os.environ.get("SALIENCYBENCH_LOG", "WARNING").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        level = "WARNING"
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IOFormatError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"config is missing required key {key!r}")
    return cfg[key]


def _apply_seed_override(cfg: dict, override) -> dict:
    if override is not None:
        cfg = dict(cfg)
        cfg["seed"] = int(override)
    return cfg


def _class_index(record, source: str) -> int:
    if source == "object":
        return record.object_label
    if source == "scene":
        return record.scene_label
    raise ConfigError(f"unknown class source {source!r}")


def _select_records(records, cfg: dict):
    records = [r for r in records if r.has_cf] if cfg.get("with_cf_only", True) else records
    limit = cfg.get("limit")
    if limit is not None:
        records = records[: int(limit)]
    if not records:
        raise ConfigError("no records selected from the dataset")
    return records


def _record_stem(record) -> str:
    return f"{record.pair_id}_{'cf' if record.has_cf else 'bg'}"


# ---------------------------------------------------------------------------
# dataset-gen / train

def cmd_dataset_gen(cfg: dict, out: str, workers: int) -> int:
    gen = GeneratorConfig.from_dict(cfg)
    records = generate_dataset(gen)
    manifest = write_dataset(records, out)
    log.info("wrote %d records under %s", len(records), out)
    print(str(manifest))
    return 0


def cmd_train(cfg: dict, out: str, workers: int) -> int:
    manifest = _require(cfg, "dataset")
    label_kind = cfg.get("label", "object")
    if label_kind not in ("object", "scene"):
        raise ConfigError("label must be 'object' or 'scene'")
    records = _select_records(load_dataset(manifest), cfg)
    images = np.stack([r.image.array for r in records])
    labels = np.array([_class_index(r, label_kind) for r in records])

    seed = int(cfg.get("seed", 0))
    val_fraction = float(cfg.get("val_fraction", 0.0))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(records))
    n_val = int(round(val_fraction * len(records)))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if len(train_idx) == 0:
        raise ConfigError("val_fraction leaves no training data")

    arch = cfg.get("arch", {})
    model_cfg = MicroCnnConfig(
        in_channels=images.shape[1],
        image_size=images.shape[2],
        conv_channels=tuple(arch.get("conv_channels", (8, 16))),
        dense_units=tuple(arch.get("dense_units", (64,))),
        num_classes=int(cfg.get("num_classes", labels.max() + 1)),
    )
    result = train_micro_cnn(
        images[train_idx], labels[train_idx],
        epochs=int(cfg.get("epochs", 5)),
        learning_rate=float(cfg.get("learning_rate", 0.05)),
        seed=seed, config=model_cfg,
        batch_size=int(cfg.get("batch_size", 32)),
    )
    summary = {"model": str(out), "train_accuracy": result.train_accuracy,
               "epoch_losses": result.epoch_losses, "n_train": int(len(train_idx))}
    if n_val:
        logits = result.model.logits_batch(images[val_idx])
        summary["val_accuracy"] = float(
            (logits.argmax(axis=1) == labels[val_idx]).mean())
        summary["n_val"] = int(n_val)
    save_model(result.model, out)
    print(json.dumps(summary, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# worker pool plumbing

_WORKER_STATE: dict = {}


def _resolve_model(ref):
    """Load a model from a path, or attach to one behind a bridge command.

    Returns (model, client); the client is None for on-disk models and must
    be closed by the caller otherwise. Bridged models share a single child
    process, so runs against them are forced onto one worker.
    """
    if isinstance(ref, str):
        return load_model(ref), None
    if isinstance(ref, dict) and isinstance(ref.get("bridge"), list):
        client = bridge_mod.BridgeClient(ref["bridge"],
                                         timeout=float(ref.get("timeout", 30.0)))
        return bridge_mod.BridgedModel(client), client
    raise ConfigError("model must be a file path or {'bridge': [argv...]}")


def _pool_map(fn, tasks, workers: int):
    if workers <= 1:
        return [fn(t) for t in tasks]
    ctx = get_context("fork")  # workers inherit _WORKER_STATE from the parent
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (workers * 4) or 1)))


def _build_method_explainer(method: str, cfg: dict):
    return build_explainer(method, seed=int(cfg.get("seed", 0)),
                           params=cfg.get("params", {}).get(method))


def _insertion_reference(cfg: dict, image):
    ins = cfg.get("params", {}).get("insertion", {})
    if ins.get("reference", "blur") == "zero":
        return constant_reference(image, float(ins.get("value", 0.0)))
    return None  # metric default: blurred copy


def _explain_task(task):
    idx, method = task
    state = _WORKER_STATE
    cfg, record = state["cfg"], state["records"][idx]
    out = Path(state["out"])
    stem = _record_stem(record)
    c = _class_index(record, cfg.get("class_source", "object"))
    try:
        smap = _build_method_explainer(method, cfg)(state["model"], record.image, c)
    except CapabilityMissingError as exc:
        return {"idx": idx, "method": method, "status": "capability_missing",
                "error": str(exc)}
    except Exception as exc:
        log.warning("explain %s/%s failed: %s", stem, method, exc)
        return {"idx": idx, "method": method, "status": "error", "error": str(exc)}
    map_rel = f"maps/{stem}_{method}.sbsm"
    save_saliency(smap, out / map_rel)
    pgm_rel = ""
    if cfg.get("export_pgm", True):
        pgm_rel = f"maps/{stem}_{method}.pgm"
        export_pgm(smap, out / pgm_rel)
    return {"idx": idx, "method": method, "status": "ok", "map": map_rel,
            "pgm": pgm_rel, "scores": smap.scores}


def cmd_explain(cfg: dict, out: str, workers: int) -> int:
    model, client = _resolve_model(_require(cfg, "model"))
    try:
        return _run_explain(cfg, out, 1 if client else workers, model)
    finally:
        if client:
            client.close()


def _run_explain(cfg: dict, out: str, workers: int, model) -> int:
    records = _select_records(load_dataset(_require(cfg, "dataset")), cfg)
    methods = list(cfg.get("methods", METHOD_NAMES))
    unknown = [m for m in methods if m not in METHOD_NAMES + ("random",)]
    if unknown:
        raise ConfigError(f"unknown methods: {unknown}")

    out_dir = Path(out)
    (out_dir / "maps").mkdir(parents=True, exist_ok=True)
    _WORKER_STATE.update(model=model, records=records, cfg=cfg, out=str(out_dir))
    tasks = [(i, m) for i in range(len(records)) for m in methods]
    results = _pool_map(_explain_task, tasks, workers)

    index_rows = []
    per_sample_maps: dict = {}
    for res in sorted(results, key=lambda r: (r["idx"], r["method"])):
        stem = _record_stem(records[res["idx"]])
        index_rows.append([stem, res["method"], res.get("map", ""),
                           res.get("pgm", ""), res["status"],
                           res.get("error", "")])
        if res["status"] == "ok":
            per_sample_maps.setdefault(res["idx"], {})[res["method"]] = res["scores"]
    write_curve_csv(out_dir / "index.csv",
                    ("sample_id", "method", "map", "pgm", "status", "error"),
                    index_rows)
    if cfg.get("figures", True):
        (out_dir / "figures").mkdir(exist_ok=True)
        for idx, maps in sorted(per_sample_maps.items()):
            stem = _record_stem(records[idx])
            figures.plot_saliency_grid(records[idx].image.array, maps,
                                       out_dir / "figures" / f"{stem}.png")

    statuses = {r["status"] for r in results}
    if statuses and statuses <= {"capability_missing"}:
        log.error("every requested method lacked a capability")
        return EXIT_CAPABILITY
    return 0


# ---------------------------------------------------------------------------
# evaluate

def _eval_task(task):
    idx, method = task
    state = _WORKER_STATE
    cfg, record = state["cfg"], state["records"][idx]
    model = state["model"]
    metrics = state["per_sample_metrics"]
    c = _class_index(record, cfg.get("class_source", "object"))
    values: dict = {}
    curve = None
    errors = []
    try:
        explainer = _build_method_explainer(method, cfg)
        smap = None
        if any(m in metrics for m in ("pg", "iosr", "iauc", "sco")):
            smap = explainer(model, record.image, c)
        if "pg" in metrics:
            values["pg"] = 1.0 if pointing_game(smap, record.cf_mask) else 0.0
        if "iosr" in metrics:
            theta = float(cfg.get("params", {}).get("iosr", {}).get("theta", 0.5))
            try:
                values["iosr"] = iosr(smap, record.cf_mask, theta)
            except EmptySalientAreaError:
                values["iosr"] = None
        if "sco" in metrics:
            from .metrics import concept_contribution
            values["sco"] = concept_contribution(smap, record.cf_mask)
        if "iauc" in metrics:
            steps = int(cfg.get("params", {}).get("insertion", {}).get("steps", 100))
            ref = _insertion_reference(cfg, record.image)
            ic = insertion_auc(model, record.image, c, smap, reference=ref, steps=steps)
            values["iauc"] = ic.iauc
            if idx in state["curve_indices"]:
                curve = (ic.fractions.tolist(), ic.scores.tolist())
        if "cs" in metrics:
            values["cs"] = class_sensitivity(model, explainer, record.image)
        if "sens" in metrics:
            sens_cfg = cfg.get("params", {}).get("sens", {})
            spec = PerturbationSpec(
                radius=float(sens_cfg.get("radius", 0.2)),
                sample_count=int(sens_cfg.get("sample_count", 10)),
                seed=int(cfg.get("seed", 0)))
            values["sens"] = max_sensitivity(model, explainer, record.image, c, spec)
    except CapabilityMissingError as exc:
        return {"idx": idx, "method": method, "values": {m: None for m in metrics},
                "curve": None, "errors": [f"capability: {exc}"],
                "capability_missing": True}
    except Exception as exc:
        log.warning("evaluate %s/%s failed: %s", _record_stem(record), method, exc)
        values = {m: None for m in metrics}
        errors.append(str(exc))
    for m in metrics:
        values.setdefault(m, None)
    return {"idx": idx, "method": method, "values": values, "curve": curve,
            "errors": errors, "capability_missing": False}


def _dataset_metric_rows(cfg, dataset_name, model, records, methods, metrics, seed):
    """gco / mcs / mcr / idr evaluated over the whole selection per method."""
    rows = []
    class_source = cfg.get("class_source", "object")
    images = [r.image for r in records]
    masks = [r.cf_mask for r in records]
    labels = [_class_index(r, class_source) for r in records]

    model_o = model_s = None
    if "mcs" in metrics or "mcr" in metrics:
        model_o = load_model(_require(cfg, "model_object"))
        model_s = load_model(_require(cfg, "model_scene"))

    pairs = None
    if "idr" in metrics:
        all_pairs = pairs_from_records(load_dataset(_require(cfg, "dataset")))
        limit = cfg.get("limit")
        if limit is not None:
            all_pairs = all_pairs[: int(limit)]
        idr_source = cfg.get("idr_class_source", "scene")
        pairs = [CfPair(w.image, t.image, w.cf_mask, _class_index(w, idr_source))
                 for w, t in all_pairs]

    for method in methods:
        explainer = _build_method_explainer(method, cfg)

        def add(metric, value, n_inc, n_exc):
            rows.append(MetricRow(dataset_name, model.model_id, method, metric,
                                  "", value, n_inc, n_exc, seed))

        try:
            if "gco" in metrics:
                g = global_contribution(model, explainer, images, masks, labels)
                add("gco", g.value, g.n_included, g.n_total - g.n_included)
            if "mcs" in metrics:
                g_o = global_contribution(model_o, explainer, images, masks,
                                          [r.object_label for r in records])
                g_s = global_contribution(model_s, explainer, images, masks,
                                          [r.scene_label for r in records])
                add("mcs", mcs(g_o.value, g_s.value),
                    min(g_o.n_included, g_s.n_included), 0)
            if "mcr" in metrics:
                res = mcr(model_o, model_s, explainer, images, masks,
                          [r.object_label for r in records],
                          [r.scene_label for r in records])
                add("mcr", res.value, res.n_included, res.n_excluded)
            if "idr" in metrics:
                res = idr(model, explainer, pairs)
                add("idr", res.value, res.n_pairs, 0)
        except CapabilityMissingError as exc:
            log.warning("dataset metrics for %s skipped: %s", method, exc)
            for metric in [m for m in ("gco", "mcs", "mcr", "idr") if m in metrics]:
                add(metric, None, 0, len(records))
        except SaliencyBenchError as exc:
            log.warning("dataset metrics for %s failed: %s", method, exc)
            for metric in [m for m in ("gco", "mcs", "mcr", "idr") if m in metrics]:
                add(metric, None, 0, len(records))
    return rows


def cmd_evaluate(cfg: dict, out: str, workers: int) -> int:
    model, client = _resolve_model(_require(cfg, "model"))
    try:
        return _run_evaluate(cfg, out, 1 if client else workers, model)
    finally:
        if client:
            client.close()


def _run_evaluate(cfg: dict, out: str, workers: int, model) -> int:
    records = _select_records(load_dataset(_require(cfg, "dataset")), cfg)
    methods = list(_require(cfg, "methods"))
    metrics = list(_require(cfg, "metrics"))
    unknown = [m for m in methods if m not in METHOD_NAMES + ("random",)]
    if unknown:
        raise ConfigError(f"unknown methods: {unknown}")
    unknown = [m for m in metrics if m not in PER_SAMPLE_METRICS + DATASET_METRICS]
    if unknown:
        raise ConfigError(f"unknown metrics: {unknown}")
    seed = int(cfg.get("seed", 0))
    dataset_name = Path(_require(cfg, "dataset")).resolve().parent.name

    per_sample = [m for m in metrics if m in PER_SAMPLE_METRICS]
    dataset_level = [m for m in metrics if m in DATASET_METRICS]
    needs_mask = {"pg", "iosr", "sco"} & set(per_sample)
    if needs_mask and any(r.cf_mask is None for r in records):
        raise ConfigError("selected records lack masks needed by "
                          + ", ".join(sorted(needs_mask)))

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    capability_failures = 0
    results = []
    if per_sample:
        curve_indices = set(range(min(int(cfg.get("curve_samples", 5)), len(records))))
        _WORKER_STATE.update(model=model, records=records, cfg=cfg,
                             per_sample_metrics=per_sample,
                             curve_indices=curve_indices)
        tasks = [(i, m) for i in range(len(records)) for m in methods]
        results = _pool_map(_eval_task, tasks, workers)
        results.sort(key=lambda r: (r["method"], r["idx"]))
        capability_failures = sum(1 for r in results if r["capability_missing"])

        for metric in per_sample:
            for res in results:
                value = res["values"][metric]
                rows.append(MetricRow(
                    dataset_name, model.model_id, res["method"], metric,
                    _record_stem(records[res["idx"]]), value,
                    1 if value is not None else 0,
                    0 if value is not None else 1, seed))
        for method in methods:
            for metric in per_sample:
                agg = aggregate([r["values"][metric] for r in results
                                 if r["method"] == method])
                rows.append(MetricRow(dataset_name, model.model_id, method, metric,
                                      "", None if agg.n_included == 0 else agg.mean,
                                      agg.n_included, agg.n_excluded, seed))

    if dataset_level:
        rows.extend(_dataset_metric_rows(cfg, dataset_name, model, records,
                                         methods, dataset_level, seed))

    rows.sort(key=lambda r: (r.method, r.metric, r.sample_id == "", r.sample_id))
    write_report_csv(rows, out_dir / "report.csv")
    write_report_json(rows, out_dir / "report.json")

    # curve exports and figures for the leading samples
    curve_dir = out_dir / "curves"
    fig_dir = out_dir / "figures"
    by_sample: dict = {}
    for res in results:
        if res.get("curve"):
            by_sample.setdefault(res["idx"], {})[res["method"]] = res["curve"]
    if by_sample:
        curve_dir.mkdir(exist_ok=True)
        fig_dir.mkdir(exist_ok=True)
        for idx, curves in sorted(by_sample.items()):
            stem = _record_stem(records[idx])
            for method, (fractions, scores) in sorted(curves.items()):
                write_curve_csv(curve_dir / f"insertion_{stem}_{method}.csv",
                                ("fraction", "score"),
                                list(zip(fractions, scores)))

            class _C:
                def __init__(self, fr, sc):
                    self.fractions, self.scores = fr, sc

            figures.plot_insertion_curves(
                {m: _C(fr, sc) for m, (fr, sc) in curves.items()},
                fig_dir / f"insertion_{stem}.png", title=stem)

    sweep_cfg = cfg.get("params", {}).get("sens", {})
    if "sens" in per_sample and sweep_cfg.get("radii"):
        fig_dir.mkdir(exist_ok=True)
        curve_dir.mkdir(exist_ok=True)
        radii = [float(r) for r in sweep_cfg["radii"]]
        k = int(sweep_cfg.get("sample_count", 10))
        sweeps = {}
        rec = records[0]
        c = _class_index(rec, cfg.get("class_source", "object"))
        for method in methods:
            try:
                sweeps[method] = sensitivity_radius_sweep(
                    model, _build_method_explainer(method, cfg), rec.image, c,
                    radii, sample_count=k, seed=seed)
            except SaliencyBenchError as exc:
                log.warning("sweep for %s skipped: %s", method, exc)
        for method, sweep in sorted(sweeps.items()):
            write_curve_csv(curve_dir / f"sens_sweep_{method}.csv",
                            ("radius", "value"), [(r, v) for r, v in sweep])
        if sweeps:
            figures.plot_sensitivity_sweep(sweeps, fig_dir / "sens_sweep.png")

    agg_rows = [r for r in rows if r.sample_id == "" and r.value is not None]
    if agg_rows:
        fig_dir.mkdir(exist_ok=True)
        figures.plot_metric_bars(aggregate_report(
            [r for r in rows if r.sample_id != ""] or agg_rows),
            fig_dir / "metrics.png")

    if per_sample and results and capability_failures == len(results):
        log.error("every requested method lacked a capability")
        return EXIT_CAPABILITY
    return 0


# ---------------------------------------------------------------------------
# cleverhans

def cmd_cleverhans(cfg: dict, out: str, workers: int) -> int:
    model, client = _resolve_model(_require(cfg, "model"))
    try:
        return _run_cleverhans(cfg, out, model)
    finally:
        if client:
            client.close()


def _run_cleverhans(cfg: dict, out: str, model) -> int:
    records = _select_records(load_dataset(_require(cfg, "dataset")), cfg)
    method = cfg.get("method", "gradcam")
    if method not in METHOD_NAMES + ("random",):
        raise ConfigError(f"unknown method {method!r}")
    criteria = CleverHansCriteria(**cfg.get("criteria", {}))
    class_source = cfg.get("class_source", "object")
    seed = int(cfg.get("seed", 0))

    samples = []
    for rec in records:
        if rec.cf_mask is None:
            raise MissingMasksError(f"record {rec.pair_id} has no mask")
        samples.append(DiagnosticSample(
            sample_id=_record_stem(rec), image=rec.image,
            class_index=_class_index(rec, class_source), gt_mask=rec.cf_mask))

    explainer = _build_method_explainer(method, cfg)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    counters: dict = {}
    findings = detect_clever_hans(model, explainer, samples, criteria, counters)

    # confidences for the scatter; localization only where it was screened
    points = []
    by_id = {s.sample_id: s for s in samples}
    for s in samples:
        conf = float(model.predict(s.image)[s.class_index])
        if conf > criteria.theta_confidence:
            try:
                smap = explainer(model, s.image, s.class_index)
                if criteria.localization_metric == "pg":
                    loc = 1.0 if pointing_game(smap, s.gt_mask) else 0.0
                else:
                    loc = iosr(smap, s.gt_mask, criteria.iosr_theta)
                points.append((conf, loc))
            except SaliencyBenchError:
                pass

    (out_dir / "maps").mkdir(exist_ok=True)
    enriched = []
    for f in findings:
        rel = f"maps/{f.sample_id}_{method}.sbsm"
        sample = by_id[f.sample_id]
        save_saliency(explainer(model, sample.image, sample.class_index),
                      out_dir / rel)
        enriched.append(type(f)(sample_id=f.sample_id, class_index=f.class_index,
                                confidence=f.confidence, localization=f.localization,
                                faithfulness=f.faithfulness, saliency_path=rel))

    with open(out_dir / "findings.jsonl", "w") as fh:
        for f in enriched:
            fh.write(json.dumps(f.to_dict(), sort_keys=True) + "\n")
    write_curve_csv(out_dir / "findings.csv",
                    ("sample_id", "class_index", "confidence", "localization",
                     "faithfulness", "saliency_path"),
                    [[f.sample_id, f.class_index, format(f.confidence, ".9g"),
                      format(f.localization, ".9g"), format(f.faithfulness, ".9g"),
                      f.saliency_path] for f in enriched])
    (out_dir / "criteria.json").write_text(
        json.dumps({"criteria": criteria.to_dict(), "method": method,
                    "counters": counters, "n_samples": len(samples),
                    "n_findings": len(enriched), "seed": seed},
                   indent=2, sort_keys=True) + "\n")
    figures.plot_cleverhans_scatter(points, enriched, criteria,
                                    out_dir / "scatter.png")
    log.info("%d finding(s) out of %d samples", len(enriched), len(samples))
    return 0


# ---------------------------------------------------------------------------
# bridge-check

def cmd_bridge_check(cfg: dict, out: str | None, workers: int) -> int:
    command = _require(cfg, "command")
    if not isinstance(command, list) or not command:
        raise ConfigError("'command' must be a non-empty argv list")
    n_images = int(cfg.get("images", 20))
    seed = int(cfg.get("seed", 0))
    tol = cfg.get("tolerance", {})
    tol_predict = float(tol.get("predict", 1e-5))
    tol_gradient = float(tol.get("gradient", 1e-4))
    reference = None
    if cfg.get("reference_model"):
        reference = load_model(cfg["reference_model"])

    checks = []

    def check(name, ok, detail=""):
        checks.append({"name": name, "ok": bool(ok), "detail": detail})
        print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" ({detail})" if detail else ""))

    from .tensors import Image

    with bridge_mod.BridgeClient(command, timeout=float(cfg.get("timeout", 30))) as client:
        model = bridge_mod.BridgedModel(client)
        check("handshake version", True, bridge_mod.PROTOCOL_VERSION)
        rng = np.random.default_rng(seed)
        images = [Image(rng.uniform(0, 1, model.input_shape)) for _ in range(n_images)]

        sums_ok, det_ok = True, True
        max_pdiff, max_gdiff = 0.0, 0.0
        for img in images:
            p1 = model.predict(img)
            p2 = model.predict(img)
            sums_ok &= abs(float(p1.sum()) - 1.0) <= 1e-4 and (p1 >= 0).all()
            det_ok &= np.array_equal(p1, p2)
            if reference is not None:
                max_pdiff = max(max_pdiff, float(np.abs(p1 - reference.predict(img)).max()))
                from .model import Capability
                if Capability.INPUT_GRAD in model.capabilities:
                    c = int(rng.integers(model.num_classes))
                    g = model.input_gradient(img, c)
                    max_gdiff = max(max_gdiff, float(
                        np.abs(g - reference.input_gradient(img, c)).max()))
        check("probabilities sum to 1 +/- 1e-4", sums_ok)
        check("deterministic predict", det_ok)
        if reference is not None:
            check(f"predict matches reference within {tol_predict}",
                  max_pdiff <= tol_predict, f"max diff {max_pdiff:.3g}")
            from .model import Capability
            if Capability.INPUT_GRAD in model.capabilities:
                check(f"gradient matches reference within {tol_gradient}",
                      max_gdiff <= tol_gradient, f"max diff {max_gdiff:.3g}")

    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "bridge_check.json").write_text(
            json.dumps({"checks": checks}, indent=2, sort_keys=True) + "\n")
    return 0 if all(c["ok"] for c in checks) else EXIT_CHECKS_FAILED


# ---------------------------------------------------------------------------

COMMANDS = {
    "dataset-gen": (cmd_dataset_gen, True),
    "train": (cmd_train, True),
    "explain": (cmd_explain, True),
    "evaluate": (cmd_evaluate, True),
    "cleverhans": (cmd_cleverhans, True),
    "bridge-check": (cmd_bridge_check, False),
}


def main(argv=None) -> int:
    _setup_logging()
    parser = argparse.ArgumentParser(
        prog="saliencybench",
        description="saliency explanations, their evaluation, and shortcut "
                    "diagnostics for small image classifiers")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, needs_out) in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", required=needs_out,
                       help="output file or directory")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--seed-override", type=int, default=None)
    args = parser.parse_args(argv)

    fn, _ = COMMANDS[args.command]
    try:
        cfg = _apply_seed_override(_load_config(args.config), args.seed_override)
        return fn(cfg, args.out, max(1, args.workers))
    except ConfigError as exc:
        log.error("config error: %s", exc)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingMasksError,) as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapabilityMissingError as exc:
        print(f"capability error: {exc}", file=sys.stderr)
        return EXIT_CAPABILITY
    except (IOFormatError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
