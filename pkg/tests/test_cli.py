"""Command-line workflows end to end: generate, train, explain, evaluate,
diagnose, and bridge-check inside a temporary directory."""

import json
import sys
import textwrap
from pathlib import Path

import pytest

from saliencybench.cli import main


def run(*argv):
    return main([str(a) for a in argv])


def write_json(path, payload):
    path.write_text(json.dumps(payload))
    return path


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A dataset plus object- and scene-label models, built once."""
    root = tmp_path_factory.mktemp("cli")
    gen = write_json(root / "gen.json", {
        "n_object_classes": 3, "n_scene_classes": 3, "image_size": 32,
        "samples_per_combined_label": 2, "seed": 7,
    })
    assert run("dataset-gen", "--config", gen, "--out", root / "data") == 0
    manifest = root / "data" / "manifest.jsonl"
    assert manifest.exists()

    arch = {"conv_channels": [4, 8], "dense_units": [32]}
    for label, seed in (("object", 1), ("scene", 2)):
        cfg = write_json(root / f"train_{label}.json", {
            "dataset": str(manifest), "label": label, "epochs": 3,
            "learning_rate": 0.05, "seed": seed, "val_fraction": 0.2,
            "num_classes": 3, "arch": arch,
        })
        assert run("train", "--config", cfg,
                   "--out", root / f"model_{label}.sbmc") == 0
    return root


def eval_config(workdir, **overrides):
    cfg = {
        "model": str(workdir / "model_object.sbmc"),
        "model_object": str(workdir / "model_object.sbmc"),
        "model_scene": str(workdir / "model_scene.sbmc"),
        "dataset": str(workdir / "data" / "manifest.jsonl"),
        "methods": ["gradient", "random"],
        "metrics": ["pg", "iosr", "iauc", "cs", "gco", "idr"],
        "limit": 3, "seed": 5, "curve_samples": 1,
        "params": {"insertion": {"steps": 16}},
    }
    cfg.update(overrides)
    return cfg


# ---------------------------------------------------------------------------
# happy paths

def test_dataset_has_paired_records(workdir):
    lines = (workdir / "data" / "manifest.jsonl").read_text().splitlines()
    records = [json.loads(l) for l in lines]
    assert len(records) == 3 * 3 * 2 * 2
    assert sum(r["has_cf"] for r in records) == 3 * 3 * 2
    suffixes = {Path(r["image"]).stem.rsplit("_", 1)[1] for r in records}
    assert suffixes == {"cf", "bg"}


def test_explain_writes_maps_and_figures(workdir, tmp_path):
    cfg = write_json(tmp_path / "explain.json", {
        "model": str(workdir / "model_object.sbmc"),
        "dataset": str(workdir / "data" / "manifest.jsonl"),
        "methods": ["gradient", "occlusion"],
        "limit": 2, "seed": 3,
        "params": {"occlusion": {"patch_size": 8, "stride": 8}},
    })
    out = tmp_path / "explain"
    assert run("explain", "--config", cfg, "--out", out) == 0
    index = (out / "index.csv").read_text().splitlines()
    assert len(index) == 1 + 2 * 2  # header, two samples x two methods
    sbsm = sorted(p.name for p in (out / "maps").glob("*.sbsm"))
    assert len(sbsm) == 4
    assert len(list((out / "maps").glob("*.pgm"))) == 4
    assert len(list((out / "figures").glob("*.png"))) == 2


def test_evaluate_is_deterministic_across_workers(workdir, tmp_path):
    cfg = write_json(tmp_path / "eval.json", eval_config(workdir))
    outs = {}
    for name, workers in (("w1", 1), ("w2", 2), ("w1b", 1)):
        out = tmp_path / name
        assert run("evaluate", "--config", cfg, "--out", out,
                   "--workers", workers) == 0
        outs[name] = (out / "report.csv").read_bytes()
    assert outs["w1"] == outs["w2"]
    assert outs["w1"] == outs["w1b"]


def test_evaluate_writes_reports_curves_and_figures(workdir, tmp_path):
    cfg = write_json(tmp_path / "eval.json", eval_config(
        workdir, params={"insertion": {"steps": 16},
                         "sens": {"radius": 0.1, "sample_count": 3,
                                  "radii": [0.05, 0.1]}},
        metrics=["pg", "iauc", "sens"]))
    out = tmp_path / "eval"
    assert run("evaluate", "--config", cfg, "--out", out) == 0
    rows = json.loads((out / "report.json").read_text())
    assert {row["method"] for row in rows} == {"gradient", "random"}
    assert any(row["sample_id"] == "" for row in rows)  # aggregate rows
    assert list((out / "curves").glob("insertion_*_gradient.csv"))
    assert list((out / "curves").glob("sens_sweep_gradient.csv"))
    assert (out / "figures" / "metrics.png").exists()
    assert (out / "figures" / "sens_sweep.png").exists()
    assert list((out / "figures").glob("insertion_*.png"))


def test_seed_override_changes_stochastic_maps(workdir, tmp_path):
    cfg = write_json(tmp_path / "explain.json", {
        "model": str(workdir / "model_object.sbmc"),
        "dataset": str(workdir / "data" / "manifest.jsonl"),
        "methods": ["rise"], "limit": 1, "seed": 3,
        "params": {"rise": {"mask_count": 50}},
    })
    payload = {}
    for name, override in (("a", ()), ("b", ("--seed-override", 99)),
                           ("c", ("--seed-override", 99))):
        out = tmp_path / name
        assert run("explain", "--config", cfg, "--out", out, *override) == 0
        payload[name] = (next((out / "maps").glob("*.sbsm"))).read_bytes()
    assert payload["a"] != payload["b"]
    assert payload["b"] == payload["c"]


def test_cleverhans_emits_findings_bundle(workdir, tmp_path):
    cfg = write_json(tmp_path / "ch.json", {
        "model": str(workdir / "model_object.sbmc"),
        "dataset": str(workdir / "data" / "manifest.jsonl"),
        "method": "gradient", "limit": 6, "seed": 5,
        "criteria": {"theta_confidence": 0.3, "theta_localization": 0.6,
                     "theta_faithfulness": 0.001, "insertion_steps": 10},
    })
    out = tmp_path / "ch"
    assert run("cleverhans", "--config", cfg, "--out", out) == 0
    assert (out / "findings.jsonl").exists()
    assert (out / "findings.csv").exists()
    assert (out / "scatter.png").exists()
    summary = json.loads((out / "criteria.json").read_text())
    assert summary["criteria"]["theta_confidence"] == 0.3
    for line in (out / "findings.jsonl").read_text().splitlines():
        finding = json.loads(line)
        assert finding["confidence"] > 0.3
        assert (out / finding["saliency_path"]).exists()


def test_bridge_check_passes_against_reference_host(workdir, tmp_path):
    model = workdir / "model_object.sbmc"
    cfg = write_json(tmp_path / "bc.json", {
        "command": [sys.executable, "-m", "saliencybench.bridge",
                    "--model", str(model)],
        "reference_model": str(model), "images": 3, "seed": 9,
    })
    out = tmp_path / "bc"
    assert run("bridge-check", "--config", cfg, "--out", out) == 0
    summary = json.loads((out / "bridge_check.json").read_text())
    assert len(summary["checks"]) >= 4
    assert all(check["ok"] for check in summary["checks"])


# ---------------------------------------------------------------------------
# failure modes and exit codes

def test_unparseable_config_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    assert run("explain", "--config", bad, "--out", tmp_path / "o") == 2


def test_missing_config_file_exits_4(tmp_path):
    assert run("explain", "--config", tmp_path / "absent.json",
               "--out", tmp_path / "o") == 4


def test_missing_model_file_exits_4(workdir, tmp_path):
    cfg = write_json(tmp_path / "explain.json", {
        "model": str(tmp_path / "absent.sbmc"),
        "dataset": str(workdir / "data" / "manifest.jsonl"),
        "methods": ["gradient"], "limit": 1, "seed": 3,
    })
    assert run("explain", "--config", cfg, "--out", tmp_path / "o") == 4


def test_unknown_method_exits_2(workdir, tmp_path):
    cfg = write_json(tmp_path / "explain.json", {
        "model": str(workdir / "model_object.sbmc"),
        "dataset": str(workdir / "data" / "manifest.jsonl"),
        "methods": ["mystery"], "limit": 1, "seed": 3,
    })
    assert run("explain", "--config", cfg, "--out", tmp_path / "o") == 2


def test_gradient_methods_over_predict_only_bridge_exit_3(workdir, tmp_path):
    host = tmp_path / "predict_only.py"
    host.write_text(textwrap.dedent("""
        import base64, json, sys
        import numpy as np

        def send(obj):
            sys.stdout.write(json.dumps(obj) + "\\n")
            sys.stdout.flush()

        for line in sys.stdin:
            msg = json.loads(line)
            op, mid = msg.get("op"), msg.get("id")
            if op == "handshake":
                send({"id": mid, "ok": True, "version": "SBBRIDGE/1",
                      "num_classes": 3, "input_shape": [3, 32, 32],
                      "capabilities": ["PREDICT"], "layer_names": [],
                      "model_id": "predict-only"})
            elif op == "predict":
                probs = np.full(3, 1.0 / 3.0, dtype="<f4")
                send({"id": mid, "ok": True,
                      "tensor": {"shape": [3],
                                 "data": base64.b64encode(
                                     probs.tobytes()).decode()}})
            elif op == "shutdown":
                send({"id": mid, "ok": True})
                break
            else:
                send({"id": mid, "ok": False,
                      "error": {"code": "CAPABILITY_MISSING", "message": op}})
    """))
    cfg = write_json(tmp_path / "explain.json", {
        "model": {"bridge": [sys.executable, str(host)], "timeout": 20},
        "dataset": str(workdir / "data" / "manifest.jsonl"),
        "methods": ["gradient", "gbp"], "limit": 1, "seed": 3,
    })
    assert run("explain", "--config", cfg, "--out", tmp_path / "o") == 3
