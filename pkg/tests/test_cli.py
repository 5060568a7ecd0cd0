import json

import numpy as np
import pytest

from hierpose import load_hierarchy, save_annotations, save_library, save_weights
from hierpose.cli import main
from hierpose.scoring import WeightVector

from conftest import annotations_tiny3, library_for, tiny3_doc


@pytest.fixture()
def workspace(tmp_path):
    """Hierarchy, annotations, library, weights, and scene bundles on disk."""
    hierarchy_path = tmp_path / "hierarchy.json"
    hierarchy_path.write_text(json.dumps(tiny3_doc()))
    hierarchy = load_hierarchy(hierarchy_path)

    annotations = annotations_tiny3(4)
    for ann in annotations:
        ann.size = (24, 24)
    annotations_path = tmp_path / "annotations.json"
    save_annotations(annotations, hierarchy, annotations_path)

    library, _ = library_for(hierarchy, annotations)
    library_path = tmp_path / "library.hpel"
    save_library(library, library_path)

    weights = WeightVector.uniform(
        hierarchy, atomic=1.0, pose_appearance=0.3, pose_similarity=0.05
    )
    weights_path = tmp_path / "weights.json"
    save_weights(weights, hierarchy, weights_path)

    synth_config = tmp_path / "synth.json"
    synth_config.write_text(
        json.dumps(
            {
                "hierarchy": "hierarchy.json",
                "annotations": "annotations.json",
                "type_model": {"atomic_bins": 8, "composite_bins": 2, "seed": 0},
                "scenes": {
                    "seeds": [0, 1, 2, 3, 4],
                    "grid": [48, 48],
                    "mix": False,
                    "sigma": 1.5,
                    "amplitude": 0.8,
                },
                "output_dir": "scenes",
            }
        )
    )
    assert main(["synth", str(synth_config)]) == 0
    return tmp_path


def infer_config(workspace, name="infer.json", **overrides):
    doc = {
        "hierarchy": "hierarchy.json",
        "libraries": "library.hpel",
        "weights": "weights.json",
        "score_maps": "scenes/scene_0/maps.hpsm",
        "mode": "full",
        "params": {
            "z": 20,
            "samples_per_level": 300,
            "seed": 7,
            "max_angle": 1.0471975511965976,
            "compatibility_tolerance": 0.1,
            "nms_radius": 2.0,
            "dedup_radius": 2.0,
            "search_radius_fraction": 0.15,
        },
        "output": {"pose": "out/pose.json", "diagnostics": "out/diag.jsonl"},
    }
    doc.update(overrides)
    path = workspace / name
    path.write_text(json.dumps(doc))
    return path


def test_synth_bundles_written(workspace):
    bundles = sorted(p.name for p in (workspace / "scenes").iterdir())
    assert bundles == [f"scene_{i}" for i in range(5)]
    for bundle in bundles:
        root = workspace / "scenes" / bundle
        assert (root / "annotation.json").exists()
        assert (root / "maps.hpsm").exists()
        provenance = json.loads((root / "provenance.json").read_text())
        assert provenance["mix"] is False


def test_synth_regeneration_identical(workspace, tmp_path):
    config = json.loads((workspace / "synth.json").read_text())
    config["output_dir"] = str(tmp_path / "again")
    redo = workspace / "synth2.json"
    redo.write_text(json.dumps(config))
    assert main(["synth", str(redo)]) == 0
    for i in range(5):
        for name in ("annotation.json", "maps.hpsm", "provenance.json"):
            a = (workspace / "scenes" / f"scene_{i}" / name).read_bytes()
            b = (tmp_path / "again" / f"scene_{i}" / name).read_bytes()
            assert a == b


def test_infer_smoke_and_determinism(workspace):
    config = infer_config(workspace)
    assert main(["infer", str(config)]) == 0
    pose_path = workspace / "out" / "pose.json"
    diag_path = workspace / "out" / "diag.jsonl"
    records = json.loads(pose_path.read_text())
    assert len(records) == 1
    assert len(records[0]["parts"]) == 6
    first = (pose_path.read_bytes(), diag_path.read_bytes())
    assert main(["infer", str(config)]) == 0
    assert (pose_path.read_bytes(), diag_path.read_bytes()) == first
    truth = json.loads(
        (workspace / "scenes" / "scene_0" / "annotation.json").read_text()
    )[0]["parts"]
    for name, xy in records[0]["parts"].items():
        assert np.hypot(xy[0] - truth[name][0], xy[1] - truth[name][1]) <= 2.0


def test_infer_missing_maps_exit_1(workspace, capsys):
    config = infer_config(workspace, name="bad.json", score_maps="nowhere.hpsm")
    assert main(["infer", str(config)]) == 1
    assert "nowhere.hpsm" in capsys.readouterr().err


def test_infer_unknown_config_key_rejected(workspace):
    config = infer_config(workspace, name="extra.json", extra_key=1)
    assert main(["infer", str(config)]) == 1


def test_infer_partial_mode_flag(workspace):
    config = infer_config(
        workspace, name="partial.json",
        output={"pose": "out2/pose.json", "diagnostics": "out2/diag.jsonl"},
    )
    assert main(["infer", str(config), "--mode", "partial"]) == 0
    diag = (workspace / "out2" / "diag.jsonl").read_text().strip().splitlines()
    summary = json.loads(diag[-1])
    assert summary["mode"] == "partial"


def train_config(workspace, name="train.json", **overrides):
    doc = {
        "hierarchy": "hierarchy.json",
        "annotations": "annotations.json",
        "score_maps": "scenes/scene_0/maps.hpsm",
        "type_model": {"atomic_bins": 8, "composite_bins": 2, "seed": 0},
        "augment": {"jitter_fraction": 0.03, "copies": 2, "seed": 1},
        "negatives": {"per_positive": 2, "noise_sigma": None, "seed": 2},
        "train": {"c": 5.0, "epochs": 120, "seed": 3, "holdout_fraction": 0.0},
        "output": {"weights": "out/trained.json", "log": "out/train_log.json"},
    }
    doc.update(overrides)
    path = workspace / name
    path.write_text(json.dumps(doc))
    return path


def test_train_smoke_and_determinism(workspace):
    config = train_config(workspace)
    assert main(["train", str(config)]) == 0
    weights_path = workspace / "out" / "trained.json"
    log_path = workspace / "out" / "train_log.json"
    doc = json.loads(weights_path.read_text())
    for section in ("atomic", "pose_appearance", "pose_similarity"):
        assert all(v >= 0 for v in doc[section].values())
    first = (weights_path.read_bytes(), log_path.read_bytes())
    assert main(["train", str(config)]) == 0
    assert (weights_path.read_bytes(), log_path.read_bytes()) == first


def test_train_empty_annotations_exit_1(workspace):
    (workspace / "empty.json").write_text("[]")
    config = train_config(workspace, name="train_empty.json", annotations="empty.json")
    assert main(["train", str(config)]) == 1


def eval_config(workspace, metric, name, **overrides):
    doc = {
        "metric": metric,
        "hierarchy": "hierarchy.json",
        "predictions": "annotations.json",
        "ground_truth": "annotations.json",
        "format": "json",
        "output": f"out/{name}.report",
    }
    doc.update(overrides)
    path = workspace / f"{name}.json"
    path.write_text(json.dumps(doc))
    return path


def test_eval_pcp_perfect(workspace):
    config = eval_config(
        workspace, "pcp_segments", "pcp",
        segments=[{"name": "upper", "a": "la", "b": "lb"},
                  {"name": "lower", "a": "rb", "b": "rc"}],
        format="json",
    )
    assert main(["eval", str(config)]) == 0
    report = json.loads((workspace / "out" / "pcp.report").read_text())
    assert report["aggregate"] == 1.0


def test_eval_pdj_rows(workspace):
    thresholds = [0.05, 0.1, 0.2, 0.5]
    config = eval_config(
        workspace, "pdj", "pdj", thresholds=thresholds, format="csv"
    )
    assert main(["eval", str(config)]) == 0
    lines = (workspace / "out" / "pdj.report").read_text().strip().splitlines()
    assert len(lines) == 1 + len(thresholds) + 1  # header + rows + aggregate


def test_eval_byte_stable(workspace):
    config = eval_config(
        workspace, "pcp_radius", "radius",
        sigmas={n: 2.0 for n in ("la", "lb", "lc", "ra", "rb", "rc")},
        factor=1.5, format="csv",
    )
    assert main(["eval", str(config)]) == 0
    first = (workspace / "out" / "radius.report").read_bytes()
    assert main(["eval", str(config)]) == 0
    assert (workspace / "out" / "radius.report").read_bytes() == first


def test_eval_mismatched_sets_exit_1(workspace):
    other = workspace / "other.json"
    records = json.loads((workspace / "annotations.json").read_text())[:2]
    other.write_text(json.dumps(records))
    config = eval_config(
        workspace, "pdj", "mismatch", thresholds=[0.1], predictions="other.json"
    )
    assert main(["eval", str(config)]) == 1


def test_score_prints_totals(workspace, capsys):
    config = workspace / "score.json"
    config.write_text(
        json.dumps(
            {
                "hierarchy": "hierarchy.json",
                "libraries": "library.hpel",
                "weights": "weights.json",
                "score_maps": "scenes/scene_0/maps.hpsm",
                "pose": "scenes/scene_0/annotation.json",
            }
        )
    )
    assert main(["score", str(config)]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 1
    name, value = out[0].split("\t")
    float(value)


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for command in ("infer", "train", "eval", "synth", "score"):
        assert command in text


def test_unknown_flag_fails_fast(workspace):
    config = infer_config(workspace, name="flags.json")
    with pytest.raises(SystemExit) as exc:
        main(["infer", str(config), "--bogus"])
    assert exc.value.code != 0


def test_infer_no_solution_exit_2(workspace, tiny3):
    import numpy as np

    from hierpose.appearance import CompositeMaps, ScaleMaps, ScoreMapStack, save_score_maps
    from hierpose.learning import load_library

    library = load_library(workspace / "library.hpel", tiny3)
    table = [(0, 0)] + [(p, 1) for p in tiny3.atomic_ids]
    atomic = np.full((7, 12, 12), 1.0 / 7.0, dtype=np.float32)
    composite = {
        part: CompositeMaps(part, 2, np.full((bins, 12, 12), 1.0 / bins, dtype=np.float32))
        for part, bins in library.composite_bins.items()
    }
    flat = ScoreMapStack([ScaleMaps(1.0, np.array(table, np.uint32), atomic, composite)])
    save_score_maps(flat, workspace / "flat.hpsm")
    config = infer_config(workspace, name="flat.json", score_maps="flat.hpsm")
    assert main(["infer", str(config)]) == 2
