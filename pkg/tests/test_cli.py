import json
import os

import numpy as np
import pytest

from spectube.cli import main

SMALL_TUBE = {
    "spine": "straight", "length": 120.0, "radius": 12.0,
    "rings": [
        {"s_center": 40.0, "n_folds": 3, "fold_depth": 4.0, "fold_width": 24.0,
         "theta_offset": 0.3, "theta_gap": 0.9},
        {"s_center": 80.0, "n_folds": 3, "fold_depth": 4.0, "fold_width": 24.0,
         "theta_offset": 0.3, "theta_gap": 0.9},
    ],
    "resolution": [64, 48],
    "seed": 42,
}


def write_cfg(path, **kw):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(kw, fh)
    return str(path)


@pytest.fixture(scope="module")
def tube_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    cfg = write_cfg(out / "cfg.json", tube_spec=SMALL_TUBE,
                    out_dir=str(out))
    assert main(["synth", "--config", cfg]) == 0
    return out


def test_synth_outputs(tube_dir):
    assert (tube_dir / "tube.ply").exists()
    truth = json.loads((tube_dir / "truth.json").read_text())
    assert len(truth["folds"]) == 6


def test_fiedler_and_determinism(tube_dir, tmp_path):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    cfg = write_cfg(tmp_path / "f.json", mesh=str(tube_dir / "tube.ply"))
    assert main(["fiedler", "--config", cfg, "--out", str(out1)]) == 0
    assert main(["fiedler", "--config", cfg, "--out", str(out2)]) == 0
    for name in ("fiedler.json", "fiedler.ply", "eigen.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_segment_folds_with_score(tube_dir, tmp_path):
    out = tmp_path / "seg"
    cfg = write_cfg(tmp_path / "s.json", mesh=str(tube_dir / "tube.ply"),
                    ground_truth=str(tube_dir / "truth.json"))
    assert main(["segment-folds", "--config", cfg, "--out", str(out)]) == 0
    folds = json.loads((out / "folds.json").read_text())
    assert len(folds["folds"]) == 6
    score = json.loads((out / "score.json").read_text())["scan"]
    assert score["sensitivity"] >= 0.9
    assert (out / "folds.ply").exists()


def test_flatten_command(tube_dir, tmp_path):
    out = tmp_path / "flat"
    cfg = write_cfg(tmp_path / "fl.json", mesh=str(tube_dir / "tube.ply"))
    assert main(["flatten", "--config", cfg, "--out", str(out)]) == 0
    dist = json.loads((out / "distortion.json").read_text())
    assert set(dist) == {"consistent", "geodesic"}
    assert (out / "flat_consistent_folds.svg").exists()
    assert (out / "flat_geodesic_fiedler.svg").exists()


def test_register_command(tmp_path):
    synth_out = tmp_path / "pair"
    cfg = write_cfg(
        tmp_path / "p.json", tube_spec=SMALL_TUBE,
        deformation={"twist": 0.3, "noise_mm": 0.1, "seed": 42},
        out_dir=str(synth_out))
    assert main(["synth", "--config", cfg]) == 0
    truth = json.loads((synth_out / "truth.json").read_text())
    lm = tmp_path / "landmarks.json"
    lm.write_text(json.dumps(truth["landmarks"]))

    out = tmp_path / "reg"
    cfg2 = write_cfg(tmp_path / "r.json",
                     src_mesh=str(synth_out / "src.ply"),
                     dst_mesh=str(synth_out / "dst.ply"),
                     landmarks=str(lm), grid=96, flow_iters=60,
                     n_levels=64)
    assert main(["register", "--config", cfg2, "--out", str(out)]) == 0
    reports = json.loads((out / "distance_errors.json").read_text())
    assert reports["refined"]["mean_mm"] <= reports["global"]["mean_mm"] + 1e-9
    trace = (out / "trace.csv").read_text().splitlines()
    assert trace[0].split(",")[:2] == ["iter", "energy"]
    en = [float(r.split(",")[1]) for r in trace[1:]]
    assert len(en) > 2


def test_eval_command(tube_dir, tmp_path):
    seg = tmp_path / "seg2"
    cfg = write_cfg(tmp_path / "s2.json", mesh=str(tube_dir / "tube.ply"))
    assert main(["segment-folds", "--config", cfg, "--out", str(seg)]) == 0
    out = tmp_path / "ev"
    cfg2 = write_cfg(tmp_path / "e.json", mesh=str(tube_dir / "tube.ply"),
                     truth=str(tube_dir / "truth.json"),
                     detected=str(seg / "folds.json"))
    assert main(["eval", "--config", cfg2, "--out", str(out)]) == 0
    score = json.loads((out / "eval_score.json").read_text())["scan"]
    assert score["TP"] + score["FN"] == 6


def test_validation_failures(tmp_path):
    # non-cylinder input
    import test_mesh
    ico = test_mesh.icosahedron()
    from spectube.fileio import save_mesh
    p = tmp_path / "ico.obj"
    save_mesh(p, ico)
    cfg = write_cfg(tmp_path / "c.json", mesh=str(p))
    assert main(["fiedler", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    # unknown config key
    cfg2 = write_cfg(tmp_path / "c2.json", mesh=str(p), bogus_key=1)
    assert main(["fiedler", "--config", cfg2]) == 2


def test_segment_folds_determinism(tube_dir, tmp_path):
    out1 = tmp_path / "d1"
    out2 = tmp_path / "d2"
    cfg = write_cfg(tmp_path / "d.json", mesh=str(tube_dir / "tube.ply"))
    assert main(["segment-folds", "--config", cfg, "--out", str(out1)]) == 0
    assert main(["segment-folds", "--config", cfg, "--out", str(out2)]) == 0
    assert (out1 / "folds.json").read_bytes() == (out2 / "folds.json").read_bytes()


def test_flatten_svg_folds_avoid_seam(tube_dir, tmp_path):
    import re
    out = tmp_path / "flatsvg"
    cfg = write_cfg(tmp_path / "fs.json", mesh=str(tube_dir / "tube.ply"))
    assert main(["flatten", "--config", cfg, "--out", str(out)]) == 0
    svg = (out / "flat_consistent_folds.svg").read_text()
    width = float(re.search(r'width="(\d+)"', svg).group(1))
    margin = width / 100.0
    for m in re.finditer(r'<polygon points="([^"]+)"[^>]*class="fold', svg):
        xs = [float(p.split(",")[0]) for p in m.group(1).split()]
        assert min(xs) > margin and max(xs) < width - margin
