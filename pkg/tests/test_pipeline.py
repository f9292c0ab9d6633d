import json
import os

import numpy as np
import pytest

from bg2 import cli, pipeline
from bg2.errors import MissingBake
from bg2.fixtures import write_fixture_dataset
from bg2.manifest import load_manifest

SMALL_BAKE = {"nx": 16, "ny": 16, "settleFrames": 8}


def small_fixture(root, videos=None, width=48, height=48):
    if videos is None:
        videos = [{"videoId": "v1", "frames": 5},
                  {"videoId": "v2", "frames": 4,
                   "subjectId": "s2", "exerciseType": "stretch"}]
    return write_fixture_dataset(root, videos, width=width, height=height,
                                 bake=SMALL_BAKE)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    manifest_path = small_fixture(root)
    manifest = load_manifest(manifest_path)
    results, errors, skipped = pipeline.cmd_bake(manifest, manifest_path,
                                                 jobs=1)
    assert not errors
    r_results, r_errors, r_skipped = pipeline.cmd_render(
        manifest, manifest_path, textures_per_segment=1, jobs=1)
    assert not r_errors
    return root, manifest_path, manifest


def test_bake_artifacts(workspace):
    root, _, manifest = workspace
    out = manifest.output_root
    assert (out / "dataset.json").exists()
    seg_info = json.loads((out / "bakes/v1/segments.json").read_text())
    spans = [s["lastFrame"] - s["firstFrame"] + 1
             for s in seg_info["segments"]]
    assert sum(spans) == 5
    for s in seg_info["segments"]:
        bake_path = out / "bakes/v1" / f"seg{s['segmentId']:03d}.bgk2"
        assert bake_path.exists()
    assert len(seg_info["files"]) == len(seg_info["segments"])


def test_bake_rerun_skips(workspace):
    root, manifest_path, manifest = workspace
    out = manifest.output_root
    before = {p: (p.stat().st_mtime_ns, pipeline.sha256_file(p))
              for p in (out / "bakes").rglob("*.bgk2")}
    results, errors, skipped = pipeline.cmd_bake(manifest, manifest_path,
                                                 jobs=1)
    assert not errors and not results
    assert sorted(skipped) == ["v1", "v2"]
    after = {p: (p.stat().st_mtime_ns, pipeline.sha256_file(p))
             for p in (out / "bakes").rglob("*.bgk2")}
    assert before == after


def test_render_layer_counts(workspace):
    root, _, manifest = workspace
    out = manifest.output_root
    total_frames = 0
    for vid, frames in (("v1", 5), ("v2", 4)):
        seg_info = json.loads(
            (out / f"bakes/{vid}/segments.json").read_text())
        pngs = list((out / "layers" / vid / "tex00").glob("*.png"))
        expected = frames * 4        # frames x cameras x 1 texture
        assert len(pngs) == expected
        total_frames += expected
        depths = list((out / "layers" / vid / "tex00").glob("*.depth.npy"))
        assert len(depths) == expected
    assert total_frames == (5 + 4) * 4


def test_render_rerun_skips(workspace):
    root, manifest_path, manifest = workspace
    results, errors, skipped = pipeline.cmd_render(
        manifest, manifest_path, textures_per_segment=1, jobs=1)
    assert not errors and not results
    assert len(skipped) > 0


def test_bake_empty_video_list(tmp_path):
    manifest_path = small_fixture(tmp_path, videos=[])
    # no BGMS files needed for an empty run
    manifest = load_manifest(manifest_path)
    results, errors, skipped = pipeline.cmd_bake(manifest, manifest_path,
                                                 jobs=1)
    assert results == [] and errors == [] and skipped == []
    index = json.loads((manifest.output_root / "dataset.json").read_text())
    assert index["videos"] == []
    assert not (manifest.output_root / "bakes").exists()


def test_composite_zero_layers(tmp_path):
    manifest_path = small_fixture(tmp_path, videos=[{"videoId": "nl",
                                                     "frames": 2}])
    manifest = load_manifest(manifest_path)
    pipeline.cmd_bake(manifest, manifest_path, jobs=1)
    written, errors = pipeline.cmd_composite(manifest)   # nothing rendered
    assert written == 0 and errors == []
    assert not (manifest.output_root / "annotations").exists()


def test_render_resumes_partial_jobs(tmp_path):
    manifest_path = small_fixture(tmp_path, videos=[{"videoId": "rr",
                                                     "frames": 2}])
    manifest = load_manifest(manifest_path)
    pipeline.cmd_bake(manifest, manifest_path, jobs=1)
    pipeline.cmd_render(manifest, manifest_path, textures_per_segment=1,
                        jobs=1)
    tex_dir = manifest.output_root / "layers/rr/tex00"
    job_files = sorted(tex_dir.glob("job_seg*.json"))
    assert len(job_files) == 4          # one per camera
    job_files[0].unlink()               # simulate a job killed mid-write
    others = {p: p.stat().st_mtime_ns for p in tex_dir.glob("*.png")}
    results, errors, skipped = pipeline.cmd_render(
        manifest, manifest_path, textures_per_segment=1, jobs=1)
    assert not errors
    assert len(results) == 1 and len(skipped) == 3
    redone_cam = json.loads(job_files[0].read_text())["camId"] \
        if job_files[0].exists() else results[0]["camId"]
    for p, mtime in others.items():
        if f"_{redone_cam}.png" not in p.name:
            assert p.stat().st_mtime_ns == mtime


def test_render_zero_textures(tmp_path):
    manifest_path = small_fixture(tmp_path, videos=[{"videoId": "z",
                                                     "frames": 3}])
    manifest = load_manifest(manifest_path)
    pipeline.cmd_bake(manifest, manifest_path, jobs=1)
    results, errors, skipped = pipeline.cmd_render(
        manifest, manifest_path, textures_per_segment=0, jobs=1)
    assert results == [] and errors == [] and skipped == []
    assert not (manifest.output_root / "layers").exists()


def test_render_requires_bake(tmp_path):
    manifest_path = small_fixture(tmp_path, videos=[{"videoId": "nb",
                                                     "frames": 3}])
    manifest = load_manifest(manifest_path)
    with pytest.raises(MissingBake):
        pipeline.cmd_render(manifest, manifest_path, textures_per_segment=1,
                            jobs=1)


def test_composite_and_annotations(workspace):
    root, manifest_path, manifest = workspace
    written, errors = pipeline.cmd_composite(manifest)
    assert not errors
    assert written == (5 + 4) * 4
    out = manifest.output_root
    ann = out / "annotations/v1_tex00.jsonl"
    records = [json.loads(line) for line in ann.read_text().splitlines()]
    assert len(records) == 5 * 4
    first = records[0]
    assert set(first) == {"videoId", "segmentId", "frameIdx", "camId",
                          "bbox", "joints", "textureSeed"}
    assert len(first["joints"]) == 17
    comp = list((out / "composites/v1/tex00").glob("*.png"))
    assert len(comp) == 5 * 4


def test_composite_missing_source_frame(tmp_path):
    manifest_path = small_fixture(tmp_path,
                                  videos=[{"videoId": "m", "frames": 3}])
    manifest = load_manifest(manifest_path)
    pipeline.cmd_bake(manifest, manifest_path, jobs=1)
    pipeline.cmd_render(manifest, manifest_path, textures_per_segment=1,
                        jobs=1)
    victim = manifest.dataset_root / "frames/m/c0/000001.png"
    victim.unlink()
    written, errors = pipeline.cmd_composite(manifest)
    assert len(errors) == 1
    assert "000001" in errors[0][0] or "000001" in errors[0][1]
    assert written == 3 * 4 - 1


def test_composite_corrupt_layer(tmp_path):
    manifest_path = small_fixture(tmp_path,
                                  videos=[{"videoId": "c", "frames": 3}])
    manifest = load_manifest(manifest_path)
    pipeline.cmd_bake(manifest, manifest_path, jobs=1)
    pipeline.cmd_render(manifest, manifest_path, textures_per_segment=1,
                        jobs=1)
    layers = sorted((manifest.output_root / "layers/c/tex00").glob("*.png"))
    layers[0].write_bytes(b"not a png at all")
    written, errors = pipeline.cmd_composite(manifest)
    assert len(errors) == 1
    assert written == 3 * 4 - 1


def test_bake_resumes_after_partial_delete(workspace, tmp_path):
    # simulate a crash that lost one video's outputs: only that video reruns
    root, manifest_path, manifest = workspace
    out = manifest.output_root
    import shutil
    v1_bytes = {p.name: p.read_bytes()
                for p in (out / "bakes/v1").iterdir()}
    keep = {p: p.stat().st_mtime_ns for p in (out / "bakes/v2").iterdir()}
    shutil.rmtree(out / "bakes/v1")
    results, errors, skipped = pipeline.cmd_bake(manifest, manifest_path,
                                                 jobs=1)
    assert not errors
    assert [r["videoId"] for r in results] == ["v1"]
    assert skipped == ["v2"]
    assert {p: p.stat().st_mtime_ns
            for p in (out / "bakes/v2").iterdir()} == keep
    for name, data in v1_bytes.items():
        assert (out / "bakes/v1" / name).read_bytes() == data


def test_validate_summary(workspace):
    root, _, manifest = workspace
    summary, problems = pipeline.cmd_validate(manifest.output_root)
    assert problems == []
    lying = summary["categories"]["lying"]
    assert lying["videos"] == 2
    assert lying["frames"] == 9
    assert lying["segments"] >= 2
    assert summary["total"]["videos"] == 2
    assert summary["total"]["subjects"] == 2
    assert summary["resolution"] == "48x48"
    table = pipeline.format_summary_table(summary)
    for field in ("Subjects", "Exercise Types", "Videos", "Frames",
                  "Resolution", "Framerate"):
        assert field in table


def test_validate_empty_output(tmp_path):
    summary, problems = pipeline.cmd_validate(tmp_path)
    assert problems
    assert summary["total"]["videos"] == 0
    assert summary["total"]["frames"] == 0


def test_validate_catches_missing_bake(tmp_path):
    manifest_path = small_fixture(tmp_path,
                                  videos=[{"videoId": "d", "frames": 3}])
    manifest = load_manifest(manifest_path)
    pipeline.cmd_bake(manifest, manifest_path, jobs=1)
    victims = list((manifest.output_root / "bakes/d").glob("*.bgk2"))
    victims[0].unlink()
    summary, problems = pipeline.cmd_validate(manifest.output_root)
    assert any("missing" in p for p in problems)


def test_parallel_bake_matches_serial(tmp_path):
    videos = [{"videoId": "pa", "frames": 3}, {"videoId": "pb", "frames": 3}]
    m1 = small_fixture(tmp_path / "serial", videos=videos)
    m2 = small_fixture(tmp_path / "parallel", videos=videos)
    man1 = load_manifest(m1)
    man2 = load_manifest(m2)
    pipeline.cmd_bake(man1, m1, jobs=1)
    pipeline.cmd_bake(man2, m2, jobs=2)
    for vid in ("pa", "pb"):
        for p1 in sorted((man1.output_root / "bakes" / vid).glob("*.bgk2")):
            p2 = man2.output_root / "bakes" / vid / p1.name
            assert p1.read_bytes() == p2.read_bytes()


def test_seed_env_override(tmp_path, monkeypatch):
    manifest_path = small_fixture(tmp_path,
                                  videos=[{"videoId": "s", "frames": 2}])
    manifest = load_manifest(manifest_path)
    assert pipeline.resolve_seed(manifest) == 1234
    monkeypatch.setenv("BG2_SEED", "777")
    assert pipeline.resolve_seed(manifest) == 777


# --- CLI wiring ---

def test_cli_round_trip(tmp_path, capsys):
    manifest_path = small_fixture(tmp_path,
                                  videos=[{"videoId": "k", "frames": 2}])
    assert cli.main(["bake", "-m", str(manifest_path), "-j", "1"]) == 0
    assert cli.main(["render", "-m", str(manifest_path), "-n", "1",
                     "-j", "1"]) == 0
    assert cli.main(["composite", "-m", str(manifest_path)]) == 0
    assert cli.main(["validate", "-o", str(tmp_path / "out")]) == 0
    out = capsys.readouterr().out
    assert "baked k" in out
    assert "Videos" in out


def test_cli_eval_and_report(tmp_path, capsys):
    import bg2.metrics as metrics
    rig = metrics.load_builtin_rig("slp14")
    rng = np.random.default_rng(0)
    gt_lines = []
    pred_lines = []
    for f in range(3):
        joints = {n: list(rng.uniform(0, 100, 2)) for n in rig.joints}
        gt_lines.append(json.dumps({"frameId": f"f{f}", "joints": joints}))
        pred_lines.append(json.dumps({"frameId": f"f{f}", "joints": joints}))
    gt_path = tmp_path / "gt.jsonl"
    pred_path = tmp_path / "pred.jsonl"
    gt_path.write_text("\n".join(gt_lines))
    pred_path.write_text("\n".join(pred_lines))
    assert cli.main(["eval", "--pred", str(pred_path), "--gt", str(gt_path),
                     "--rig", "slp14", "--split", "uncover"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload == {"split": "uncover", "pck": 1.0, "nme": 0.0,
                       "frames": 3}

    rows = [{"testSet": "A", "blanket": "No", "model": "m1",
             "pck": 0.9, "nme": 0.2},
            {"testSet": "A", "blanket": "No", "model": "m2",
             "pck": 0.95, "nme": 0.15}]
    rows_path = tmp_path / "rows.json"
    rows_path.write_text(json.dumps(rows))
    csv_path = tmp_path / "report.csv"
    assert cli.main(["report", "--inputs", str(rows_path),
                     "--csv", str(csv_path)]) == 0
    assert "Difference" in capsys.readouterr().out
    assert csv_path.read_text().startswith("testSet,")


def test_cli_validate_failure_exit(tmp_path):
    assert cli.main(["validate", "-o", str(tmp_path)]) == 1
