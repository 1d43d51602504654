import json

import numpy as np
import pytest
import yaml

from tokensieve import embfile
from tokensieve.cli import SWEEP_CSV_HEADER, main
from tokensieve.pipeline import make_demo_scene
from tokensieve.scene import save_scene
from tokensieve.verify import DATA_DIR

SMALL_CONFIG = dict(embed_dim=32, grid_rows=2, grid_cols=3, tokens_per_patch=9,
                    views=2, frames=2, select_ratio=2.0, compress_ratio=3)


@pytest.fixture
def small_config_file(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(SMALL_CONFIG))
    return path


def test_run_writes_outputs_and_echoes_config(tmp_path, small_config_file, capsys):
    out = tmp_path / "out"
    code = main(["run", "--config", str(small_config_file), "--out", str(out), "--seed", "5"])
    assert code == 0
    assert (out / "final_tokens.lvde").is_file()
    assert (out / "report.txt").is_file()
    assert sorted(p.name for p in (out / "masks").glob("*.pgm")) == [
        "view0_frame1.pgm", "view1_frame1.pgm",
    ]
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["seed"] == 5  # flag override beat the file value
    assert report["config"]["embed_dim"] == 32
    assert report["out_tokens"] * report["config"]["compress_ratio"] == report["k_selected"]
    tokens = embfile.load_embeddings(out / "final_tokens.lvde")
    assert tokens.shape == (report["out_tokens"], 32)
    assert "->" in capsys.readouterr().out


def test_default_demo_run_reports_headline_numbers(tmp_path, capsys):
    out = tmp_path / "demo"
    assert main(["run", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["out_tokens"] == 49
    assert report["achieved_reduction"] == 168.0
    stdout = capsys.readouterr().out
    assert "8232 -> selected 4116 -> out 49" in stdout


def test_run_with_frames_one_succeeds(tmp_path, small_config_file):
    out = tmp_path / "single"
    assert main(["run", "--config", str(small_config_file), "--frames", "1",
                 "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["frames"] == 1


def test_run_with_explicit_scene(tmp_path, small_config_file):
    scene = make_demo_scene(views=3, frames=2, grid_rows=2, grid_cols=3, tokens_per_patch=9)
    scene_path = tmp_path / "scene.yaml"
    save_scene(scene, scene_path)
    out = tmp_path / "out"
    code = main(["run", "--config", str(small_config_file), "--scene", str(scene_path),
                 "--out", str(out)])
    assert code == 0  # scene geometry (3 views) overrides the config file (2)
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["views"] == 3


def test_scene_flag_conflict_is_config_error(tmp_path, small_config_file, capsys):
    scene_path = tmp_path / "scene.yaml"
    save_scene(make_demo_scene(views=3, frames=2, grid_rows=2, grid_cols=3,
                               tokens_per_patch=9), scene_path)
    code = main(["run", "--config", str(small_config_file), "--scene", str(scene_path),
                 "--views", "4", "--out", str(tmp_path / "x")])
    assert code == 1
    assert "contradicts the scene" in capsys.readouterr().err


def test_missing_scene_file_is_io_error(tmp_path, capsys):
    code = main(["run", "--scene", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "x")])
    assert code == 3
    assert "error:" in capsys.readouterr().err


def test_bad_parameter_is_config_error(tmp_path, capsys):
    assert main(["run", "--tau", "-3", "--out", str(tmp_path / "x")]) == 1
    assert "tau" in capsys.readouterr().err


def test_unknown_config_key_is_config_error(tmp_path, capsys):
    path = tmp_path / "config.yaml"
    path.write_text("embed_dimension: 16\n")
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "x")]) == 1
    assert "unknown config keys" in capsys.readouterr().err


def test_sweep_csv_and_flagging(tmp_path, small_config_file, capsys):
    out = tmp_path / "sweep"
    code = main([
        "sweep", "--config", str(small_config_file), "--pairs", "2x3,3x2,4x3",
        "--target-reduction", "6", "--out", str(out),
    ])
    assert code == 0
    lines = (out / "sweep.csv").read_text().strip().split("\n")
    assert lines[0] == SWEEP_CSV_HEADER
    assert len(lines) == 4  # one row per pair
    reductions = [float(line.split(",")[5]) for line in lines[1:]]
    assert reductions == [6.0, 6.0, 12.0]
    stdout = capsys.readouterr().out
    assert "flagged: pair 4x3" in stdout
    assert (out / "pair_2x3" / "report.json").is_file()
    recalls = [float(line.split(",")[6]) for line in lines[1:]]
    assert all(0.0 <= r <= 1.0 for r in recalls)


def test_sweep_empty_pairs_is_config_error(tmp_path, capsys):
    assert main(["sweep", "--pairs", "", "--out", str(tmp_path / "x")]) == 1
    assert "at least one" in capsys.readouterr().err


def test_sweep_bad_pair_is_config_error(tmp_path, capsys):
    assert main(["sweep", "--pairs", "2:84", "--out", str(tmp_path / "x")]) == 1
    assert "bad pair" in capsys.readouterr().err


def test_verify_suite_filter(capsys):
    assert main(["verify", "--suite", "budget"]) == 0
    out = capsys.readouterr().out
    assert "PASS budget" in out
    assert "oracle" not in out


def test_verify_unknown_suite(capsys):
    assert main(["verify", "--suite", "nonsense"]) == 1
    assert "unknown suite" in capsys.readouterr().err


def test_verify_corrupted_goldens_exits_4(tmp_path, capsys):
    corrupt = tmp_path / "goldens"
    (corrupt / "masks").mkdir(parents=True)
    for p in (DATA_DIR / "masks").glob("*.pgm"):
        (corrupt / "masks" / p.name).write_bytes(p.read_bytes())
    (corrupt / "golden_embedding.lvde").write_bytes(b"XXXX")
    code = main(["verify", "--suite", "goldens", "--goldens-dir", str(corrupt)])
    assert code == 4
    assert "FAIL goldens" in capsys.readouterr().out


def test_goldens_regeneration(tmp_path):
    out = tmp_path / "goldens"
    assert main(["goldens", "--out", str(out)]) == 0
    assert (out / "demo_scene.yaml").is_file()
    assert (out / "demo_config.yaml").is_file()
    assert (out / "golden_embedding.lvde").is_file()
    fresh = sorted(p.name for p in (out / "masks").glob("*.pgm"))
    packaged = sorted(p.name for p in (DATA_DIR / "masks").glob("*.pgm"))
    assert fresh == packaged
    for name in fresh:
        assert (out / "masks" / name).read_bytes() == (DATA_DIR / "masks" / name).read_bytes()


def test_argparse_failures_map_to_exit_1(capsys):
    assert main(["run", "--axis", "diagonal"]) == 1
    assert main(["frobnicate"]) == 1


def test_embedding_sources_scene_file(tmp_path, small_config_file):
    # an embedding-sources document drives the run from files
    from conftest import write_sources

    scene = make_demo_scene(views=2, frames=2, grid_rows=2, grid_cols=3, tokens_per_patch=9)
    sources = write_sources(tmp_path, scene, SMALL_CONFIG["embed_dim"], 42)
    doc = {
        "embeddings": {
            "text": sources.text.name,
            "main": sources.main.name,
            "support": sources.support.name,
            "temporal": sources.temporal.name,
        }
    }
    scene_path = tmp_path / "sources.yaml"
    scene_path.write_text(yaml.safe_dump(doc))
    out = tmp_path / "out"
    code = main(["run", "--config", str(small_config_file), "--scene", str(scene_path),
                 "--out", str(out)])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["m_in"] == 2 * 6 * 9


def test_final_tokens_file_is_float32_even_for_float64_runs(tmp_path):
    config = dict(SMALL_CONFIG)
    config["dtype"] = "float64"
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(config))
    out = tmp_path / "out"
    assert main(["run", "--config", str(path), "--out", str(out)]) == 0
    tokens = embfile.load_embeddings(out / "final_tokens.lvde")
    assert tokens.dtype == np.float32
