import subprocess
import sys

import pytest

from rankloc.cli import main

SMALL = ["--param", "n_viewpoints=50", "--param", "dim=16"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    w = d / "world"
    assert run("simulate", "--seed", 3, "--out-dir", w, *SMALL) == 0
    assert run("select-landmarks", "--features", w / "landmark.fvec", "--r", 20,
               "--out", d / "lm.bin") == 0
    assert run("build-index", "--features", w / "train.fvec", "--viewpoints", w / "train.csv",
               "--landmarks", d / "lm.bin", "--h", 4, "--out", d / "map.idx") == 0
    (d / "actions.txt").write_text("2\n3  # a comment\n\n5\n")
    return d


def map_opts(d):
    return ["--map", d / "map.idx", "--landmarks", d / "lm.bin"]


def test_no_arguments_is_usage_error(capsys):
    assert main([]) == 1
    assert "error:usage:" in capsys.readouterr().err


def test_unknown_option_is_usage_error(capsys):
    assert main(["eval-anr", "--bogus"]) == 1
    assert main(["simulate", "--seed", "1", "--out-dir", "x", "--param", "novalue"]) == 1


def test_missing_file_is_io_error(tmp_path, capsys):
    assert run("select-landmarks", "--features", tmp_path / "nope.fvec", "--out", tmp_path / "o") == 2
    assert "error:io:" in capsys.readouterr().err


def test_corrupt_file_is_format_error(tmp_path, capsys):
    (tmp_path / "bad.fvec").write_bytes(b"garbage!" * 4)
    assert run("select-landmarks", "--features", tmp_path / "bad.fvec", "--out", tmp_path / "o") == 2
    assert "error:format:" in capsys.readouterr().err


def test_query_output(workspace):
    d, w = workspace, workspace / "world"
    out = d / "q.csv"
    assert run("query", *map_opts(d), "--features", w / "test.fvec", "--top", 3, "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# rankloc ") and "method=rrf" in lines[0]
    assert lines[1] == "query_id,rank,image_id,score"
    assert len(lines) == 2 + 50 * 3
    assert run("query", *map_opts(d), "--features", w / "test.fvec", "--method", "brute_force",
               "--out", out) == 1
    assert run("query", *map_opts(d), "--features", w / "test.fvec", "--method", "brute_force",
               "--map-features", w / "train.fvec", "--top", 1, "--out", out) == 0


def test_eval_anr_grid(workspace):
    d, w = workspace, workspace / "world"
    out = d / "anr.csv"
    assert run("eval-anr", "--landmarks", d / "lm.bin", "--map-features", w / "train.fvec",
               "--map-viewpoints", w / "train.csv", "--features", w / "test.fvec",
               "--viewpoints", w / "test.csv", "--r", "10,20", "--h", "2,4", "--tau", 1,
               "--workers", 2, "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[1] == "method,r,h,anr_percent"
    rows = [l.split(",") for l in lines[2:]]
    assert len(rows) == 4 * 2 * 2
    assert all(0 < float(r[3]) <= 100 for r in rows)


def test_localize_seq(workspace):
    d, w = workspace, workspace / "world"
    out = d / "seq.csv"
    assert run("localize-seq", *map_opts(d), "--map-viewpoints", w / "train.csv", "--seed", 0,
               "--queries", w / "test.fvec", "--query-viewpoints", w / "test.csv",
               "--actions", d / "actions.txt", "--start", 4, "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[1] == "step,position_m,entropy,gt_belief_rank"
    assert [l.split(",")[1] for l in lines[2:]] == ["4", "6", "9", "14"]


def test_localize_seq_rejects_mismatched_map(workspace):
    d, w = workspace, workspace / "world"
    assert run("localize-seq", *map_opts(d), "--map-viewpoints", w / "salience.csv", "--seed", 0,
               "--queries", w / "test.fvec", "--query-viewpoints", w / "test.csv",
               "--actions", d / "actions.txt", "--out", d / "x.csv") == 2


def nbv_opts(d):
    w = d / "world"
    return [*map_opts(d), "--map-viewpoints", w / "train.csv", "--env", w, "--seed", 1,
            "--particles", 100]


def test_train_and_eval_nbv_deterministic(workspace):
    d = workspace
    outputs = []
    for _ in range(2):
        assert run("train-nbv", *nbv_opts(d), "--episodes", 30, "--out", d / "q.bin") == 0
        assert run("eval-nbv", *nbv_opts(d), "--episodes", 5, "--q", d / "q.bin",
                   "--out", d / "ev.csv") == 0
        outputs.append(((d / "q.bin").read_bytes(), (d / "ev.csv").read_bytes()))
    assert outputs[0] == outputs[1]
    lines = outputs[0][1].decode().splitlines()
    assert lines[1] == ("episode,frame,position_m,action_m,reward,episode_reward,"
                        "frame_anr_percent")
    assert len(lines) == 2 + 5 * 11
    assert run("eval-nbv", *nbv_opts(d), "--episodes", 2, "--out", d / "ev2.csv") == 1
    assert run("eval-nbv", *nbv_opts(d), "--episodes", 2, "--policy", "fixed:4",
               "--out", d / "ev2.csv") == 0


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "rankloc", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("rankloc ")
