import json
import subprocess
import sys
from pathlib import Path

import pytest

from dove.cli import dispatch
from dove.synthetic import make_smoke_corpus

SMOKE = Path(__file__).resolve().parents[1] / "configs" / "smoke.yaml"


def run_chain(workdir: Path, monkeypatch) -> None:
    monkeypatch.chdir(workdir)
    make_smoke_corpus("raw", seed=0)
    cfg = str(SMOKE)
    steps = [
        ["curate", "--input", "raw", "--output", "cur", "--config", cfg],
        ["degrade", "--input", "cur", "--output", "pairs", "--config", cfg],
        ["train", "--stage", "1", "--config", cfg, "--data", "pairs", "--output", "ck/s1.ckpt"],
        ["train", "--stage", "2", "--config", cfg, "--data", "pairs", "--init", "ck/s1.ckpt",
         "--output", "ck/s2.ckpt"],
        ["restore", "--input", "pairs/lr", "--output", "sr", "--checkpoint", "ck/s2.ckpt", "--config", cfg],
        ["eval", "--pred", "sr", "--ref", "pairs/hr", "--out", "rep/report.json"],
    ]
    for argv in steps:
        assert dispatch(argv) == 0, argv


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    mp = pytest.MonkeyPatch()
    root = tmp_path_factory.mktemp("chain")
    try:
        run_chain(root, mp)
    finally:
        mp.undo()
    return root


def test_chain_outputs(chain):
    man = json.loads((chain / "cur" / "manifest.json").read_text())
    assert sum(r["status"] == "accepted" for r in man["records"]) == 4
    assert len(man["records"]) == 8
    assert sorted(p.name for p in (chain / "pairs" / "lr").glob("*.recipe.json"))
    rep = json.loads((chain / "rep" / "report.json").read_text())
    assert set(rep["mean"]) == {"psnr", "ssim", "warp"}
    for name in ("curate", "degrade", "restore"):
        rec = json.loads(next(chain.rglob(f"run_record.{name}.json")).read_text())
        assert {"config_fingerprint", "seed", "versions", "timings"} <= set(rec)
    log = (chain / "ck" / "s1.log.jsonl").read_text().splitlines()
    assert len(log) == 5 and json.loads(log[0])["branch"] == "video"


def test_restore_fingerprint_mismatch(chain, tmp_path):
    other = tmp_path / "other.yaml"
    other.write_text(SMOKE.read_text().replace("width: 32", "width: 64"))
    code = dispatch(["restore", "--input", str(chain / "pairs" / "lr"), "--output", str(tmp_path / "o"),
                     "--checkpoint", str(chain / "ck" / "s2.ckpt"), "--config", str(other)])
    assert code == 1


def test_help_lists_subcommands():
    out = subprocess.run([sys.executable, "-m", "dove.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("curate", "degrade", "train", "restore", "eval"):
        assert cmd in out.stdout


def test_usage_errors(tmp_path, capsys):
    assert dispatch(["frobnicate"]) == 2
    assert dispatch([]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("train:\n  phi: 1.5\n")
    assert dispatch(["eval", "--pred", str(tmp_path), "--out", str(tmp_path / "r.json"), "--config", str(bad)]) == 2
    err = capsys.readouterr().err
    assert '"key": "train.phi"' in err
    assert dispatch(["eval", "--pred", str(tmp_path), "--out", str(tmp_path / "r.json")]) == 2


def test_runtime_failure(tmp_path):
    assert dispatch(["eval", "--pred", str(tmp_path / "none"), "--metrics", "warp",
                     "--out", str(tmp_path / "r.json")]) == 1
    assert dispatch(["train", "--stage", "2", "--data", str(tmp_path), "--output", str(tmp_path / "c")]) == 1


def test_env_seed(tmp_path, monkeypatch, chain):
    monkeypatch.setenv("DOVE_SEED", "42")
    out = tmp_path / "rep.json"
    assert dispatch(["eval", "--pred", str(chain / "sr"), "--metrics", "warp", "--out", str(out)]) == 0
    assert json.loads((tmp_path / "run_record.eval.json").read_text())["seed"] == 42


def test_inputs_not_mutated(chain, tmp_path):
    make_smoke_corpus(tmp_path / "fresh", seed=0)
    fresh = {p.relative_to(tmp_path / "fresh"): p.read_bytes() for p in (tmp_path / "fresh").rglob("*") if p.is_file()}
    used = {p.relative_to(chain / "raw"): p.read_bytes() for p in (chain / "raw").rglob("*") if p.is_file()}
    assert fresh == used
