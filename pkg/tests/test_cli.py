import json

import pytest

from zswapsim.cli import main
from zswapsim.sizes import format_size_triple, parse_size_triple
from zswapsim.errors import SpecificationError


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "spec.json").write_text(json.dumps({"apps": 2, "pages_per_app": 128, "relaunches": 3,
                                             "seed": 5}))
    assert main(["generate", "--spec", str(d / "spec.json"), "--out", str(d / "t.aswp")]) == 0
    return d


def test_generate_is_deterministic(workdir):
    again = workdir / "again.aswp"
    assert main(["generate", "--spec", str(workdir / "spec.json"), "--out", str(again)]) == 0
    assert again.read_bytes() == (workdir / "t.aswp").read_bytes()


def test_pipeline_replay_compare(workdir, capsys):
    t = str(workdir / "t.aswp")
    a, b = str(workdir / "a.json"), str(workdir / "b.json")
    common = ["--trace", t, "--mem", "256K", "--zpool", "256K"]
    assert main(["replay", *common, "--scheme", "zram", "--out", a]) == 0
    assert main(["replay", *common, "--scheme", "adaptive", "--sizes", "1K-2K-16K", "--out", b,
                 "--audit", str(workdir / "b.jsonl")]) == 0
    rep = json.loads(open(b).read())
    assert rep["config"]["scheme"]["sizes"] == [1024, 2048, 16384]
    capsys.readouterr()
    assert main(["compare", a, b, "--out", str(workdir / "cmp.csv")]) == 0
    out = capsys.readouterr().out
    assert "latency_ns" in out and "cpu_ns" in out
    assert (workdir / "cmp.csv").read_text().startswith("scope,metric,a,b,normalized,delta")
    for what in ("similarity", "deciles", "coverage", "locality"):
        assert main(["analyze", what, "--trace", t, "--audit", str(workdir / "b.jsonl"),
                     "--out", str(workdir / f"{what}.csv")]) in (0, 2)
    assert (workdir / "similarity.csv").read_text().startswith("uid,pair,similarity,reuse")
    assert (workdir / "deciles.csv").read_text().startswith("part,hot,warm,cold")


def test_config_file_below_flags(workdir):
    cfg = workdir / "cfg.json"
    cfg.write_text(json.dumps({"scheme": "zram", "mem": "256K", "zpool": "128K", "buffer_pages": 2}))
    out = workdir / "c.json"
    assert main(["replay", "--trace", str(workdir / "t.aswp"), "--config", str(cfg),
                 "--zpool", "256K", "--out", str(out)]) == 0
    scheme = json.loads(out.read_text())["config"]["scheme"]
    assert (scheme["scheme"], scheme["zpool"], scheme["mem"], scheme["buffer_pages"]) == \
        ("zram", 256 * 1024, 256 * 1024, 2)


def test_matrix_runs_in_config_order(workdir):
    matrix = workdir / "m.json"
    matrix.write_text(json.dumps([{"scheme": "zram"}, {"scenario": "ehl", "sizes": "1K-4K-16K"}]))
    out = workdir / "m"
    assert main(["replay", "--trace", str(workdir / "t.aswp"), "--mem", "256K", "--zpool", "256K",
                 "--matrix", str(matrix), "--jobs", "2", "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["00-zram.json", "01-adaptive-ehl-1K-4K-16K.json"]
    single = workdir / "single.json"
    main(["replay", "--trace", str(workdir / "t.aswp"), "--mem", "256K", "--zpool", "256K",
          "--scheme", "zram", "--out", str(single)])
    assert (out / "00-zram.json").read_text() == single.read_text()


def test_jsonl_round_trip(workdir):
    t = workdir / "t.aswp"
    assert main(["export-jsonl", str(t), str(workdir / "t.jsonl")]) == 0
    assert main(["import-jsonl", str(workdir / "t.jsonl"), str(workdir / "t2.aswp")]) == 0
    assert (workdir / "t2.aswp").read_bytes() == t.read_bytes()


def test_sweep_and_calibrate(workdir):
    assert main(["sweep-chunks", "--bytes", "256K", "--sizes", "1K..4K",
                 "--out", str(workdir / "sweep.csv")]) == 0
    lines = (workdir / "sweep.csv").read_text().splitlines()
    assert lines[0] == "chunk,comp_ns,decomp_ns,ratio" and len(lines) == 4
    assert main(["calibrate", "--bytes", "256K", "--sizes", "4K..16K", "--repetitions", "1",
                 "--out", str(workdir / "cm.json")]) == 0
    assert json.loads((workdir / "cm.json").read_text())["compress_ns_per_byte"] >= 0


def test_exit_codes(workdir, capsys):
    assert main(["replay", "--trace", str(workdir / "t.aswp"), "--bogus"]) == 1
    assert "usage:" in capsys.readouterr().err
    assert main(["nosuchcommand"]) == 1
    assert main(["replay", "--trace", str(workdir / "missing.aswp")]) == 2
    assert main(["replay", "--trace", str(workdir / "t.aswp"), "--sizes", "1K-3K-16K"]) == 2
    bad = workdir / "other.json"
    rep = json.loads((workdir / "a.json").read_text())
    rep["trace_id"] = "different"
    bad.write_text(json.dumps(rep))
    assert main(["compare", str(workdir / "a.json"), str(bad)]) == 2


@pytest.mark.parametrize("text", ["1K-2K-16K", "512B-4K-32K", "128B-128B-128K"])
def test_size_triple_round_trip(text):
    assert format_size_triple(parse_size_triple(text)) == text


def test_size_triple_names_bad_token():
    with pytest.raises(SpecificationError, match="3K"):
        parse_size_triple("1K-3K-16K")
