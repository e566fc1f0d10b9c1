import csv
import json

import pytest

from quadsky import io as qio
from quadsky.cli import main

from conftest import ent, offset


@pytest.fixture
def four(tmp_path):
    """Two planted pairs, each a few metres apart, all four within 60 m."""
    a_lat, a_lon = 57.0, 9.9
    b_lat, b_lon = offset(a_lat, a_lon, 40, 30)
    ents = [
        ent("gp", "1", a_lat, a_lon, "Skippers Grill", address="Storegade 1", categories=frozenset({"restaurant"}),
            phone="+45 11111111"),
        ent("krak", "1", *offset(a_lat, a_lon, 3, 2), "Skippers Grill", address="Storegade 1",
            categories=frozenset({"restaurant"}), phone="11 11 11 11"),
        ent("gp", "2", b_lat, b_lon, "Apotek Nord", address="Vestergade 9", categories=frozenset({"pharmacy"}),
            website="https://apoteknord.dk/"),
        ent("krak", "2", *offset(b_lat, b_lon, -2, 4), "Apotek Nord", address="Vestergade 9",
            categories=frozenset({"pharmacy"}), website="www.apoteknord.dk"),
    ]
    f = tmp_path / "entities.csv"
    qio.write_entities(f, ents)
    return f


def _read(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_pipeline_four_entity_fixture(four, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["pipeline", "--entities", str(four), "--out", str(out), "--threads", "1"]) == 0
    assert "f1=1.000000" in capsys.readouterr().out
    man = json.loads((out / "manifest.json").read_text())
    assert man["counts"]["pairs"] == 6 and man["result"]["cutoff_k"] == 1
    assert man["name_normalization"] == "strip+casefold"
    labeled = _read(out / "labeled.csv")
    assert sorted((r["left_id"], r["right_id"]) for r in labeled if r["predicted"] == "1") == [("1", "1"), ("2", "2")]


def test_stages_reproduce_pipeline(four, tmp_path):
    out = tmp_path / "run"
    main(["pipeline", "--entities", str(four), "--out", str(out), "--threads", "1"])
    s = tmp_path / "stages"
    s.mkdir()
    assert main(["block", "--entities", str(four), "--out", str(s / "blocks.csv")]) == 0
    assert main(["compare", "--entities", str(four), "--blocks", str(s / "blocks.csv"), "--out",
                 str(s / "pairs.csv"), "--threads", "1"]) == 0
    assert (s / "blocks.csv").read_bytes() == (out / "blocks.csv").read_bytes()
    assert (s / "pairs.csv").read_bytes() == (out / "pairs.csv").read_bytes()
    assert main(["rank", "--pairs", str(s / "pairs.csv"), "--out", str(s / "ranked.csv")]) == 0
    # truth from the pipeline's labeled output
    rows = _read(out / "labeled.csv")
    labels = {((r["left_source"], r["left_id"]), (r["right_source"], r["right_id"])): r["truth"] == "1" for r in rows}
    qio.write_labels(s / "labels.csv", labels)
    assert main(["label", "--pairs", str(s / "ranked.csv"), "--labels", str(s / "labels.csv"),
                 "--out", str(s / "labeled.csv"), "--report", str(s / "series.csv")]) == 0
    assert (s / "labeled.csv").read_bytes() == (out / "labeled.csv").read_bytes()
    assert (s / "series.csv").read_bytes() == (out / "series.csv").read_bytes()
    assert main(["eval", "--pairs", str(s / "labeled.csv")]) == 0


def test_from_manifest_is_bit_identical(four, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["pipeline", "--entities", str(four), "--out", str(a), "--threads", "1", "--seed", "5"])
    assert main(["pipeline", "--from-manifest", str(a / "manifest.json"), "--out", str(b)]) == 0
    for name in ("blocks.csv", "pairs.csv", "ranked.csv", "labeled.csv", "series.csv", "report.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
    assert ma["outputs"] == mb["outputs"] and mb["seed"] == 5


def test_missing_input_reports_ingest(tmp_path, capsys):
    rc = main(["pipeline", "--entities", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "stage ingest" in capsys.readouterr().err


def test_gen_then_pipeline_with_method_d(tmp_path, capsys):
    g = tmp_path / "g"
    assert main(["gen", "--n", "800", "--seed", "3", "--out", str(g)]) == 0
    for name in ("entities.csv", "truth.csv", "taxonomy.tsv", "manifest.json"):
        assert (g / name).exists()
    out = tmp_path / "d"
    rc = main(["pipeline", "--entities", str(g / "entities.csv"), "--labels", str(g / "truth.csv"),
               "--taxonomy", str(g / "taxonomy.tsv"), "--method", "d", "--out", str(out), "--threads", "1"])
    assert rc == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["result"]["method"] == "D" and man["result"]["label_free"]
    assert man["parameters"]["method"] == "d" and man["result"]["cutoff_k"] >= 1


def test_config_file_supplies_options(four, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"entities = {four}\nout = {tmp_path / 'c'}\nmethod: fes\nthreads = 1\n")
    assert main(["pipeline", "--config", str(cfg)]) == 0
    man = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert man["parameters"]["method"] == "fes"
    # the command line beats the config file
    assert main(["pipeline", "--config", str(cfg), "--method", "f"]) == 0
    man = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert man["parameters"]["method"] == "f"


def test_bench_writes_csv(tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--sizes", "300,600", "--out", str(out)]) == 0
    rows = _read(out)
    assert [r["n"] for r in rows] == ["300", "600"]
    assert set(rows[0]) == {"n", "quadflex_s", "pairs", "fnn_pairs", "coverage", "naive_s", "speedup"}
    assert all(0.0 <= float(r["coverage"]) <= 1.0 for r in rows)


def test_bad_method_and_label_without_rank(tmp_path, four, capsys):
    with pytest.raises(SystemExit):
        main(["pipeline", "--entities", str(four), "--out", str(tmp_path), "--method", "zzz"])
    p = tmp_path / "p.csv"
    p.write_text("left_source,left_id,right_source,right_id,delta_name\na,1,b,1,0.5\n")
    assert main(["label", "--pairs", str(p), "--out", str(tmp_path / "l.csv")]) == 2
    assert "run 'rank' first" in capsys.readouterr().err
