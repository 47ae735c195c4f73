import csv
import json

import numpy as np
import pytest

from medseq import cli

from helpers import DATA


@pytest.fixture
def small_csv(tmp_path):
    rng = np.random.default_rng(0)
    th = np.array([list("AAAAAA"), list("BBBBCC")])
    path = tmp_path / "seqs.csv"
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["id", "w", "x"] + [f"t{t}" for t in range(1, 7)])
        for i in range(60):
            z = i % 2
            row = np.where(rng.random(6) < 0.8, th[z], rng.choice(list("ABC"), 6))
            out.writerow([f"s{i}", f"{rng.uniform(0.5, 2):.3f}", z ^ (rng.random() < 0.2)]
                         + list(row))
        # an exact duplicate sequence to exercise the duplicate report
        out.writerow(["dup", "1.0", 0] + list("AAAAAA"))
    return path


def base(path, out, *extra):
    return ["--input", str(path), "--seq-columns", "t1:t6", "--id-column", "id",
            "--weight-column", "w", "--seed", "1", "--out", str(out), *extra]


def test_summarize(small_csv, tmp_path):
    assert cli.main(["summarize", *base(small_csv, tmp_path)]) == 0
    s = tmp_path / "summary"
    for name in ("state_distribution.csv", "entropy.csv", "observed_states.csv",
                 "duplicates.csv", "weights.csv"):
        assert (s / name).exists()
    seqs = [r[3:] for r in csv.reader(open(small_csv))][1:]
    counts = {}
    for r in seqs:
        counts[tuple(r)] = counts.get(tuple(r), 0) + 1
    dup = list(csv.DictReader(open(s / "duplicates.csv")))
    assert len(dup) == len(counts)
    assert sorted(int(r["size"]) for r in dup) == sorted(counts.values())
    stats = {r["statistic"]: r["value"] for r in csv.DictReader(open(s / "weights.csv"))}
    assert int(stats["n"]) == 61
    dist = list(csv.reader(open(s / "state_distribution.csv")))[1:]
    for row in dist:
        assert sum(float(x) for x in row[1:]) == pytest.approx(1.0)


def test_fit_writes_outputs(small_csv, tmp_path):
    rc = cli.main(["fit", *base(small_csv, tmp_path), "--model-type", "CC", "--G", "2"])
    assert rc == 0
    doc = json.loads((tmp_path / "model.json").read_text())
    assert doc["model_type"] == "CC"
    z = list(csv.reader(open(tmp_path / "z.csv")))
    assert z[0] == ["id", "z1", "z2", "map"] and len(z) == 62
    assert "BIC" in (tmp_path / "report.txt").read_text()


def test_fit_single_component_and_determinism(small_csv, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["fit", *base(small_csv, out), "--model-type", "CC", "--G", "1"]) == 0
    assert (a / "model.json").read_bytes() == (b / "model.json").read_bytes()
    assert (a / "z.csv").read_bytes() == (b / "z.csv").read_bytes()


@pytest.mark.parametrize("extra", [
    ["--model-type", "UCN", "--G", "2"],
    ["--model-type", "UC", "--G", "1"],
    ["--model-type", "CC", "--G", "2", "--gating-covariates", "nosuch"],
    ["--model-type", "XX", "--G", "2"],
])
def test_fit_input_errors(small_csv, tmp_path, extra, capsys):
    assert cli.main(["fit", *base(small_csv, tmp_path), *extra]) == 2


def test_alias_message(small_csv, tmp_path, capsys):
    cli.main(["fit", *base(small_csv, tmp_path), "--model-type", "UUN", "--G", "2"])
    assert "CUN" in capsys.readouterr().err


def test_missing_seed_and_file(small_csv, tmp_path):
    args = base(small_csv, tmp_path, "--model-type", "CC", "--G", "2")
    i = args.index("--seed")
    assert cli.main(["fit", *(args[:i] + args[i + 2:])]) == 2
    assert cli.main(["fit", *base(tmp_path / "none.csv", tmp_path), "--model-type", "CC",
                     "--G", "2"]) == 2


def test_nonconvergence_exit(small_csv, tmp_path):
    rc = cli.main(["fit", *base(small_csv, tmp_path), "--model-type", "UU", "--G", "3",
                   "--max-iter", "1"])
    assert rc == 3


def test_config_file_and_override(small_csv, tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text(f"input = {small_csv}\nseq-columns = t1:t6\nseed = 1\n"
                    f"out = {tmp_path / 'c'}\nmodel-type = CC\nG = 1\n")
    assert cli.main(["fit", "--config", str(conf), "--G", "2"]) == 0
    doc = json.loads((tmp_path / "c" / "model.json").read_text())
    assert doc["G"] == 2
    conf.write_text("bogus = 1\n")
    assert cli.main(["fit", "--config", str(conf)]) == 2


def test_select_and_bootstrap(small_csv, tmp_path):
    sel = tmp_path / "sel"
    rc = cli.main(["select", *base(small_csv, sel, "--covariates", "x"), "--types", "CC,CU",
                   "--G-range", "1:3", "--stepwise", "forward"])
    assert rc == 0
    grid = list(csv.DictReader(open(sel / "grid.csv")))
    assert len(grid) == 6
    assert (sel / "stepwise.csv").exists()
    doc = json.loads((sel / "model.json").read_text())
    runs = []
    for name in ("b1", "b2"):
        out = tmp_path / name
        rc = cli.main(["bootstrap", *base(small_csv, out, "--covariates", "x"),
                       "--model", str(sel / "model.json"), "--B", "10"])
        assert rc == 0
        runs.append((out / "se.csv").read_bytes())
    assert runs[0] == runs[1]
    assert "approximate" in (tmp_path / "b1" / "report.txt").read_text()
    assert doc["G"] >= 2


def test_bootstrap_missing_model(small_csv, tmp_path):
    assert cli.main(["bootstrap", *base(small_csv, tmp_path), "--model",
                     str(tmp_path / "no.json")]) == 2


def test_mvad_trim_summary(tmp_path):
    rc = cli.main(["summarize", "--input", str(DATA / "mvad.csv"), "--seq-columns",
                   "Jul.93:Jun.99", "--weight-column", "weight", "--trim", "3:72",
                   "--seed", "0", "--out", str(tmp_path)])
    assert rc == 0
    stats = {r["statistic"]: r["value"] for r in
             csv.DictReader(open(tmp_path / "summary" / "weights.csv"))}
    assert float(stats["raw_sum"]) == pytest.approx(711.57)
    assert int(stats["distinct_sequences"]) == 490
    assert len(list(csv.reader(open(tmp_path / "summary" / "entropy.csv")))) == 71
