import csv
import filecmp
import json
import subprocess
import sys

import pytest

from transatt.cli import main

SMALL_SYNTH = ["--num-entities", "150", "--num-root-classes", "2", "--num-attributes", "20",
               "--attrs-per-path", "4,6", "--branching", "2,3"]
SMALL_MODEL = ["--word-dim", "8", "--path-dim", "8", "--attr-dim", "8", "--min-attr-support", "3"]


def run(argv, capsys):
    """Run the CLI in-process; argparse usage errors become their exit code."""
    try:
        rc = main(argv)
    except SystemExit as exc:
        rc = exc.code
    out, err = capsys.readouterr()
    return rc, out, err


def tree(d):
    return sorted(p.relative_to(d).as_posix() for p in d.rglob("*"))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen-synth", "--seed", "7", "--out", str(d / "data"), *SMALL_SYNTH]) == 0
    assert main(["train", "--dataset", str(d / "data"), "--epochs", "5", "--seed", "1",
                 "--out", str(d / "ck.json"), *SMALL_MODEL]) == 0
    return d


# -- gen-synth ---------------------------------------------------------------------

def test_gen_synth_twice_identical(tmp_path, capsys):
    for name in ("a", "b"):
        rc, _, _ = run(["gen-synth", "--seed", "7", "--out", str(tmp_path / name)], capsys)
        assert rc == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert tree(a) == tree(b)
    _, mismatch, errors = filecmp.cmpfiles(a, b, tree(a), shallow=False)
    assert mismatch == [] and errors == []


def test_gen_synth_missing_out(capsys):
    rc, _, err = run(["gen-synth", "--seed", "7"], capsys)
    assert rc == 2 and "usage" in err


def test_scale_flags_reach_manifest(tmp_path, capsys):
    rc, _, _ = run(["gen-synth", "--seed", "3", "--out", str(tmp_path), "--num-entities", "80",
                    "--num-attributes", "30", "--depth", "2,3"], capsys)
    assert rc == 0
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["config"]["num_entities"] == 80 and m["counts"]["entities"] == 80
    assert m["config"]["num_attributes"] == 30 and m["config"]["depth"] == [2, 3]
    assert m["config"]["seed"] == 3


def test_gen_synth_bad_config(tmp_path, capsys):
    rc, _, err = run(["gen-synth", "--out", str(tmp_path), "--attrs-per-path", "6,80"], capsys)
    assert rc == 2 and "config error" in err


# -- build-dataset -------------------------------------------------------------------

def test_build_dataset_writes_tuples(trained, tmp_path, capsys):
    rc, _, _ = run(["build-dataset", "--dataset", str(trained / "data"), "--out", str(tmp_path),
                    "--min-attr-support", "3"], capsys)
    assert rc == 0
    lines = (tmp_path / "tuples.tsv").read_text(encoding="utf-8").splitlines()
    assert lines and all(len(x.split("\t")) >= 3 for x in lines if not x.startswith("#"))
    assert (tmp_path / "attributes.txt").read_text(encoding="utf-8").strip()


# -- train ---------------------------------------------------------------------------

def test_train_log_and_checkpoint(tmp_path, capsys):
    rc, _, _ = run(["gen-synth", "--seed", "7", "--out", str(tmp_path), *SMALL_SYNTH], capsys)
    rc, out, _ = run(["train", "--dataset", str(tmp_path), "--epochs", "5", "--seed", "1",
                      *SMALL_MODEL], capsys)
    assert rc == 0
    records = [json.loads(x) for x in out.splitlines()]
    assert [r["epoch"] for r in records] == [1, 2, 3, 4, 5]
    assert all(set(r) == {"epoch", "mean_loss", "val_hits1", "seconds"} for r in records)
    first = (tmp_path / "checkpoint.json").read_bytes()
    rc, _, _ = run(["train", "--dataset", str(tmp_path), "--epochs", "5", "--seed", "1",
                    *SMALL_MODEL], capsys)
    assert rc == 0
    assert (tmp_path / "checkpoint.json").read_bytes() == first


def test_train_invalid_margin(trained, tmp_path, capsys):
    rc, _, err = run(["train", "--dataset", str(trained / "data"), "--margin", "0",
                      "--out", str(tmp_path / "ck.json")], capsys)
    assert rc == 2 and "margin" in err
    assert not (tmp_path / "ck.json").exists()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_exit_code(trained, tmp_path, capsys):
    rc, _, err = run(["train", "--dataset", str(trained / "data"), "--margin", "1e308", "--epochs", "2",
                      "--out", str(tmp_path / "ck.json"), *SMALL_MODEL], capsys)
    assert rc == 4 and "divergence" in err


def test_train_missing_dataset(tmp_path, capsys):
    rc, _, _ = run(["train", "--dataset", str(tmp_path / "nope")], capsys)
    assert rc == 3


# -- predict -------------------------------------------------------------------------

def test_predict_path_top10(trained, capsys):
    rc, out, _ = run(["predict", "--checkpoint", str(trained / "ck.json"), "--path", "r0/r0.0",
                      "--topk", "10"], capsys)
    assert rc == 0
    rows = [x.split("\t") for x in out.splitlines()]
    assert len(rows) == 10 and all(len(r) == 2 for r in rows)
    scores = [float(s) for _, s in rows]
    assert scores == sorted(scores)
    assert all(len(s.split(".")[1]) == 6 for _, s in rows)


def test_predict_entity_attention_csv(trained, tmp_path, capsys):
    data = trained / "data"
    entity = next(line.split("\t")[0] for line in (data / "entity_class.tsv").read_text().splitlines()
                  if line and not line.startswith("#"))
    rc, out, _ = run(["predict", "--checkpoint", str(trained / "ck.json"), "--dataset", str(data),
                      "--entity", entity, "--topk", "5", "--emit-attention", str(tmp_path / "m.csv")],
                     capsys)
    assert rc == 0 and len(out.splitlines()) == 5
    with open(tmp_path / "m.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    assert len(body) == 5
    for r in body:
        weights = [float(x) for x in r[1:]]
        assert len(weights) == len(header) - 1
        assert abs(sum(weights) - 1.0) <= 1e-6


def test_predict_unknown_entity(trained, capsys):
    rc, _, err = run(["predict", "--checkpoint", str(trained / "ck.json"), "--dataset",
                      str(trained / "data"), "--entity", "nobody"], capsys)
    assert rc == 3 and "nobody" in err


def test_predict_needs_one_query(trained, capsys):
    rc, _, _ = run(["predict", "--checkpoint", str(trained / "ck.json")], capsys)
    assert rc == 2


def test_inspect_attention_to_stdout(trained, capsys):
    data = trained / "data"
    entity = next(line.split("\t")[0] for line in (data / "entity_class.tsv").read_text().splitlines()
                  if line and not line.startswith("#"))
    rc, out, _ = run(["inspect-attention", "--checkpoint", str(trained / "ck.json"), "--dataset", str(data),
                      "--entity", entity, "--topk", "3"], capsys)
    assert rc == 0 and len(out.splitlines()) == 4


# -- eval ----------------------------------------------------------------------------

def _split_output(out):
    table, _, js = out.partition("\n{")
    return table, json.loads("{" + js)


def test_eval_oracle_apc_is_perfect(trained, capsys):
    rc, out, _ = run(["eval", "--dataset", str(trained / "data"), "--oracle", "--task", "apc",
                      "--paths", "all", "--k", "1"], capsys)
    assert rc == 0
    _, report = _split_output(out)
    assert report["overall"]["1"] == 1.0


def test_eval_malformed_k(trained, capsys):
    for bad in ("1,x", "0", ""):
        rc, _, _ = run(["eval", "--dataset", str(trained / "data"), "--oracle", "--k", bad], capsys)
        assert rc == 2


def test_eval_json_and_table_agree(trained, tmp_path, capsys):
    rc, out, _ = run(["eval", "--dataset", str(trained / "data"), "--checkpoint", str(trained / "ck.json"),
                      "--task", "ape", "--k", "1,5,10", "--json-out", str(tmp_path / "r.json")], capsys)
    assert rc == 0
    table, report = _split_output(out)
    assert json.loads((tmp_path / "r.json").read_text()) == report
    lines = table.strip().splitlines()
    header = lines[1].split()
    seen = 0
    for line in lines[4:]:
        cells = line.split()
        k = cells[0].split("@")[1]
        for cat, cell in zip(header[1:], cells[1:]):
            v = report["overall"][k] if cat == "Overall" else report["by_category"][cat][k]
            assert f"{100 * v:.2f}" == cell
            seen += 1
    assert seen >= 3


def test_eval_needs_model(trained, capsys):
    rc, _, _ = run(["eval", "--dataset", str(trained / "data")], capsys)
    assert rc == 2


# -- config --------------------------------------------------------------------------

def test_config_file_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[model]\nmargin = 2.5\nword_dim = 12\n[train]\nepochs = 7\n", encoding="utf-8")
    rc, out, _ = run(["train", "--dataset", "unused", "--config", str(cfg), "--epochs", "9",
                      "--print-config"], capsys)
    assert rc == 0
    assert "margin = 2.5" in out and "word_dim = 12" in out and "epochs = 9" in out


def test_print_config_echoes_every_section(capsys):
    rc, out, _ = run(["eval", "--dataset", "unused", "--print-config"], capsys)
    assert rc == 0
    for section in ("[model]", "[train]", "[synth]", "[data]"):
        assert section in out


def test_print_config_round_trips(tmp_path, capsys):
    rc, out, _ = run(["train", "--dataset", "unused", "--margin", "3.0", "--seed", "5",
                      "--print-config"], capsys)
    (tmp_path / "echo.ini").write_text(out, encoding="utf-8")
    rc2, out2, _ = run(["train", "--dataset", "unused", "--config", str(tmp_path / "echo.ini"),
                        "--print-config"], capsys)
    assert rc == rc2 == 0 and out == out2


@pytest.mark.parametrize("text", ["[model]\nbogus = 1\n", "[nope]\nx = 1\n", "[model]\nmargin = abc\n"])
def test_config_file_rejects(tmp_path, capsys, text):
    cfg = tmp_path / "bad.ini"
    cfg.write_text(text, encoding="utf-8")
    rc, _, err = run(["train", "--dataset", "unused", "--config", str(cfg)], capsys)
    assert rc == 2 and "config error" in err


def test_version_names_format(capsys):
    rc, out, _ = run(["--version"], capsys)
    assert rc == 0 and "format_version 1" in out


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "transatt.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("transatt ")
