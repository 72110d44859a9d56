import csv
import json
import os

import numpy as np
import pytest
import scipy.sparse as sp

from anchorwords.cli import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, main, read_config_file
from anchorwords.corpus import SparseCorpus, write_uci_bag_of_words
from anchorwords.recover import read_topic_matrix

SYNTH = ["--vocab-size", "40", "--model-k", "3", "--anchor-prob", "0.1", "--docs", "100",
         "--doc-len", "30", "--alpha", "0.3", "--top-n", "5", "--deterministic"]


def write_docs(tmp_path, docs, vocab):
    rows, cols, vals = [], [], []
    for i, doc in enumerate(docs):
        for w, n in doc.items():
            rows.append(i)
            cols.append(vocab.index(w))
            vals.append(n)
    m = sp.csr_matrix((vals, (rows, cols)), shape=(len(docs), len(vocab)))
    docword, vocab_path = tmp_path / "docword.txt", tmp_path / "vocab.txt"
    write_uci_bag_of_words(SparseCorpus(m, tuple(vocab)), docword, vocab_path)
    return str(docword), str(vocab_path)


def singular_corpus(tmp_path):
    """Its two anchors never co-occur and ``a`` never repeats in a document, so ``Q[S,S]`` is singular."""
    docs = [{"a": 1, "c": 2}, {"b": 2, "d": 1}, {"c": 1, "d": 1}] * 5
    return write_docs(tmp_path, docs, ["a", "b", "c", "d"])


def test_pipeline_smoke(tmp_path):
    out = tmp_path / "run"
    assert main(["pipeline", "--out-dir", str(out), "--k", "3", *SYNTH]) == EXIT_OK
    for name in ["corpus.docword.txt", "corpus.vocab.txt", "corpus.a_true.tsv", "q.bin",
                 "q.bin.json", "anchors.tsv", "model.topics.tsv", "model.a.bin", "model.r.bin",
                 "model.summary.txt", "model.json", "report.json"]:
        assert (out / name).is_file(), name
    report = json.loads((out / "report.json").read_text())
    assert len(report["l1"]["per_topic"]) == 3
    assert sorted(report["l1"]["matching"]) == [0, 1, 2]
    assert {"synth", "q-build", "anchors", "recover", "eval"} <= set(report["timings"])
    a_hat, words = read_topic_matrix(out / "model.topics.tsv")
    assert a_hat.shape == (40, 3) and len(words) == 40
    np.testing.assert_allclose(a_hat.sum(axis=0), 1.0, atol=1e-6)


def test_pipeline_on_existing_corpus(tmp_path):
    synth_prefix = tmp_path / "syn"
    assert main(["synth", "--out-prefix", str(synth_prefix), *SYNTH[:-3]]) == EXIT_OK
    out = tmp_path / "run"
    rc = main(["pipeline", "--docword", f"{synth_prefix}.docword.txt", "--vocab",
               f"{synth_prefix}.vocab.txt", "--k", "3", "--out-dir", str(out), "--method", "l2"])
    assert rc == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert "l1" not in report and len(report["coherence"]["per_topic"]) == 3


def test_missing_vocab_names_path(tmp_path, capsys):
    docword, _ = singular_corpus(tmp_path)
    missing = str(tmp_path / "nowhere" / "vocab.txt")
    rc = main(["pipeline", "--docword", docword, "--vocab", missing, "--k", "2",
               "--out-dir", str(tmp_path / "run")])
    assert rc != 0
    assert missing in capsys.readouterr().err


def test_resume_skips_finished_stages(tmp_path):
    out = str(tmp_path / "run")
    args = ["pipeline", "--out-dir", out, "--k", "3", *SYNTH]
    assert main(args) == EXIT_OK
    first = json.loads(open(os.path.join(out, "report.json")).read())
    assert main([*args, "--resume"]) == EXIT_OK
    second = json.loads(open(os.path.join(out, "report.json")).read())
    assert "q-build" not in second["timings"]
    assert not {"synth", "anchors", "recover"} & set(second["timings"])
    assert second["l1"]["per_topic"] == pytest.approx(first["l1"]["per_topic"], abs=1e-12)
    # removing the model reruns only the recovery
    os.remove(os.path.join(out, "model.topics.tsv"))
    assert main([*args, "--resume"]) == EXIT_OK
    third = json.loads(open(os.path.join(out, "report.json")).read())
    assert "recover" in third["timings"] and "q-build" not in third["timings"]


def test_stage_commands_chain(tmp_path):
    p = str(tmp_path)
    assert main(["synth", "--out-prefix", f"{p}/c", *SYNTH[:-3]]) == EXIT_OK
    assert main(["build-q", "--docword", f"{p}/c.docword.txt", "--vocab", f"{p}/c.vocab.txt",
                 "--out", f"{p}/q.bin"]) == EXIT_OK
    assert main(["anchors", "--q", f"{p}/q.bin", "--k", "3", "--out", f"{p}/anchors.tsv"]) == EXIT_OK
    assert main(["recover", "--q", f"{p}/q.bin", "--anchors", f"{p}/anchors.tsv",
                 "--out-prefix", f"{p}/m", "--method", "l2"]) == EXIT_OK
    assert main(["eval", "--a-hat", f"{p}/m.topics.tsv", "--a-true", f"{p}/c.a_true.tsv",
                 "--corpus", f"{p}/c.docword.txt", "--top-n", "5", "--out", f"{p}/r.json"]) == EXIT_OK
    report = json.loads(open(f"{p}/r.json").read())
    assert len(report["l1"]["per_topic"]) == 3 and len(report["coherence"]["per_topic"]) == 3


def test_sweep_counts_reports_and_rows(tmp_path):
    out = tmp_path / "sweep"
    rc = main(["sweep", "--out-dir", str(out), "--k", "3", *SYNTH, "--axis", "docs=60,100,150",
               "--axis", "method=l2,original"])
    assert rc == EXIT_OK
    rows = list(csv.DictReader(open(out / "summary.csv")))
    assert len(rows) == 6
    assert len(list(out.glob("cell_*/report.json"))) == 6
    assert {(r["docs"], r["method"]) for r in rows} == {
        (d, m) for d in ("60", "100", "150") for m in ("l2", "original")}
    assert all(r["status"] == "ok" and float(r["mean_l1"]) >= 0 for r in rows)


def test_sweep_without_axes_is_single_cell(tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep", "--out-dir", str(out), "--k", "3", *SYNTH]) == EXIT_OK
    rows = list(csv.DictReader(open(out / "summary.csv")))
    assert len(rows) == 1 and rows[0]["status"] == "ok"


def test_sweep_records_failed_cell_and_continues(tmp_path):
    docword, vocab = singular_corpus(tmp_path)
    out = tmp_path / "sweep"
    rc = main(["sweep", "--docword", docword, "--vocab", vocab, "--k", "2", "--min-anchor-df",
               "1", "--top-n", "2", "--out-dir", str(out), "--axis", "method=l2,original"])
    assert rc == EXIT_OK
    rows = {r["method"]: r for r in csv.DictReader(open(out / "summary.csv"))}
    assert rows["l2"]["status"] == "ok"
    assert rows["original"]["status"] == "failed"
    assert "singular" in rows["original"]["error"]
    assert (out / "cell_000" / "report.json").is_file()


def test_stage_failure_exit_code(tmp_path, capsys):
    docword, vocab = singular_corpus(tmp_path)
    rc = main(["pipeline", "--docword", docword, "--vocab", vocab, "--k", "2", "--min-anchor-df",
               "1", "--method", "original", "--out-dir", str(tmp_path / "run")])
    assert rc == EXIT_STAGE
    assert "recover" in capsys.readouterr().err


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# shared settings\nmethod = l2\neg-tol = 1e-6\nk = 3\nout_prefix = ignored\n")
    assert read_config_file(cfg)["eg_tol"] == "1e-6"
    out = tmp_path / "a"
    assert main(["pipeline", "--config", str(cfg), "--out-dir", str(out), *SYNTH]) == EXIT_OK
    assert json.loads((out / "model.json").read_text())["method"] == "l2"
    out = tmp_path / "b"
    assert main(["pipeline", "--config", str(cfg), "--out-dir", str(out), "--method", "kl",
                 *SYNTH]) == EXIT_OK
    assert json.loads((out / "model.json").read_text())["method"] == "kl"


def test_config_errors_exit_two(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("no_such_option = 1\n")
    assert main(["pipeline", "--config", str(cfg), "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    assert main(["pipeline", "--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG
    assert main(["anchors", "--k", "0"]) == EXIT_CONFIG
    assert main(["pipeline", "--out-dir", str(tmp_path / "r"), "--k", "3"]) == EXIT_CONFIG


def test_deterministic_runs_are_byte_identical(tmp_path):
    for name in ("one", "two"):
        assert main(["pipeline", "--out-dir", str(tmp_path / name), "--k", "3", *SYNTH]) == EXIT_OK
    for name in ("corpus.docword.txt", "q.bin", "anchors.tsv", "model.topics.tsv", "model.a.bin",
                 "model.r.bin", "model.json"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes(), name
