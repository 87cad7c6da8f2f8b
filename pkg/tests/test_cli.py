import io
import json

from kgexplore import corpus as corpus_mod
from kgexplore.cli import main
from conftest import fixture_path

CORPUS = fixture_path("toykg_corpus.jsonl")
SMALL = fixture_path("toykg_eval_small.jsonl")


def test_explore_genq_index_answer(tmp_path, capsys):
    progs, stats = tmp_path / "p.jsonl", tmp_path / "s.tsv"
    assert main(["--seed", "1", "explore", "--budget", "20", "--out", str(progs), "--stats", str(stats)]) == 0
    lines = progs.read_text().splitlines()
    assert 0 < len(lines) <= 20 and all("program" in json.loads(line) for line in lines)
    assert stats.read_text()
    corpus = tmp_path / "c.jsonl"
    assert main(["genq", "--programs", str(progs), "--out", str(corpus)]) == 0
    assert len(corpus_mod.load(str(corpus))) > 0
    idx = tmp_path / "c.idx"
    assert main(["index", "--corpus", CORPUS, "--out", str(idx)]) == 0
    trace = tmp_path / "t.json"
    capsys.readouterr()
    assert main(["answer", "which movies did Christopher Nolan direct?", "--index", str(idx),
                 "--trace", str(trace)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["answer"] == ["Dunkirk", "Inception", "Tenet"]
    assert json.loads(trace.read_text())["steps"]


def test_explore_deterministic(capsys):
    main(["--seed", "4", "explore", "--budget", "15"])
    a = capsys.readouterr().out
    main(["--seed", "4", "explore", "--budget", "15"])
    assert capsys.readouterr().out == a


def test_eval_and_summary(tmp_path):
    out, summ = tmp_path / "r.json", tmp_path / "r.tsv"
    assert main(["eval", "--dataset", SMALL, "--corpus", CORPUS, "--out", str(out), "--summary", str(summ)]) == 0
    rep = json.loads(out.read_text())
    assert len(rep["examples"]) == 6 and "coverage" in rep
    assert summ.read_text().startswith("split\tn\tf1\thits@1\noverall\t6\t")
    out2 = tmp_path / "r2.json"
    main(["eval", "--dataset", SMALL, "--corpus", CORPUS, "--out", str(out2), "--workers", "2"])
    assert out.read_bytes() == out2.read_bytes()


def test_stats_and_budget_curve(tmp_path, capsys):
    assert main(["stats", "--corpus", CORPUS, "--dataset", fixture_path("toykg_eval.jsonl")]) == 0
    rows = dict(line.split("\t") for line in capsys.readouterr().out.splitlines())
    assert rows["Patterns"] == "100.00"
    assert main(["budget-curve", "--sizes", "1,30", "--dataset", SMALL, "--corpus", CORPUS]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "size\tf1" and [line.split("\t")[0] for line in lines[1:]] == ["1", "30"]


def test_bad_input_exit_code(tmp_path):
    assert main(["budget-curve", "--sizes", "0", "--dataset", SMALL, "--corpus", CORPUS]) == 2
    assert main(["eval", "--dataset", str(tmp_path / "missing.jsonl"), "--corpus", CORPUS]) == 2


def test_repl(monkeypatch, capsys):
    monkeypatch.setattr("sys.stdin", io.StringIO("who directed Inception?\n\nwhat is a swallow?\n"))
    assert main(["repl", "--corpus", CORPUS]) == 0
    a, b = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert a["answer"] == ["Christopher Nolan"]
    assert "error" in b
