import math

import pytest

import kgrg

REPORTS = [
    "the heart is normal in size. no pleural effusion.",
    "mild opacity at the left lung base.",
    "a calcified granuloma in the right apex.",
]


def test_tokenize_and_sentences():
    assert kgrg.tokenize("The heart, enlarged.") == ["the", "heart", ",", "enlarged", "."]
    assert len(kgrg.split_sentences(REPORTS[0])) == 2


def test_identity_scores():
    scores = kgrg.evaluate_texts(REPORTS, REPORTS)
    for name in ("bleu1", "bleu2", "bleu3", "bleu4", "rougeL"):
        assert scores[name] == 1.0
    assert scores["cider"] == 10.0
    assert scores["mean"] == pytest.approx(2.5)


def test_metric_errors_map_to_value_error():
    with pytest.raises(ValueError):
        kgrg.cider([["a"]], [["a"]])
    with pytest.raises(ValueError):
        kgrg.evaluate_texts(REPORTS, REPORTS[:2])


def test_bleu_brevity_penalty():
    assert kgrg.bleu([["a", "b"]], [["a", "b", "c", "d"]], 1) == pytest.approx(math.exp(-1.0))


def test_auc_with_ties():
    assert kgrg.auc([0.3, 0.3, 0.3], [0, 1, 0]) == 0.5
    assert kgrg.auc([0.1, 0.2], [1, 1]) is None


def test_normalize_adjacency_path():
    s = kgrg.normalize_adjacency([0, 1, 0, 1, 0, 1, 0, 1, 0], 3)
    assert s[0] == pytest.approx(0.5)
    assert s[1] == pytest.approx(1 / math.sqrt(6))
    assert s[4] == pytest.approx(1 / 3)
    assert kgrg.normalize_adjacency([0, 0, 0, 0], 2) == [1.0, 0.0, 0.0, 1.0]


def test_t_interval_quantile():
    values = [[0.3 + 0.001 * i] for i in range(15)]
    t, rows = kgrg.t_interval(values, ["rougeL"])
    assert t == pytest.approx(2.1447866879169273, abs=1e-12)
    assert rows[0]["lower"] < rows[0]["point"] < rows[0]["upper"]


def test_graph_round_trip(tmp_path):
    g = kgrg.KnowledgeGraph.default()
    assert (g.size, g.finding_count, g.edge_count) == (21, 20, 20)
    path = tmp_path / "g.txt"
    g.save(str(path))
    back = kgrg.KnowledgeGraph.load(str(path))
    assert back.names == g.names
    assert back.find("cardiomegaly") == 5


def test_cli_exit_codes(tmp_path):
    code, _, _ = kgrg.run_cli([])
    assert code == 1
    code, _, err = kgrg.run_cli(["kg-stats", "--graph", str(tmp_path / "missing.txt")])
    assert code == 2 and err.startswith("error:")
    path = tmp_path / "g.txt"
    kgrg.KnowledgeGraph.default().save(str(path))
    code, out, _ = kgrg.run_cli(["kg-stats", "--graph", str(path)])
    assert code == 0 and out.startswith("nodes 21\n")
