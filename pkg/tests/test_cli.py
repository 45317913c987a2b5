import json
from pathlib import Path

import pytest

from ragate import cli
from ragate.llm.gateway import GatewayError
from ragate.llm.mock import MockLLM
from ragate.toy import write_toy


@pytest.fixture(autouse=True)
def no_cache_env(monkeypatch):
    monkeypatch.delenv("RAGATE_CACHE_DIR", raising=False)


@pytest.fixture
def toy_config(tmp_path):
    return write_toy(tmp_path / "toy")


def run(*argv):
    return cli.main([str(a) for a in argv])


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_load_config_resolves_and_overrides(toy_config):
    cfg = cli.load_config(toy_config, ["k=3", "estimators=[\"perplexity\"]", "llm.extra=x"])
    assert cfg.k == 3 and cfg.estimators == ["perplexity"]
    assert cfg.datasets[0].train.is_absolute() and cfg.datasets[0].train.exists()
    assert cfg.output_dir == toy_config.parent / "out"


@pytest.mark.parametrize(
    "override",
    ["estimators=[\"nope\"]", "deciders=[\"svm\"]", "selection_mode=\"x\"", "retriever.corpus=\"missing.jsonl\""],
)
def test_bad_config_exits_2(toy_config, override):
    assert run("generate", "--config", toy_config, "--override", override) == 2


def test_missing_config_and_bad_override(tmp_path, toy_config):
    assert run("generate", "--config", tmp_path / "none.json") == 2
    assert run("generate", "--config", toy_config, "--override", "no-equals") == 2


def test_upstream_missing_exits_3(toy_config, capsys):
    for stage in ("score", "fit", "run", "eval", "ood", "complexity", "report"):
        assert run(stage, "--config", toy_config) == 3
    assert "ragate generate" in capsys.readouterr().err


def test_generate_manifest_counts(toy_config):
    assert run("generate", "--config", toy_config) == 0
    manifest = json.loads((toy_config.parent / "out" / "generate" / "manifest.json").read_text())
    assert len(manifest["completed"]) == 100 * 3
    assert all(k.rsplit("/", 1)[1] in ("norag", "rag", "samples") for k in manifest["completed"])


def test_generate_is_resumable(toy_config, monkeypatch, capsys):
    original = MockLLM._fact
    broken = {"on": True}

    def flaky(self, question):
        if broken["on"] and question and question.startswith("Who founded"):
            raise GatewayError("simulated outage")
        return original(self, question)

    monkeypatch.setattr(MockLLM, "_fact", flaky)
    assert run("generate", "--config", toy_config) == 4
    first = capsys.readouterr().out
    done_first = int(first.split("generate: ")[1].split()[0])
    assert 0 < done_first < 300
    assert run("score", "--config", toy_config) == 3
    broken["on"] = False
    assert run("generate", "--config", toy_config) == 0
    second = capsys.readouterr().out
    assert "300 keys complete" in second
    fetched = int(second.split("complete, ")[1].split()[0])
    assert 0 < fetched <= 300 - done_first


def test_full_run_outputs(toy_config):
    assert run("all", "--config", toy_config) == 0
    out = toy_config.parent / "out"
    for rel in ("eval/metrics.csv", "report/report.md", "report/table1.md", "report/table2.md",
                "complexity/complexity.csv", "run/toy/never.jsonl", "run/toy/adaptive-max_entropy.jsonl",
                "fit/toy/max_entropy.json"):
        assert (out / rel).exists(), rel
    table1 = (out / "report" / "table1.md").read_text()
    assert "Never RAG" in table1 and "Always RAG" in table1 and "Ideal" in table1
    assert str(out.parent) not in (out / "report" / "report.md").read_text()


def test_stages_are_idempotent(toy_config):
    assert run("all", "--config", toy_config) == 0
    out = toy_config.parent / "out"
    before = tree_bytes(out)
    for stage in ("score", "fit", "run", "eval", "report"):
        assert run(stage, "--config", toy_config) == 0
    assert tree_bytes(out) == before


def test_ood_three_datasets(tmp_path):
    cfg = write_toy(tmp_path / "toy3", n_datasets=3)
    assert run("all", "--config", cfg, "--override", "estimators=[\"max_entropy\",\"perplexity\"]") == 0
    lines = (tmp_path / "toy3" / "out" / "ood" / "transfer.csv").read_text().splitlines()
    rows = [dict(zip(lines[0].split(","), line.split(","))) for line in lines[1:]]
    for method in ("max_entropy", "perplexity"):
        cells = [r for r in rows if r["method"] == method and r["train"] != r["test"]]
        assert len(cells) == 6
    stats = json.loads((tmp_path / "toy3" / "out" / "ood" / "friedman.json").read_text())
    assert len(stats["pairs"]) == 6 and stats["methods"] == ["max_entropy", "perplexity"]
    assert 0.0 <= stats["p_value"] <= 1.0
    nemenyi = (tmp_path / "toy3" / "out" / "ood" / "nemenyi.csv").read_text().splitlines()
    assert nemenyi[1].split(",")[1] == "1.00"


def test_index_command(tmp_path, toy_config):
    out = tmp_path / "idx.json"
    assert run("index", "--corpus", toy_config.parent / "corpus.jsonl", "--out", out) == 0
    assert out.exists()
    cfg = cli.load_config(toy_config, [f"retriever={{\"index\": \"{out}\"}}"])
    assert cli.Context(cfg).retriever().n_docs == 200


def test_toy_command(tmp_path):
    assert run("toy", "--out", tmp_path / "t", "--datasets", "2") == 0
    cfg = json.loads((tmp_path / "t" / "config.json").read_text())
    assert [d["name"] for d in cfg["datasets"]] == ["toy0", "toy1"]
