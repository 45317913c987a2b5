import pytest

from ragate.llm import LLMGateway, MockLLM
from ragate.pipeline import Pipeline, PipelineConfig
from ragate.retrieval import Bm25Index
from ragate.toy import make_toy


@pytest.fixture(scope="session")
def toy():
    return make_toy(0)


@pytest.fixture
def toy_pipeline(toy):
    def build(**cfg):
        gw = LLMGateway(MockLLM(toy.spec))
        return Pipeline(gw, Bm25Index.build(toy.corpus), PipelineConfig(**cfg))

    return build


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
