from __future__ import annotations

from importlib import resources

import pytest

from tailrsm.pcfg import compile_source

CORPUS = ["skip", "walk2d_plain", "walk2d", "walk2d_variant", "coupon2", "coupon4", "walk_int", "walk_real",
          "long_walk", "walk_adv", "poly_tail"]


def corpus_source(name: str) -> str:
    return resources.files("tailrsm").joinpath(f"corpus/{name}.rp").read_text()


def corpus_path(name: str) -> str:
    return str(resources.files("tailrsm").joinpath(f"corpus/{name}.rp"))


def corpus_program(name: str):
    return compile_source(corpus_source(name))


@pytest.fixture
def program():
    return corpus_program


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS, line

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(line(n))
