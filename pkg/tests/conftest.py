import time
from types import SimpleNamespace

import pytest

from dbnsep import cli, dbn
from dbnsep import data as D

from acceptance_log import ACCEPTANCE

DESK_ARGS = ["--quantile", "0.25", "--seed", "0"]


def run_pipeline(out_dir, *extra):
    code = cli.main(["all", *DESK_ARGS, "--out-dir", str(out_dir), *extra])
    return code


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    """Reference desk-scale run: 2000 faces, 1000 digits, 1000 mixed, 784-128-64-32, CD-1, top 25%."""
    out = tmp_path_factory.mktemp("desk")
    start = time.perf_counter()
    code = run_pipeline(out)
    seconds = time.perf_counter() - start
    faces, digits, mixed = D.load_dataset(out / "data")
    return SimpleNamespace(
        out=out,
        exit_code=code,
        seconds=seconds,
        model=dbn.load_model(out / "model.dbn"),
        faces=faces,
        digits=digits,
        mixed=mixed,
    )


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number} ({title}): {detail}")
