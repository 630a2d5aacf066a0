from __future__ import annotations

import shutil
from pathlib import Path

import pytest

from seal.schema import ApiCall, ApiDoc, Dataset, DatasetMeta, ParamSpec, Query

FIXTURES = Path(__file__).parent / "fixtures"

# (criterion, outcome, description) lines printed after the run
ACCEPTANCE: list[tuple[int, str, str]] = []
E2E = FIXTURES / "e2e"


def api(name: str, *params: str, tool: str = "tool", source: str = "apigen", description: str = "") -> ApiDoc:
    return ApiDoc(
        id=f"{source}/{tool}/{name}",
        source=source,
        tool_name=tool,
        api_name=name,
        description=description or f"{name} endpoint",
        parameters=tuple(ParamSpec(name=p, type="string") for p in params),
    )


def dataset(apis, queries=(), source: str = "apigen") -> Dataset:
    return Dataset(DatasetMeta(source=source, created_at="2026-01-01T00:00:00Z"), tuple(apis), tuple(queries))


def query(qid: str, *calls: ApiCall, gt_api_ids=None, text: str | None = None, source: str = "apigen") -> Query:
    ids = gt_api_ids if gt_api_ids is not None else tuple(c.api_id for c in calls if c.api_id)
    return Query(id=qid, text=text or f"request {qid}", source=source, gt_api_ids=tuple(ids),
                 gt_calls=tuple(calls))


@pytest.fixture
def e2e_copy(tmp_path: Path) -> Path:
    """A writable copy of the end-to-end fixture directory."""
    dest = tmp_path / "e2e"
    shutil.copytree(E2E, dest)
    return dest


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, outcome, text in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number}: {outcome}  {text}")
