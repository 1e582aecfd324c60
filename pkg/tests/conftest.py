import sys
from pathlib import Path

import pytest

from smartpipe import ContentStore, Pipeline, Registry, RunConfig, parse

STUBS = Path(__file__).parent / "stubs"

TFMODEL = """\
[tfmodel]
(in) learn-tf (model)
(model) server (lookup implicit)
(in[10/2]) convert (json)
(json, lookup implicit) predict (result)
"""


def stub(nout: int) -> tuple[str, ...]:
    return (sys.executable, "-S", str(STUBS / "stub.py"), str(nout))


def script(name: str) -> tuple[str, ...]:
    return (sys.executable, "-S", str(STUBS / name))


def stub_bindings(spec, versions=None) -> dict:
    versions = versions or {}
    return {t.name: {"exec": stub(len(t.outputs)), "code_version": versions.get(t.name, "1")}
            for t in spec.tasks}


def make_pipeline(text_or_spec, root: Path, *, seed=0, registry=None, versions=None, **kw) -> Pipeline:
    spec = parse(text_or_spec) if isinstance(text_or_spec, str) else text_or_spec
    store = ContentStore(root / "store")
    config = kw.pop("config", None) or RunConfig(seed=seed)
    bindings = kw.pop("bindings", None) or stub_bindings(spec, versions)
    return Pipeline(spec, store, config=config, registry=Registry() if registry is None else registry, bindings=bindings, **kw)


@pytest.fixture
def store(tmp_path):
    return ContentStore(tmp_path / "store")


@pytest.fixture
def counter(tmp_path, monkeypatch):
    path = tmp_path / "invocations.txt"
    monkeypatch.setenv("STUB_COUNTER", str(path))

    def count(task=None):
        if not path.exists():
            return 0
        lines = path.read_text().split()
        return len(lines) if task is None else lines.count(task)

    return count
