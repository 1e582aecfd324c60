# %% [markdown]
# Ghost runs and the three provenance views
#
# The tfmodel topology couples a training pipeline to a prediction pipeline
# through a lookup service.  A ghost run sends payload-free values through
# to show where data would go, without running any user code.

# %%
import tempfile
from pathlib import Path

from smartpipe import CommandService, ContentStore, Pipeline, Registry, RunConfig, parse
from smartpipe.cli import load_config
from smartpipe.manager import load_events

HERE = Path(__file__).resolve().parent / "tfmodel"
spec = parse((HERE / "tfmodel.wiring").read_text())
cfg = load_config(str(HERE / "config.yaml"))
events = load_events(HERE / "events.txt")


def build(root: Path, registry: Registry | None = None) -> Pipeline:
    return Pipeline(spec, ContentStore(root / "store"), config=RunConfig(seed=2019),
                    registry=registry, bindings=cfg["tasks"],
                    services={"lookup": CommandService(cfg["services"]["lookup"]["exec"])})


root = Path(tempfile.mkdtemp(prefix="smartpipe-demo-"))
ghost = build(root / "ghost").ghost_run(events)
print(ghost.summary())
for entry in ghost.routing[:6]:
    print(entry)

# %% [markdown]
# The real run takes the same routes.

# %%
reg = Registry(root / "registry.jsonl")
real_pipe = build(root / "real", reg)
real = real_pipe.run_reactive(events)
print("routing identical:", real.routing == ghost.routing)
print(real.summary())

# %% [markdown]
# Story one, the traveller log: how a result came to be, hop by hop back to
# the ingested samples, with code versions and lookup digests.

# %%
result = real.terminal[-1]
print(reg.render_traveller(result.id)[:1200])

# %% [markdown]
# Story two, the checkpoint log of one task as its executions saw it.

# %%
print(reg.render_checkpoint("predict"))

# %% [markdown]
# Story three, the invariant concept map.

# %%
print(reg.render_concept_map())

# %% [markdown]
# Queries are exact field matches, never text patterns.

# %%
for ev in reg.query({"kind": "implicit_lookup", "task": "predict"}):
    print(ev.seq, ev.wire, ev.payload)
print(len(reg.query({"kind": "cache_hit"})), "cache replays")
