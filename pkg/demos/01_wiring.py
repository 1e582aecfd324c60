# %% [markdown]
# Wiring a pipeline
#
# A pipeline is a text file with one task per line: inputs in parentheses,
# the task name, then outputs.  `name[N]` asks for N values per execution,
# `name[N/S]` for a sliding window, and `name implicit` marks a lookup
# service rather than a data stream.

# %%
from pathlib import Path

from smartpipe import adjacency, parse, render, validate
from smartpipe.cli import graph_text

HERE = Path(__file__).resolve().parent
spec = parse((HERE / "tfmodel" / "tfmodel.wiring").read_text())
print(spec.name, spec.task_names)
print("convert reads", spec.task("convert").inputs[0])

# %% [markdown]
# Validation reports sources, dangling outputs and cycles.  Only errors
# stop a run.

# %%
for d in validate(spec):
    print(d)

# %% [markdown]
# The task graph as sparse matrices: one for data wires, one for implicit
# links.  Entry (a, b) counts wires from task a into task b.

# %%
adj = adjacency(spec)
print(adj.tasks)
print(adj.data.toarray())
print(adj.implicit.toarray())
print("wires per task pair:", int(adj.data.sum()), "data,", int(adj.implicit.sum()), "implicit")
cols = adj.data.tocsc()
print("tasks with no upstream task:", [t for j, t in enumerate(adj.tasks) if cols[:, j].nnz == 0])

# %% [markdown]
# Rendering is canonical, so parse and render round trip.

# %%
assert parse(render(spec)) == spec
print(render(spec))

# %% [markdown]
# Graphviz text for external drawing; implicit links are dashed.

# %%
print(graph_text(spec))

# %% [markdown]
# Feedback loops are legal and reported for information.

# %%
loop = parse("(a) refine (b)\n(b) check (a)\n")
print([str(d) for d in validate(loop)])
