# %% [markdown]
# Snapshot policies
#
# Each task owns one queue per input.  A policy decides when queued values
# become an execution set.

# %%
from smartpipe import LinkState, SnapshotPolicy
from smartpipe.store import Minter
from smartpipe.wiring import InputSlot

mint = Minter(seed=0)


def arrive(link, wire, n, t):
    av = mint.mint("src", wire, f"cas:{wire}{n}", "-")
    link.enqueue(wire, av, now=t)
    return av


def show(label, snaps, names):
    for s in snaps:
        print(label, {slot: [names[av.id] for av in avs] for slot, avs in s.slots})


# %% [markdown]
# all_new never reuses a value; a lone arrival on one side waits.

# %%
names = {}
link = LinkState([InputSlot("a"), InputSlot("b")])
for wire, n, t in [("a", 1, 0.0), ("b", 1, 1.0), ("a", 2, 2.0)]:
    names[arrive(link, wire, n, t).id] = f"{wire}{n}"
show("all_new", link.drain(SnapshotPolicy("all_new")), names)
print("left waiting:", link.pending())

# %% [markdown]
# swap_new_for_old behaves like make: any new value triggers, and the other
# slots repeat their previous values.

# %%
link = LinkState([InputSlot("a"), InputSlot("b")])
pol = SnapshotPolicy("swap_new_for_old")
for wire, n, t in [("a", 1, 0.0), ("b", 1, 1.0), ("a", 2, 2.0)]:
    names[arrive(link, wire, n, t).id] = f"{wire}{n}"
    show("swap   ", link.drain(pol), names)

# %% [markdown]
# merge interleaves all inputs into one first-come-first-served stream.

# %%
link = LinkState([InputSlot("a"), InputSlot("b")])
for wire, n, t in [("b", 1, 0.5), ("a", 1, 0.0), ("a", 2, 3.0)]:
    names[arrive(link, wire, n, t).id] = f"{wire}{n}"
show("merge  ", link.drain(SnapshotPolicy("merge")), names)

# %% [markdown]
# A [10/2] window fires after 10 arrivals and again every 2 more.

# %%
link = LinkState([InputSlot("in", window_size=10, slide=2)])
counts = []
for k in range(1, 21):
    arrive(link, "in", k, float(k))
    counts.append(len(link.drain(SnapshotPolicy())))
print("snapshots per arrival:", counts)
print("total after 20:", sum(counts), "closed form:", (20 - 10) // 2 + 1)

# %% [markdown]
# Slow links notify, busy links are polled: the ratio of mean
# inter-arrival time to service time decides.

# %%
slow, busy = LinkState([InputSlot("x")]), LinkState([InputSlot("x")])
for i in range(5):
    arrive(slow, "x", i, 10.0 * i)
    arrive(busy, "x", i, 0.1 * i)
print("slow link notifies:", slow.should_notify(service_time=0.1, threshold=10))
print("busy link notifies:", busy.should_notify(service_time=0.1, threshold=10))
