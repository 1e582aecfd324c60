"""Brute-force replay of the snapshot rules, kept apart from smartpipe.links.

Works on plain tuples and list indices only: every arrival ever seen is kept,
and consumption is tracked as counters into those lists.
"""


def replay(slots, mode, bursts, wait_rule="exact"):
    """Snapshots produced when ``bursts`` arrive one burst at a time.

    ``slots``: list of (name, buffer_min, window_size or None, slide or None).
    ``bursts``: list of lists of (slot, time, logical, source_task, id).
    Returns a list of snapshots, each a tuple of (slot, tuple of ids).
    """
    names = [s[0] for s in slots]
    spec = {s[0]: s for s in slots}
    arrived = {n: [] for n in names}
    used = {n: 0 for n in names}      # stream slots: values consumed
    windows = {n: 0 for n in names}   # window slots: windows emitted
    last = {n: None for n in names}
    out = []

    def n_windows(n):
        _, _, size, slide = spec[n]
        k = len(arrived[n])
        return 0 if k < size else (k - size) // slide + 1

    def fresh(n):
        _, need, size, _ = spec[n]
        if size is not None:
            return n_windows(n) > windows[n]
        return len(arrived[n]) - used[n] >= need

    def take(n):
        _, need, size, slide = spec[n]
        if size is not None:
            j = windows[n]
            windows[n] += 1
            vals = tuple(e[4] for e in arrived[n][j * slide: j * slide + size])
        else:
            stop = len(arrived[n]) if wait_rule == "min" else used[n] + need
            vals = tuple(e[4] for e in arrived[n][used[n]:stop])
            used[n] = stop
        last[n] = vals
        return vals

    for burst in bursts:
        for ev in burst:
            arrived[ev[0]].append(ev)
        if mode == "merge":
            # each queue stays FIFO; ties are broken only between queue heads
            while any(used[n] < len(arrived[n]) for n in names):
                heads = []
                for i, n in enumerate(names):
                    if used[n] < len(arrived[n]):
                        e = arrived[n][used[n]]
                        heads.append(((e[1], e[2], e[3], i), n, e[4]))
                _, n, av = min(heads)
                used[n] += 1
                out.append(((n, (av,)),))
            continue
        while True:
            flags = [fresh(n) for n in names]
            if mode == "all_new":
                go = all(flags)
            else:
                go = any(flags) and all(f or last[n] is not None for f, n in zip(flags, names))
            if not go:
                break
            out.append(tuple((n, take(n) if f else last[n]) for f, n in zip(flags, names)))
    return out


def window_count(k, size, slide):
    """Snapshots from one window slot after k arrivals, by enumeration."""
    starts = [j for j in range(0, k) if j % slide == 0 and j + size <= k]
    return len(starts)
