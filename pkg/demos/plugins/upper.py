#!/usr/bin/env python3
"""upper.py <in>... <out>: concatenated inputs in upper case."""
import sys

*ins, out = sys.argv[1:]
with open(out, "wb") as fh:
    for p in ins:
        fh.write(open(p, "rb").read().upper())
