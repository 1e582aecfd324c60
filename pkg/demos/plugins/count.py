#!/usr/bin/env python3
"""count.py <in>... <out>: total byte count of the inputs."""
import os
import sys

*ins, out = sys.argv[1:]
open(out, "w").write(f"{sum(os.path.getsize(p) for p in ins)}\n")
