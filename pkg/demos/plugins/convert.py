#!/usr/bin/env python3
"""convert.py <sample>... <json>: one JSON batch from a window of samples."""
import json
import sys

*ins, out = sys.argv[1:]
json.dump([open(p, encoding="utf-8", errors="replace").read().strip() for p in ins], open(out, "w"))
