#!/usr/bin/env python3
"""predict.py <json> <lookup> <result>: label every sample in the batch."""
import json
import sys

batch_path, lookup_path, out = sys.argv[1:]
batch = json.load(open(batch_path))
labels = open(lookup_path).read().split()
with open(out, "w") as fh:
    for item in batch:
        fh.write(f"{item}\t{labels[len(item) % len(labels)]}\n")
print(f"labelled {len(batch)} items with {len(labels)} labels", file=sys.stderr)
