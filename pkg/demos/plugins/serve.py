#!/usr/bin/env python3
"""serve.py <model>: publishes the model; the lookup service reads it from disk."""
import os
import shutil
import sys

dest = os.environ.get("DEMO_MODEL_PATH")
if dest:
    shutil.copyfile(sys.argv[1], dest)
print("[remarked: : model published]", file=sys.stderr)
