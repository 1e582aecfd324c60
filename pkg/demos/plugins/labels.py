#!/usr/bin/env python3
"""Lookup service: prints the label table; the request on stdin is ignored."""
print("cat dog bird fish")
