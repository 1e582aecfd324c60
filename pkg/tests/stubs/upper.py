"""Service adapter: echoes the request upper-cased, prefixed with a tag."""
import sys

data = sys.stdin.buffer.read()
sys.stdout.buffer.write(b"svc:" + data.upper())
