"""Shared store for the per-criterion PASS/FAIL lines."""

LINES = []


def record(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    LINES.append((number, line))
    print(line)
    return ok
