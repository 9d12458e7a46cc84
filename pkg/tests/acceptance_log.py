"""Collects one verdict line per acceptance criterion for the terminal summary."""
LINES = {}


def record(n, title, ok, detail):
    LINES[n] = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    return ok
