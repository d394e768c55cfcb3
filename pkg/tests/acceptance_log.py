"""Collects one verdict line per acceptance criterion for the terminal summary."""
from __future__ import annotations

RESULTS: dict[tuple[int, str], tuple[bool, str]] = {}


def record(n: int | tuple[int, str], ok: bool, detail: str) -> None:
    key = n if isinstance(n, tuple) else (n, "")
    RESULTS[key] = (ok, detail)
    print(line(key))


def line(key: tuple[int, str]) -> str:
    ok, detail = RESULTS[key]
    name = f"{key[0]:2d}" + (f" ({key[1]})" if key[1] else "")
    return f"criterion {name}: {'PASS' if ok else 'FAIL'}  {detail}"
