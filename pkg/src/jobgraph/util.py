"""Small shared helpers: stable seed mixing and key/value report writing."""

from __future__ import annotations

from typing import Iterable, Mapping

_MASK64 = (1 << 64) - 1


def mix_seed(*parts: int) -> int:
    """Fold integers into one 63-bit seed, stable across runs and platforms.

    Python's builtin ``hash`` is salted per process, so derived RNG streams
    (per epoch, per query node, per eval draw) go through this instead.
    Uses splitmix64 steps over each part.
    """
    state = 0x9E3779B97F4A7C15
    for part in parts:
        state = (state ^ (part & _MASK64)) & _MASK64
        state = (state + 0x9E3779B97F4A7C15) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        state = z ^ (z >> 31)
    return state & ((1 << 63) - 1)


def format_kv(items: Mapping[str, object]) -> str:
    """Render a mapping as ``key: value`` lines (the report text format)."""
    return "".join(f"{key}: {value}\n" for key, value in items.items())


def write_lines(path: str, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line)
            if not line.endswith("\n"):
                fh.write("\n")
