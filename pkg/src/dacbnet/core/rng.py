"""Seeded random streams.

All randomness goes through numpy's Philox4x64 counter-based generator, which
yields the same sequence on every platform for a given seed. Independent
sub-streams are derived by name so that, e.g., adding an augmentation draw does
not shift the weight initialization.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

ALGORITHM = "philox4x64-10"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def derive_seed(seed: int, *names) -> int:
    """Stable 64-bit seed for a named sub-stream of ``seed``."""
    key = json.dumps([int(seed), *map(str, names)]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


def substream(seed: int, *names) -> np.random.Generator:
    return make_rng(derive_seed(seed, *names))


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, np.ndarray):
        return [int(v) for v in value]
    if isinstance(value, np.integer):
        return int(value)
    return value


def rng_state(rng: np.random.Generator) -> dict:
    """JSON-serializable generator state."""
    return _plain(rng.bit_generator.state)


def restore_rng(state: dict) -> np.random.Generator:
    if state.get("bit_generator") != "Philox":
        raise ValueError(f"unsupported generator state {state.get('bit_generator')!r}")
    st = dict(state)
    inner = {k: np.array(v, dtype=np.uint64) for k, v in state["state"].items()}
    st["state"] = inner
    st["buffer"] = np.array(state["buffer"], dtype=np.uint64)
    bg = np.random.Philox()
    bg.state = st
    return np.random.Generator(bg)
