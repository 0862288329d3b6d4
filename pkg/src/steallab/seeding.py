"""Named RNG substreams derived from one master seed."""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("data", "victim-init", "victim-train", "clone-init", "generator-init", "z-stream", "unbalance")


def subseed(master: int, name: str) -> int:
    ss = np.random.SeedSequence([int(master), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def substream(master: int, name: str) -> np.random.Generator:
    return np.random.default_rng(subseed(master, name))
