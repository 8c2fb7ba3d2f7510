"""Named random substreams derived from one root seed."""
from __future__ import annotations

import zlib

import numpy as np


def substream_seed(root: int, name: str) -> np.random.SeedSequence:
    """``SeedSequence`` for a slash-separated stream name such as ``impute/bear7/3``."""
    words = [zlib.crc32(part.encode("utf-8")) for part in str(name).split("/")]
    return np.random.SeedSequence([int(root) & 0xFFFFFFFF, int(root) >> 32 & 0xFFFFFFFF, *words])


def substream(root: int, name: str) -> np.random.Generator:
    return np.random.default_rng(substream_seed(root, name))
