"""Named, reproducible random streams.

Every stream is derived from ``(master seed, label, index)`` so adding a new
experiment or a new replication never perturbs existing streams.
"""

import hashlib

import numpy as np


def _label_words(label):
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def stream(master, label, index=0):
    """Return a ``numpy.random.Generator`` for one named substream."""
    if master < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    entropy = [master & 0xFFFFFFFF, master >> 32, *_label_words(label), index]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def streams(master, label, count, start=0):
    """List of ``count`` independent substreams ``label[start:start+count]``."""
    return [stream(master, label, start + i) for i in range(count)]
