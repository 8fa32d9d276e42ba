"""Seed splitting: one user seed, independent labeled substreams."""

import random
import zlib

import numpy as np


def _entropy(seed, label):
    return [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(label.encode("ascii"))]


def substream(seed, label):
    """Return a numpy Generator for the substream ``label`` of ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(_entropy(seed, label))))


def py_substream(seed, label):
    """Same as :func:`substream` but a stdlib ``random.Random``."""
    ss = np.random.SeedSequence(_entropy(seed, label))
    return random.Random(int(ss.generate_state(2, np.uint64)[0]))
