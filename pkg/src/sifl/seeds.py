"""Deterministic seed derivation.

A single master seed fans out to one independent stream per (purpose, indices)
label via a splitmix64-style mixer. The derivation is pure arithmetic on u64
values, so the same master seed reproduces the same streams on any platform.

Purposes used by the harness (documented here because exact reproducibility is
part of the interface):

===================  =========================================================
``init-w0``          initial global model draw
``keys-server``      server key generation
``keys-agg``         aggregator key generation
``batch i t``        client *i*'s minibatch shuffling in round *t*
                     (mode-independent, so all modes see the same batches)
``server-noise t``   server-side kernel noise (r1 / R1) for round *t*
``agg-noise t``      aggregator-side kernel noise (R2) for round *t*
``baseline-noise i t``  additive noise of the noisy-baseline mode
``synth``            synthetic dataset generation
``partition``        client partition shuffle
===================  =========================================================
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One splitmix64 output step for the u64 state ``x``."""
    x = (x + _GAMMA) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _token(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & _MASK64
    if isinstance(part, str):
        digest = hashlib.blake2b(part.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    raise TypeError(f"seed parts must be int or str, got {type(part).__name__}")


def derive_seed(master: int, *parts) -> int:
    """Mix ``master`` with a label made of ints/strings into a new u64 seed."""
    state = splitmix64(int(master) & _MASK64)
    for part in parts:
        state = splitmix64(state ^ _token(part))
    return state


def derive_rng(master: int, *parts) -> np.random.Generator:
    """A PCG64 generator seeded from :func:`derive_seed`."""
    return np.random.default_rng(derive_seed(master, *parts))
