"""Stable identifiers and random substreams.

Every randomised step draws from a numpy ``Generator(PCG64)`` seeded through
``SeedSequence(entropy=seed, spawn_key=substream_ids)``. String substream ids
are first reduced to integers with MD5, so the same (seed, substream) pair gives
the same draws on every platform."""

import json
import hashlib
from pathlib import Path
from typing import Union

import numpy as np


SubstreamId = Union[int, str]


def substream_key(substream_id: SubstreamId) -> int:

    if isinstance(substream_id, (int, np.integer)):
        assert substream_id >= 0, f"negative substream id {substream_id}"
        return int(substream_id)

    hexdigest = hashlib.md5(str(substream_id).encode("utf-8")).hexdigest()

    return int(hexdigest[:16], 16)


def seed_sequence(seed: int, *substream_ids: SubstreamId) -> np.random.SeedSequence:

    spawn_key = tuple(substream_key(s) for s in substream_ids)

    return np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key)


def substream_seed(seed: int, *substream_ids: SubstreamId) -> int:
    """A 64-bit seed derived from seed and the substream path."""

    state = seed_sequence(seed, *substream_ids).generate_state(2, dtype=np.uint32)

    return (int(state[0]) << 32) | int(state[1])


def make_rng(seed: int, *substream_ids: SubstreamId) -> np.random.Generator:

    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *substream_ids)))


def canonical_json(obj) -> str:

    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_key(hp) -> str:
    """Canonical text for a hyperparameter point, used to deduplicate samples."""

    return canonical_json(json.loads(hp.json()))


def space_descriptor(domains: dict) -> str:

    return hashlib.sha256(canonical_json(domains).encode("utf-8")).hexdigest()


def sha256_file(fpath: Path) -> str:

    digest = hashlib.sha256()
    with open(fpath, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)

    return digest.hexdigest()
