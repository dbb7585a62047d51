"""Named, order-independent seed derivation from one master seed."""

import hashlib

import numpy as np


def derive_seed(master: int, name: str) -> int:
    digest = hashlib.sha256(f"{int(master)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def stream(master: int, name: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, name))
