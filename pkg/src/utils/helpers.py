import logging
import zlib
from typing import Union

import numpy as np

SeedKey = Union[int, str]


def setup_logging(name: str, level: int = logging.INFO) -> logging.Logger:
    """
    Configure and return a named logger.

    Args:
        name: Logger name
        level: Logging level

    Returns:
        The configured logger
    """
    logger = logging.getLogger(name)

    # Avoid stacking handlers on repeated calls
    if logger.handlers:
        return logger

    logger.setLevel(level)

    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)

    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    console_handler.setFormatter(formatter)

    logger.addHandler(console_handler)

    return logger


def _key_to_int(key: SeedKey) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"Seed keys must be non-negative, got {key}")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def derive_seed(seed: int, *keys: SeedKey) -> int:
    """
    Derive a stable 32-bit integer seed for a named purpose.

    Args:
        seed: Run seed
        *keys: Purpose labels and indices (e.g. "local", round, client)

    Returns:
        Integer seed that depends only on the arguments
    """
    sequence = np.random.SeedSequence([_key_to_int(seed), *(_key_to_int(k) for k in keys)])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def derive_rng(seed: int, *keys: SeedKey) -> np.random.Generator:
    """
    Build an independent random stream for a named purpose.

    Streams never share state, so work that draws from them can run in any
    order or in parallel and still produce identical numbers.

    Args:
        seed: Run seed
        *keys: Purpose labels and indices

    Returns:
        A fresh numpy Generator
    """
    sequence = np.random.SeedSequence([_key_to_int(seed), *(_key_to_int(k) for k in keys)])
    return np.random.default_rng(sequence)
