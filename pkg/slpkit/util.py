#!/usr/bin/env python3

import os
import numpy as np

from .errors import ConfigError

def rng_from(*keys):
    """
    Return a numpy random generator seeded by the given sequence of
    non-negative integers.

    Every source of randomness in the package goes through this function, so
    that streams can be derived deterministically from a run seed plus the
    identity of whatever is being randomized (an epoch, an example index, a
    character, etc.).  Streams derived from different key sequences are
    statistically independent.
    """
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))

def seed_from(*keys):
    """
    Derive a single 32-bit seed from a sequence of integer keys.
    """
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(1)
    return int(state[0])

def default_seed():
    """
    The seed to use when none was given on the command line or in a config
    file: the value of ``$SLP_SEED``, or 0.
    """
    value = os.environ.get('SLP_SEED', '0')
    try:
        seed = int(value)
    except ValueError:
        raise ConfigError(f"$SLP_SEED must be a non-negative integer, not {value!r}") from None
    if seed < 0:
        raise ConfigError(f"$SLP_SEED must be a non-negative integer, not {value!r}")
    return seed

def format_float(x):
    # repr() gives the shortest string that round-trips, so every file we
    # write is byte-identical between runs that compute identical numbers.
    return repr(float(x))
