"""Named, independent RNG streams derived from one master seed.

Every source of randomness in a run gets its own stream so that toggling a
component (say, the surrogate) cannot shift the draws any other component
sees.  Streams are derived statelessly from the master seed via
``numpy.random.SeedSequence`` spawn keys:

    (STREAM_INIT,)                  uniform initialization of the parents
    (STREAM_SAMPLING, pid)          offspring sampling, one stateful stream
                                    per search process
    (STREAM_EMBEDDING, gen, pid)    seed for the embedding matrix of that
                                    process-iteration
    (STREAM_SURROGATE, gen, pid)    pre-selection tie-break draws
    (STREAM_EPISODES, gen, pid)     episode seeds for training evaluations
                                    (gen 0 = initialization)
    (STREAM_TEST, episode)          episode seeds for post-run test scoring

All keys except STREAM_SAMPLING are rederived on demand, which keeps
resumed runs and concurrent schedules on identical draws.
"""

import numpy as np

STREAM_INIT = 1
STREAM_SAMPLING = 2
STREAM_EMBEDDING = 3
STREAM_SURROGATE = 4
STREAM_EPISODES = 5
STREAM_TEST = 6


def stream_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Fresh PCG64 generator for the named stream ``key``."""
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def stream_seed(master_seed: int, *key: int) -> int:
    """A 64-bit integer seed derived for the named stream ``key``."""
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
