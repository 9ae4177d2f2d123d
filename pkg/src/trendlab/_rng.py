"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, domain, index)``, so a
replicate or an asset draws the same numbers no matter which worker runs it
or in which order.
"""
import numpy as np

SIMULATION = 0
BOOTSTRAP = 1
CALIBRATION = 2


def stream(seed: int, domain: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(domain), int(index)))
    return np.random.Generator(np.random.Philox(ss))
