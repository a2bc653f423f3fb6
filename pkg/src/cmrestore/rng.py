"""Seeded, counter-based random streams with a fixed splitting rule.

Every random draw in the library comes from a Philox generator keyed by
``(seed, purpose, *extra)``. Streams are therefore independent of thread
count and call order: the same (seed, config) always reproduces the same
trajectory. Purposes:

* ``INIT``        -- the sampler's initialization draw
* ``STEP``        -- one substream per sampler step, keyed by the step index
                     n (counting N..1 as executed)
* ``MEASUREMENT`` -- measurement noise added by ``degrade``
* ``MASK``        -- inpainting mask generation
* ``MARGINAL``    -- the marginal-preservation Monte Carlo simulator
"""

import numpy as np

INIT = 0
STEP = 1
MEASUREMENT = 2
MASK = 3
MARGINAL = 4


def stream(seed, purpose, *extra):
    """Return an independent Generator for (seed, purpose, *extra)."""
    seq = np.random.SeedSequence([int(seed), int(purpose), *[int(e) for e in extra]])
    return np.random.Generator(np.random.Philox(seq))
