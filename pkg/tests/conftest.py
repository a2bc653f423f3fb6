import numpy as np
import pytest

# (i_n, gamma, delta vector, zeta) rows of the tuned four-step settings,
# bedroom and cat columns pooled
TUNED_ROWS = [
    (400, 0.7, (0.0, 0.5, 0.1, 0.0), 0.0),
    (400, 0.7, (0.0, 0.3, 0.0, 0.0), 0.0),
    (250, 0.2, (0.0, 0.3, 0.05, 0.1), 0.0),
    (250, 0.2, (0.1, 0.1, 0.0, 0.0), 0.0),
    (90, 0.02, (0.0, 0.0, 0.0, 0.0), 3.0),
    (100, 0.03, (0.0, 0.0, 0.0, 0.0), 4.0),
    (160, 0.07, (0.0, 0.0, 0.0, 0.0), 1.5),
    (180, 0.1, (0.0, 0.0, 0.0, 0.0), 2.0),
    (150, 0.2, (0.1, 0.1, 0.8, 0.8), 0.0),
    (150, 0.2, (0.2, 0.3, 0.8, 0.8), 0.0),
    (150, 0.2, (0.2, 0.1, 1.0, 1.0), 0.0),
    (150, 0.2, (0.0, 0.0, 1.0, 1.0), 0.0),
]


@pytest.fixture
def textured_mean():
    """A 32x32x3 prior mean with energy across the spectrum (so the
    super-resolution null space is not empty)."""
    h = w = 32
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    base = (0.5
            + 0.18 * np.sin(2 * np.pi * ii * 7 / h) * np.cos(2 * np.pi * jj * 11 / w)
            + 0.12 * ((ii + jj) % 2) - 0.06)
    return np.stack([base, np.roll(base, 3, 0), np.roll(base, 5, 1)], axis=-1)
