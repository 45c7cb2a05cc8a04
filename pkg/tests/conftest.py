import numpy as np

from zeroshap import base_models as bm


def random_mlp(m, seed, hidden=16):
    """Untrained MLP with random weights; cheap nonlinear predictor for tests."""
    rng = np.random.default_rng(seed)
    return bm.MlpModel(
        weights=[rng.normal(0, 0.8, size=(m, hidden)), rng.normal(0, 0.8, size=(hidden, 1))],
        biases=[rng.normal(0, 0.3, size=hidden), rng.normal(0, 0.3, size=1)],
        config=bm.MlpConfig(hidden_sizes=(hidden,)),
    )
