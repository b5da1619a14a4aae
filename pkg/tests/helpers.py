import numpy as np

from deepsurfels import Camera


def simple_camera(width=4, height=4, f=1.0, c=0.0, T=None):
    K = np.array([[f, 0.0, c], [0.0, f, c], [0.0, 0.0, 1.0]])
    return Camera(K, np.eye(4) if T is None else T, width, height)


def random_features(model, seed=0):
    m = model.copy()
    rng = np.random.default_rng(seed)
    m.features[...] = rng.random(m.features.shape, dtype=np.float32)
    m.weights[...] = 1.0
    return m
