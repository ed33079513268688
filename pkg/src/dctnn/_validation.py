import numpy as np
from sklearn.utils import check_array


def check_tensor_batch(X, sample_shape=None, name="X"):
    """Validate a batch of tensors, shape ``(n, D_1, ..., D_M)``, as float64."""
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64,
                    ensure_min_samples=1, input_name=name)
    if X.ndim < 2:
        raise ValueError(f"{name} must have a sample axis plus at least one mode, got {X.shape}")
    if sample_shape is not None and X.shape[1:] != tuple(sample_shape):
        raise ValueError(f"{name} has sample shape {X.shape[1:]}, expected {tuple(sample_shape)}")
    return np.ascontiguousarray(X)


def check_binary_labels(y, n):
    y = np.asarray(y).ravel()
    if y.shape[0] != n:
        raise ValueError(f"got {y.shape[0]} labels for {n} samples")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be 0/1")
    return y.astype(np.int64)
