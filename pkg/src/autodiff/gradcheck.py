"""Central finite-difference gradient checking."""

from collections.abc import Callable

import numpy as np

from src.autodiff.tensor import Tensor, no_grad


def numerical_gradient(
    fn: Callable[[], Tensor],
    tensor: Tensor,
    h: float = 1e-5,
    indices: list[tuple[int, ...]] | None = None,
) -> np.ndarray:
    """Estimate d fn() / d tensor by central differences.

    Args:
        fn: Recomputes the scalar loss from scratch on every call
        tensor: Leaf whose data is perturbed in place (and restored)
        h: Step size
        indices: Entries to perturb; all entries when omitted

    Returns:
        Array shaped like ``tensor`` (skipped entries are zero)
    """
    grad = np.zeros_like(tensor.data)
    entries = indices if indices is not None else list(np.ndindex(tensor.shape))
    with no_grad():
        for idx in entries:
            original = tensor.data[idx]
            tensor.data[idx] = original + h
            plus = fn().item()
            tensor.data[idx] = original - h
            minus = fn().item()
            tensor.data[idx] = original
            grad[idx] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    if analytic.size == 0:
        return 0.0
    return float((np.abs(analytic - numeric) / denom).max())


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-5,
    samples_per_param: int | None = None,
    seed: int = 0,
) -> dict[str, float]:
    """Compare backward() with finite differences for each named tensor.

    Args:
        loss_fn: Deterministic closure building the scalar loss
        params: Named leaves to check
        h: Finite-difference step
        samples_per_param: Check at most this many random entries per tensor
        seed: Seed for choosing the checked entries

    Returns:
        Mapping of name to relative error over the checked entries
    """
    for p in params.values():
        p.grad = None
    loss_fn().backward()

    rng = np.random.default_rng(seed)
    errors: dict[str, float] = {}
    for name, tensor in params.items():
        all_idx = list(np.ndindex(tensor.shape))
        if samples_per_param is not None and len(all_idx) > samples_per_param:
            chosen = rng.choice(len(all_idx), size=samples_per_param, replace=False)
            entries = [all_idx[i] for i in sorted(chosen)]
        else:
            entries = all_idx
        numeric = numerical_gradient(loss_fn, tensor, h=h, indices=entries)
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        rows = tuple(np.array(axis) for axis in zip(*entries)) if entries and tensor.ndim else ()
        if tensor.ndim == 0:
            errors[name] = relative_error(analytic, numeric)
        else:
            errors[name] = relative_error(analytic[rows], numeric[rows])
    return errors
