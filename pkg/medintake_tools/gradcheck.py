"""Analytic gradients of the full network against central finite differences,
on tiny float64 models."""

import logging
from typing import Dict

import numpy as np
from pydantic import BaseModel

from .errors import NumericError
from .identifiers import make_rng, substream_seed
from .model import HyperParams, build_model, forward_params
from .nn_core import backward, mean_cross_entropy


logger = logging.getLogger(__name__)


GRADCHECK_TOLERANCE = 1e-4
FD_STEP = 1e-5
# Below this magnitude, gradients are compared by absolute error
GRADIENT_FLOOR = 1e-5
TINY_DIM = 8
TINY_LENGTH = 12
TINY_BATCH = 3
TINY_KEEP_PROBS = (0.5, 0.7, 0.9, 1.0)


class GradcheckResult(BaseModel):
    max_error: float
    worst_tensor: str
    worst_case: int
    n_cases: int

    @property
    def passed(self) -> bool:
        return self.max_error < GRADCHECK_TOLERANCE


def tiny_hyperparams(keep_prob: float) -> HyperParams:

    return HyperParams(
        adam_b2=0.999,
        n_dense_output=6,
        keep_prob=keep_prob,
        batch_size=TINY_BATCH,
        learning_rate=0.001,
        word_embedding="godin",
        n_filters=4,
        filter_sizes=(1, 2, 2, 2, 3)
    )


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest per-entry relative error, |a - n| / max(|a| + |n|, GRADIENT_FLOOR)."""

    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    if analytic.size == 0:
        return 0.0
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), GRADIENT_FLOOR)

    return float((np.abs(analytic - numeric) / scale).max())


def numeric_gradients(loss_fn, params: Dict[str, np.ndarray], step: float = FD_STEP) -> Dict[str, np.ndarray]:
    """Central differences of loss_fn(params) for every parameter entry."""

    grads = {}
    for name, theta in params.items():
        grad = np.zeros_like(theta)
        for index in np.ndindex(theta.shape):
            original = theta[index]
            theta[index] = original + step
            plus = loss_fn(params)
            theta[index] = original - step
            minus = loss_fn(params)
            theta[index] = original
            grad[index] = (plus - minus) / (2 * step)
        grads[name] = grad

    return grads


def check_case(seed: int, case: int) -> Dict[str, float]:
    """Worst per-entry relative error of each tensor, for one random model, batch and dropout mask."""

    rng = make_rng(seed, "gradcheck", case)
    hp = tiny_hyperparams(TINY_KEEP_PROBS[int(rng.integers(len(TINY_KEEP_PROBS)))])
    model = build_model(hp, TINY_DIM, substream_seed(seed, "gradcheck", case), restricted=False, dtype=np.float64)
    params = {name: p.copy() for name, p in model.params.items()}

    # Biases away from zero so ReLU units are not all at their kink
    for name in params:
        if name.endswith("_b"):
            params[name] = rng.normal(0.0, 0.1, params[name].shape)

    docs = rng.normal(0.0, 1.0, (TINY_BATCH, TINY_LENGTH, TINY_DIM))
    golds = rng.integers(1, 4, size=TINY_BATCH)

    def loss_fn(candidate):
        probs, _ = forward_params(candidate, hp, docs, True, make_rng(seed, "gradcheck", case, "dropout"))
        return mean_cross_entropy(probs, golds)

    _, cache = forward_params(params, hp, docs, True, make_rng(seed, "gradcheck", case, "dropout"))
    analytic = backward(params, cache, golds)
    numeric = numeric_gradients(loss_fn, params)

    return {name: relative_error(analytic[name], numeric[name]) for name in params}


def run_gradcheck(seed: int, n_cases: int = 25) -> GradcheckResult:

    worst = (0.0, "", 0)
    for case in range(n_cases):
        errors = check_case(seed, case)
        name = max(errors, key=errors.get)
        logger.debug(f"gradcheck case {case}: worst {name} {errors[name]:.3e}")
        if errors[name] > worst[0] or not worst[1]:
            worst = (errors[name], name, case)

    result = GradcheckResult(max_error=worst[0], worst_tensor=worst[1], worst_case=worst[2], n_cases=n_cases)
    logger.info(f"gradcheck: max relative error {result.max_error:.3e} ({result.worst_tensor}, case {result.worst_case})")

    return result


def assert_gradients(seed: int, n_cases: int = 25) -> GradcheckResult:

    result = run_gradcheck(seed, n_cases)
    if not result.passed:
        raise NumericError(
            f"gradient check failed: relative error {result.max_error:.3e} in {result.worst_tensor} "
            f"(case {result.worst_case}) exceeds {GRADCHECK_TOLERANCE:g}"
        )

    return result
