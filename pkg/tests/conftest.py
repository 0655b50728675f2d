import numpy as np
import pytest

from divnet.data import SyntheticConfig, generate_synthetic
from divnet.model import DivNetParams, ModelConfig, RankingInstance

FD_H = 1e-6
FD_REL_TOL = 1e-4
# denominator floor: below this scale the central-difference quotient is
# dominated by floating-point cancellation noise, not by the derivative
FD_DENOM_FLOOR = 1e-4


def finite_difference_check(loss_fn, tensors, h=FD_H, rel_tol=FD_REL_TOL):
    """Compare analytic grads of loss_fn() against central differences over
    every entry of the given tensors. loss_fn must be re-evaluable."""
    for t in tensors:
        t.zero_grad()
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for t in tensors:
        flat = t.data.reshape(-1)
        grad = t.grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = float(loss_fn().data)
            flat[i] = orig - h
            lm = float(loss_fn().data)
            flat[i] = orig
            fd = (lp - lm) / (2 * h)
            rel = abs(fd - grad[i]) / max(abs(fd), abs(grad[i]), FD_DENOM_FLOOR)
            worst = max(worst, rel)
            assert rel < rel_tol, (
                f"gradient mismatch: analytic {grad[i]}, fd {fd}, rel {rel}")
    return worst


def random_instance(rng, n=None, m=4, k=2, max_n=8):
    n = n if n is not None else int(rng.integers(1, max_n + 1))
    grades = rng.integers(0, 5, size=n)
    return RankingInstance(
        query_id=f"q{rng.integers(1e9)}",
        item_features=rng.normal(size=(n, m)),
        user_features=rng.normal(size=k),
        relevance_grades=grades,
        click_labels=(grades >= 3).astype(int),
    )


@pytest.fixture
def tiny_config():
    return ModelConfig(item_dim=4, user_dim=2, d_k=4, d_v=4, alpha=0.1)


@pytest.fixture
def tiny_params(tiny_config):
    return DivNetParams.init(tiny_config, seed=1)


@pytest.fixture
def tiny_instance():
    rng = np.random.default_rng(42)
    return random_instance(rng, n=4)


@pytest.fixture(scope="session")
def synthetic_corpus():
    cfg = SyntheticConfig(num_items=8, seed=0)
    instances, meta = generate_synthetic(cfg, 60)
    return cfg, instances, meta
