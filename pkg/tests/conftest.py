import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def numeric_grad(f, x, h_scale=1e-5):
    """Central differences of scalar f at array x (perturbs x in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        h = h_scale * (1.0 + abs(old))
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def max_rel_err(a, b, floor=1e-6):
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def model_grad_error(cfg, seed=0, batch=3):
    """Max relative error of all model parameter gradients vs central differences.

    Loss is the end-to-end BCE through a noisy channel with fixed fading and noise.
    """
    from aeat.model import LinkBudget, forward_end_to_end, init_params
    from aeat.numerics import backward

    g = np.random.default_rng(seed)
    P = init_params(cfg, g)
    bits = (g.random((batch, cfg.N)) < 0.5).astype(float)
    states = g.random((batch, cfg.env_dim))
    h = g.uniform(0.5, 1.5, batch)
    noise = g.standard_normal((batch, cfg.K))
    link = LinkBudget(amplitude=1.0, sigma_w=0.3, mean_h=1.0)

    def loss():
        return forward_end_to_end(P, cfg, bits, states, h, link, noise=noise).bce

    P.zero_grad()
    backward(loss())
    worst = 0.0
    for name, t in P.items():
        num = numeric_grad(lambda: float(loss().data), t.data)
        # single-token cross-attention never touches the query/key weights
        grad = np.zeros_like(num) if t.grad is None else t.grad
        worst = max(worst, max_rel_err(grad, num))
    return worst


def smoke_configs(seed=0):
    """Tiny noiseless training setup shared by the train and acceptance tests."""
    from aeat.model import ModelConfig
    from aeat.train import TrainConfig

    return (ModelConfig(T=4, d=8, heads=2, layers=1, d_in=2),
            TrainConfig(epochs=1, steps_per_epoch=200, lr=1e-2, noiseless=True, seed=seed))


# --- acceptance reporting --------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}
CACHE_DIR = __import__("pathlib").Path(__file__).resolve().parents[1] / ".acceptance_cache"


def record_criterion(number: int, passed: bool, detail: str) -> bool:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def acceptance_cache():
    import os

    return os.environ.get("AEAT_ACCEPTANCE_CACHE", str(CACHE_DIR))
