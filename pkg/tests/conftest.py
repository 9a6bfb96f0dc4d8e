import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("psm", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("psm")

# Toy MDP vectors below are written in action-major order (a0 over s0,s1 then
# a1 over s0,s1); the code flattens state-major (s*|A| + a).
ACTION_TO_STATE_MAJOR = [0, 2, 1, 3]


def state_major(v):
    return np.asarray(v, dtype=np.float64)[ACTION_TO_STATE_MAJOR]


def toy_basis_reference(gamma: float, mu0: float = 1.0):
    """Closed-form affine set of the toy MDP (state-major columns and bias)."""
    g = gamma
    phi1 = state_major([-1 / (1 + g), -g / (1 + g), 1, 0])
    phi2 = state_major([-g / (1 + g), -1 / (1 + g), 0, 1])
    mu1 = 1.0 - mu0
    # particular solution: all mass on the switching action
    b = state_major([(mu0 + g * mu1) / (1 + g), (mu1 + g * mu0) / (1 + g), 0, 0])
    return np.stack([phi1, phi2], axis=1), b


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def exact_model(mdp, rho_s=None):
    """PsmModel holding the exact state-measure basis in density units."""
    from psm.flow import state_measure_basis
    from psm.model import PsmConfig, init_model

    basis = state_measure_basis(mdp)
    n_s, n_a = mdp.n_states, mdp.n_actions
    rho = np.full(n_s, 1.0 / n_s) if rho_s is None else np.asarray(rho_s, dtype=float)
    cfg = PsmConfig(d=basis.dim, gamma=mdp.gamma, mode="exact", pool_size=1)
    model = init_model(cfg, n_s, n_a, rho, 0)
    model.phi[...] = basis.basis.reshape(n_s * n_a, n_s, basis.dim) / rho[None, :, None]
    model.bias[...] = basis.bias.reshape(n_s * n_a, n_s) / rho[None, :]
    return model


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, passed: bool, detail: str, seconds: float) -> None:
    status = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {status}  {detail}  ({seconds:.1f}s)"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
