import numpy as np
import pytest

from cyclewave import tensor as tc


@pytest.fixture(autouse=True)
def _fresh_tape():
    tc.reset_tape()
    yield
    tc.reset_tape()


def finite_difference(build, tensors, rng, n_points=10, eps=1e-4, tol=1e-3):
    """Check analytic grads of a scalar graph against central differences.

    ``build`` re-runs the forward pass from the (mutated) leaf tensors and
    returns the scalar loss; ``tensors`` maps names to the leaves to check.
    The oracle never touches the tape: probe evaluations run under no_grad.
    """
    tc.reset_tape()
    for t in tensors.values():
        t.zero_grad()
    loss = build()
    tc.backward(loss)
    failures = []
    for name, t in tensors.items():
        analytic = t.grad.reshape(-1).copy()
        flat = t.data.reshape(-1)
        idx = rng.choice(flat.size, size=min(n_points, flat.size), replace=False)
        for i in idx:
            orig = flat[i]
            with tc.no_grad():
                flat[i] = orig + eps
                f_plus = build().item()
                flat[i] = orig - eps
                f_minus = build().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(analytic[i]), abs(numeric), 1e-3)
            rel = abs(analytic[i] - numeric) / denom
            if rel > tol:
                failures.append(f"{name}[{i}]: analytic={analytic[i]:.6g} numeric={numeric:.6g} rel={rel:.2e}")
    assert not failures, "gradient mismatches:\n" + "\n".join(failures)
