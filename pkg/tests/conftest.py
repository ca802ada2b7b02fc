import numpy as np
import pytest

from daqtrack.autograd import Tensor2, backward


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def fd_gradcheck(make_loss, leaves, rng, n_coords=None, rel_tol=1e-4, h=1e-5,
                 abs_floor=1e-5, abs_tol=1e-8):
    """Compare analytic gradients against central finite differences.

    ``make_loss`` maps a dict of Tensor2 leaves to a 1x1 loss node.  The
    finite-difference side only ever calls the forward pass, so it stays
    independent of every backward rule it checks.  Coordinates with both
    gradients below ``abs_floor`` are compared absolutely (FD noise floor).
    """
    tensors = {k: Tensor2(v) for k, v in leaves.items()}
    loss = make_loss(tensors)
    assert loss.shape == (1, 1)
    backward(loss)

    def forward_at(values):
        return make_loss({k: Tensor2(v) for k, v in values.items()}).item()

    for name, t in tensors.items():
        base = leaves[name].astype(np.float64).copy()
        grad = t.gradient()
        coords = [(i, j) for i in range(base.shape[0]) for j in range(base.shape[1])]
        if n_coords is not None and len(coords) > n_coords:
            idx = rng.choice(len(coords), size=n_coords, replace=False)
            coords = [coords[k] for k in idx]
        for i, j in coords:
            orig = base[i, j]
            values = dict(leaves)
            bumped = base.copy()
            bumped[i, j] = orig + h
            values[name] = bumped
            fp = forward_at(values)
            bumped = base.copy()
            bumped[i, j] = orig - h
            values[name] = bumped
            fm = forward_at(values)
            fd = (fp - fm) / (2.0 * h)
            ana = grad[i, j]
            m = max(abs(ana), abs(fd))
            if m < abs_floor:
                assert abs(ana - fd) < abs_tol, (
                    f"{name}[{i},{j}]: analytic {ana} vs fd {fd} (absolute)")
            else:
                assert abs(ana - fd) / m < rel_tol, (
                    f"{name}[{i},{j}]: analytic {ana} vs fd {fd} rel={abs(ana-fd)/m}")
