import numpy as np
import pytest

from emgdnn.neuralnet import BatchNorm, loss


def brute_dwt_level(x, h, g):
    """Loop-by-loop single-level periodic analysis; independent of the vectorised path."""
    n = len(x)
    a = np.zeros(n // 2)
    d = np.zeros(n // 2)
    for k in range(n // 2):
        for j in range(len(h)):
            a[k] += h[j] * x[(2 * k + j) % n]
            d[k] += g[j] * x[(2 * k + j) % n]
    return a, d


def fd_gradients(net, x, y, h=1e-4):
    """Five-point central differences of loss(forward(x, train), y) for every parameter.

    The fourth-order stencil allows a step large enough that rounding in the
    loss does not swamp gradients near the 1e-6 floor.

    Batch-norm running statistics are frozen and the dropout mask must be fixed
    by the caller so the loss is a deterministic function of the parameters.
    """
    for layer in net.layers:
        if isinstance(layer, BatchNorm):
            layer.update_stats = False
    out = []
    try:
        for name, p in net.parameters():
            grad = np.zeros_like(p)
            flat, gflat = p.reshape(-1), grad.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                vals = []
                for step in (2 * h, h, -h, -2 * h):
                    flat[i] = orig + step
                    vals.append(loss(net.forward(x, "train"), y, net))
                flat[i] = orig
                gflat[i] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
            out.append((name, grad))
    finally:
        for layer in net.layers:
            if isinstance(layer, BatchNorm):
                layer.update_stats = True
    return out


def gradient_rel_error(analytic, numeric, floor=1e-6):
    """Elementwise |a - n| / max(|a|, |n|, floor)."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
