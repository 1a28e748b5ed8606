import itertools

import numpy as np
import pytest

from ttkalman.tt import MATRIX, TTNetwork


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_train(rng, out_dims, in_dims, ranks, kind=MATRIX, batch=1):
    """Gaussian cores; ``ranks`` are the interior ranks r_1..r_{d-1}."""
    chain = [batch] + list(ranks) + [1]
    cores = [rng.standard_normal((chain[k], o, i, chain[k + 1]))
             for k, (o, i) in enumerate(zip(out_dims, in_dims))]
    return TTNetwork(cores, kind)


def dense_by_loops(net):
    """Entry-by-entry product of core slices; independent of the library's contraction."""
    b = net.batch
    out = np.zeros(net.shape)
    for bi in range(b):
        for oi, o_idx in enumerate(itertools.product(*[range(o) for o in net.out_dims])):
            for ii, i_idx in enumerate(itertools.product(*[range(i) for i in net.in_dims])):
                v = net.cores[0][bi:bi + 1, o_idx[0], i_idx[0], :]
                for k in range(1, net.d):
                    v = v @ net.cores[k][:, o_idx[k], i_idx[k], :]
                out[bi, oi, ii] = v[0, 0]
    return out


def rel(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    scale = np.linalg.norm(b)
    return np.linalg.norm(a - b) / (scale if scale > 0 else 1.0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
