import sys

import numpy as np

from sasbl.model import GroundTruth, PriorSupport, SensingProblem


def sparse_instance(seed, m, n, K, noise_std=0.0):
    rng = np.random.default_rng(seed)
    T = rng.choice(n, size=K, replace=False)
    x = np.zeros(n)
    x[T] = rng.standard_normal(K)
    A = rng.standard_normal((m, n))
    y = A @ x + noise_std * rng.standard_normal(m)
    return SensingProblem(A, y, GroundTruth(x, set(T.tolist()), noise_std)), rng


def random_prior(rng, n, size):
    return PriorSupport(set(rng.choice(n, size=size, replace=False).tolist()))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.REPORT):
        terminalreporter.write_line(mod.REPORT[key])
