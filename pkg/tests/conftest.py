import numpy as np
import pytest

from perceptdiff.ingest import AnnotationSet, LabelSpace, PredictionSet, build_frame
from perceptdiff.synth import HumanSpec, MachineSpec, PopulationConfig, noisy_confusion


def ids_for(n):
    return [f"s{i}" for i in range(1, n + 1)]


def make_frame(truth, machines=None, humans=None, K=None, times=None):
    """Frame over ids s1..sN; machines map id -> labels (1-D) or probabilities (2-D)."""
    truth = list(truth)
    K = K or max(3, max(truth) + 1)
    ids = ids_for(len(truth))
    ms = [PredictionSet(cid, ids, np.asarray(v), K) for cid, v in (machines or {}).items()]
    hs = []
    for hid, v in (humans or {}).items():
        t = None if times is None else times.get(hid)
        hs.append(AnnotationSet(hid, ids, np.asarray(v), K, t))
    ls = LabelSpace(tuple(f"c{i}" for i in range(K)))
    return build_frame(dict(zip(ids, truth)), ms, hs, ls)


def population(seed, n=1000, K=10, n_machines=4, n_humans=3, rho=0.5, machine_acc=0.85,
               human_acc=0.82, sharpness=2.0):
    from perceptdiff.synth import make_rng

    rng = make_rng(seed, "test-population")
    machines = [MachineSpec(f"m{i}", noisy_confusion(K, machine_acc, rng), rho, sharpness)
                for i in range(n_machines)]
    humans = [HumanSpec(f"h{i}", noisy_confusion(K, human_acc, rng), 2.0, 5.0)
              for i in range(n_humans)]
    return PopulationConfig(K=K, n_samples=n, machines=machines, humans=humans,
                            shared_confusion=noisy_confusion(K, machine_acc, rng), seed=seed)


@pytest.fixture
def small_frame():
    # K=3, 4 samples; m_soft argmax = [0, 1, 1, 2]
    proba = np.array([[0.7, 0.2, 0.1], [0.3, 0.6, 0.1], [0.1, 0.8, 0.1], [0.2, 0.2, 0.6]])
    return make_frame([0, 0, 1, 2], machines={"soft": proba, "hard": [0, 1, 1, 2]},
                      humans={"h1": [0, 0, 1, 1], "h2": [0, 2, 1, 2]}, K=3)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
