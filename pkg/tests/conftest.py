import numpy as np
import pytest

from nlcapacity.graph_core import graph_from_edges


def path_graph(length):
    """Path with ``length`` edges on vertices 0..length, one generator."""
    return graph_from_edges(length + 1, [(i, i + 1) for i in range(length)])


def random_connected_graph(rng, n, extra):
    """Random spanning tree on ``n`` vertices plus ``extra`` random chords."""
    perm = rng.permutation(n)
    edges = set()
    for k in range(1, n):
        a, b = int(perm[k]), int(perm[rng.integers(0, k)])
        edges.add((a, b))
    tries = 0
    while len(edges) < n - 1 + extra and tries < 50 * (extra + 1):
        a, b = (int(v) for v in rng.integers(0, n, size=2))
        tries += 1
        if a != b and (a, b) not in edges and (b, a) not in edges:
            edges.add((a, b))
    return graph_from_edges(n, sorted(edges))


def random_condenser_sets(rng, n, max_source=3, max_sink=3):
    vs = rng.permutation(n)
    a = int(rng.integers(1, max_source + 1))
    b = int(rng.integers(1, max_sink + 1))
    return vs[:a], vs[a:a + b]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# --------------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per criterion in the terminal summary

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed:
        msg = str(rep.longrepr.reprcrash.message) if hasattr(rep.longrepr, "reprcrash") else ""
        detail = f"{detail}; {msg}" if detail else msg
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    _ACCEPTANCE[number] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status, detail = _ACCEPTANCE[number]
        line = f"{status} criterion {number:2d}: {title}"
        terminalreporter.write_line(f"{line} ({detail})" if detail else line)
    n_pass = sum(s == "PASS" for _, s, _ in _ACCEPTANCE.values())
    terminalreporter.write_line(f"{n_pass}/{len(_ACCEPTANCE)} acceptance criteria passed")
