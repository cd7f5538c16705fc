import itertools

from hypothesis import settings, strategies as st

from wlanslice.topology import DependenceGraph

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


def brute_force_mis(vertices, edges):
    """Maximal independent sets by checking every subset."""
    vertices = sorted(vertices)
    edges = {frozenset(e) for e in edges}
    indep = []
    for r in range(len(vertices) + 1):
        for sub in itertools.combinations(vertices, r):
            if not any(frozenset(p) in edges for p in itertools.combinations(sub, 2)):
                indep.append(frozenset(sub))
    return {s for s in indep if not any(s < t for t in indep)}


@st.composite
def graphs(draw, max_vertices=8):
    n = draw(st.integers(0, max_vertices))
    verts = list(range(1, n + 1))
    pairs = list(itertools.combinations(verts, 2))
    picks = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    return DependenceGraph.from_edges(verts, [p for p, on in zip(pairs, picks) if on])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
