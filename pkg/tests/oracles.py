"""Independent reference computations used by the tests.

Nothing here imports the forwarding code it checks: paths come from
exhaustive enumeration, not from a shortest-path algorithm.
"""

import random


def simple_paths(links, src, dst):
    """Every loop-free path src..dst as (cost, path) over undirected ``links``."""
    adj = {}
    for a, b, m in links:
        adj.setdefault(a, []).append((b, m))
        adj.setdefault(b, []).append((a, m))
    out = []

    def walk(node, path, cost):
        if node == dst:
            out.append((cost, tuple(path)))
            return
        for nxt, m in adj.get(node, ()):
            if nxt not in path:
                path.append(nxt)
                walk(nxt, path, cost + m)
                path.pop()

    walk(src, [src], 0)
    return out


def rank(cost, path):
    return (cost, len(path), tuple(sorted(path)))


def best_paths(links, src, dst):
    """All paths sharing the best (cost, hop count, sorted ids) rank."""
    paths = simple_paths(links, src, dst)
    if not paths:
        return None, []
    best = min(rank(c, p) for c, p in paths)
    return best, sorted(p for c, p in paths if rank(c, p) == best)


def random_connected_graph(rng: random.Random, n_max=8, metric_max=4):
    n = rng.randint(2, n_max)
    ids = rng.sample(range(1, 40), n)
    links = {}
    order = ids[:]
    rng.shuffle(order)
    for i in range(1, n):
        a, b = order[i], rng.choice(order[:i])
        links[tuple(sorted((a, b)))] = rng.randint(1, metric_max)
    for _ in range(rng.randint(0, n * 2)):
        a, b = rng.sample(ids, 2)
        links.setdefault(tuple(sorted((a, b))), rng.randint(1, metric_max))
    return sorted(ids), sorted((a, b, m) for (a, b), m in links.items())


def tree_path(edges, a, b):
    """Unique path between a and b in an undirected tree, by DFS."""
    adj = {}
    for x, y in edges:
        adj.setdefault(x, set()).add(y)
        adj.setdefault(y, set()).add(x)
    stack = [(a, (a,))]
    while stack:
        node, path = stack.pop()
        if node == b:
            return path
        for nxt in adj.get(node, ()):
            if nxt not in path:
                stack.append((nxt, path + (nxt,)))
    return None
