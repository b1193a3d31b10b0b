"""Regenerate the synthetic networks shipped in ``src/gasopt/data``.

Topologies are fixed by hand (tree10, loop20) or by a seeded generator
(net60).  Demand levels are the constants below; they were chosen so that
running every compressor at ratio 1 violates the lower pressure bound while
ratios inside ``[1, 1.2]`` can restore feasibility.

Usage: ``python3 tools/make_networks.py [outdir]``
"""

import json
import sys
from pathlib import Path

import numpy as np

CONSTANTS = {"speed_of_sound": 370.0, "pressure_base": 5.0e6, "slack_pressure": 1.0}


def node(nid, slack=False):
    return {"id": nid, "kind": "slack" if slack else "junction", "p_min": 0.7, "p_max": 1.1}


def pipe(pid, a, b, length_km, diameter):
    return {"id": pid, "from": a, "to": b, "length": length_km * 1e3, "diameter": diameter,
            "friction": 0.01}


def comp(cid, a, b):
    return {"id": cid, "from": a, "to": b, "K": 0.1, "gamma": 1.2, "kappa_min": 1.0, "kappa_max": 1.2}


def demand(nid, base, role="demand"):
    return {"node": nid, "role": role, "base": float(base), "shape": "sinusoidal", "amplitude": 0.2}


def doc(nodes, pipes, comps, profiles):
    return {"nodes": nodes, "pipes": pipes, "compressors": comps, "profiles": profiles,
            "constants": CONSTANTS, "scaling": {"supply": 1.0, "demand": 1.0}}


TREE10_DEMAND = 1.3
LOOP20_DEMAND = 1.6
NET60_DEMAND = 1.9


def tree10():
    ids = ["S"] + [f"N{i}" for i in range(1, 10)]
    nodes = [node("S", True)] + [node(i) for i in ids[1:]]
    pipes = [
        pipe("P1", "N1", "N2", 60, 0.7),
        pipe("P2", "N2", "N3", 40, 0.5),
        pipe("P3", "N2", "N4", 50, 0.6),
        pipe("P4", "N5", "N6", 40, 0.5),
        pipe("P5", "N5", "N7", 50, 0.5),
        pipe("P6", "N7", "N8", 30, 0.4),
        pipe("P7", "N7", "N9", 30, 0.4),
    ]
    comps = [comp("C1", "S", "N1"), comp("C2", "N4", "N5")]
    d = TREE10_DEMAND
    profiles = [demand("N3", 20 * d), demand("N6", 15 * d), demand("N8", 12 * d), demand("N9", 12 * d)]
    return doc(nodes, pipes, comps, profiles)


def loop20():
    ids = ["S"] + [f"N{i}" for i in range(1, 20)]
    nodes = [node("S", True)] + [node(i) for i in ids[1:]]
    edges = [
        ("N1", "N2", 40, 0.7), ("N2", "N3", 30, 0.6), ("N3", "N4", 30, 0.6), ("N4", "N5", 30, 0.6),
        ("N5", "N2", 40, 0.5),  # first loop N2-N3-N4-N5
        ("N4", "N6", 50, 0.6),
        ("N7", "N8", 30, 0.5), ("N8", "N9", 30, 0.5), ("N9", "N10", 30, 0.5), ("N10", "N7", 40, 0.4),
        ("N9", "N11", 40, 0.5),
        ("N12", "N13", 30, 0.5), ("N13", "N14", 25, 0.4), ("N14", "N15", 25, 0.4), ("N15", "N12", 30, 0.4),
        ("N13", "N16", 20, 0.4), ("N16", "N17", 20, 0.4), ("N3", "N18", 30, 0.4), ("N18", "N19", 20, 0.4),
    ]
    pipes = [pipe(f"P{k + 1}", a, b, L, D) for k, (a, b, L, D) in enumerate(edges)]
    comps = [comp("C1", "S", "N1"), comp("C2", "N6", "N7"), comp("C3", "N11", "N12")]
    d = LOOP20_DEMAND
    loads = {"N5": 8, "N8": 6, "N10": 6, "N14": 5, "N15": 5, "N17": 6, "N19": 6}
    profiles = [demand(n, v * d) for n, v in loads.items()]
    return doc(nodes, pipes, comps, profiles)


def net60(seed=7):
    """Six compressor stations in series.  Each station feeds a district with a
    four-node trunk line (the last trunk node feeds the next station) plus
    randomly attached branch nodes and one chord that closes a loop."""
    rng = np.random.default_rng(seed)
    nodes = [node("S", True)]
    pipes, comps, profiles = [], [], []
    count = {"p": 0}

    def add_pipe(a, b, L, D):
        count["p"] += 1
        pipes.append(pipe(f"P{count['p']}", a, b, L, D))

    upstream = "S"
    nid = 0
    sizes = [10, 10, 10, 10, 10, 9]
    for st, size in enumerate(sizes):
        local = []
        for _ in range(size):
            nid += 1
            local.append(f"N{nid}")
            nodes.append(node(local[-1]))
        comps.append(comp(f"C{st + 1}", upstream, local[0]))
        trunk = local[:4]
        for a, b in zip(trunk, trunk[1:]):
            add_pipe(a, b, float(rng.uniform(15, 25)), 0.8)
        for k in range(4, size):
            parent = local[int(rng.integers(0, k))]
            add_pipe(parent, local[k], float(rng.uniform(10, 20)), float(rng.choice([0.4, 0.5])))
        a, b = local[int(rng.integers(4, size - 1))], local[int(rng.integers(1, 3))]
        add_pipe(a, b, float(rng.uniform(15, 30)), 0.4)
        for leaf in local[4:]:
            profiles.append(demand(leaf, float(rng.uniform(1, 3)) * NET60_DEMAND))
        upstream = trunk[-1]
    return doc(nodes, pipes, comps, profiles)


def main(outdir):
    out = Path(outdir)
    for name, build in (("tree10", tree10), ("loop20", loop20), ("net60", net60)):
        d = build()
        (out / f"{name}.json").write_text(json.dumps(d, indent=2) + "\n", encoding="utf-8")
        print(name, len(d["nodes"]), "nodes", len(d["pipes"]), "pipes", len(d["compressors"]), "compressors")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "src/gasopt/data")
