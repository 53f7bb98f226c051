"""
Parsing N-Triples and extracting random walks
=============================================

A tiny graph is parsed from text, interned into adjacency arrays, and
turned into a walk corpus.
"""

import io

import numpy as np

from kgrecbias.kg import ParseStats, build_graph, parse_ntriples
from kgrecbias.walker import WalkConfig, corpus_stats, generate_walks

text = """\
<http://ex.org/Alien> <http://ex.org/director> <http://ex.org/Ridley_Scott> .
<http://ex.org/Blade_Runner> <http://ex.org/director> <http://ex.org/Ridley_Scott> .
<http://ex.org/Ridley_Scott> <http://ex.org/birthPlace> <http://ex.org/South_Shields> .
<http://ex.org/Alien> <http://ex.org/genre> <http://ex.org/Science_fiction> .
<http://ex.org/Blade_Runner> <http://ex.org/genre> <http://ex.org/Science_fiction> .
<http://ex.org/Alien> <http://ex.org/label> "Alien"@en .
this line is broken
"""

# lenient parsing skips the bad line and counts it
stats = ParseStats()
triples = list(parse_ntriples(io.BytesIO(text.encode()), strict=False, stats=stats))
print(len(triples), "triples,", stats.errors, "malformed line(s)")

g = build_graph(triples, "toy")
print(g.num_nodes, "nodes,", g.num_edges, "edges,", g.literal_triples, "literal triple(s) kept out of the graph")

# out-edges of a node are (predicate id, object id) pairs
alien = g.node_id("http://ex.org/Alien")
for p, o in g.out_edges(alien):
    print("  Alien ->", g.predicates[p].rsplit("/", 1)[1], "->", g.nodes[o].rsplit("/", 1)[1])

# four walks per entity, at most two hops
corpus = generate_walks(g, WalkConfig(walks_per_entity=4, depth=2, seed=0))
for line in list(corpus.lines())[:4]:
    print(" ", " ".join(tok.rsplit("/", 1)[1] for tok in line.split(" ")))
print(corpus_stats(corpus))

# walks truncate at nodes without out-edges, so lengths vary
lengths, counts = np.unique(corpus.lengths, return_counts=True)
print("walk lengths:", dict(zip(lengths.tolist(), counts.tolist())))
