"""Regenerate the small graphs shipped in ``degreesketch/data/graphs``.

Requires networkx. Vertex ids are compacted to 0..n-1 in sorted label order.
"""

from pathlib import Path

import networkx as nx
import numpy as np

from degreesketch.graph import normalize, write_edge_stream

OUT = Path(__file__).resolve().parents[1] / "src" / "degreesketch" / "data" / "graphs"

GRAPHS = {
    # factors for Kronecker products
    "k3": ("complete graph K3", lambda: nx.complete_graph(3)),
    "k4": ("complete graph K4", lambda: nx.complete_graph(4)),
    "bull": ("networkx bull_graph", nx.bull_graph),
    "house_x": ("networkx house_x_graph", nx.house_x_graph),
    "kite": ("networkx krackhardt_kite_graph", nx.krackhardt_kite_graph),
    "petersen": ("networkx petersen_graph", nx.petersen_graph),
    "florentine": ("networkx florentine_families_graph", nx.florentine_families_graph),
    "karate": ("networkx karate_club_graph", nx.karate_club_graph),
    "lesmis": ("networkx les_miserables_graph", nx.les_miserables_graph),
    "plc30": ("networkx powerlaw_cluster_graph(30, 2, 0.5, seed=42)",
              lambda: nx.powerlaw_cluster_graph(30, 2, 0.5, seed=42)),
    # moderate graphs for neighborhood and triangle experiments
    "ws1000": ("networkx watts_strogatz_graph(1000, 4, 0.1, seed=1)",
               lambda: nx.watts_strogatz_graph(1000, 4, 0.1, seed=1)),
    "plc3000": ("networkx powerlaw_cluster_graph(3000, 4, 0.3, seed=7)",
                lambda: nx.powerlaw_cluster_graph(3000, 4, 0.3, seed=7)),
    "grid_3d": ("networkx grid_graph([16, 16, 16])", lambda: nx.grid_graph([16, 16, 16])),
    "trilattice": ("networkx triangular_lattice_graph(18, 36)",
                   lambda: nx.triangular_lattice_graph(18, 36)),
}


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    for name, (desc, make) in GRAPHS.items():
        G = nx.convert_node_labels_to_integers(make(), ordering="sorted")
        edges = np.array(list(G.edges()), dtype=np.uint64).reshape(-1, 2)
        g = normalize(edges, n=G.number_of_nodes(), note=name)
        write_edge_stream(g, OUT / f"{name}.txt", header=[f"{name}: {desc}"])
        print(f"{name}: n={g.n} m={g.m}")


if __name__ == "__main__":
    main()
