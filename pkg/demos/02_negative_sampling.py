"""
Corrupting edges and filtering pairs
====================================

Negatives replace one endpoint of a real edge. The side to corrupt is a
coin weighted by endpoint degree, so busy nodes get replaced more often.
Pairs whose real edge already scores above its negative are then dropped
before the hinge loss.
"""

import numpy as np

from glad.autodiff import Tensor
from glad.embed import NodeKey
from glad.graph import GraphSnapshot
from glad.train import pair_losses, sample_negative

# node 0 has weighted degree 3, node 1 degree 1
nodes = [NodeKey.event("e")] + [NodeKey.field("server", f"s{k}") for k in range(199)]
snap = GraphSnapshot(0, nodes, np.zeros((200, 4)), np.array([[0, 1, 1], [0, 2, 2]]))
rng = np.random.default_rng(11)
draws = [sample_negative(snap.edges[0], snap, rng) for _ in range(10_000)]
print("P(replace node 0) ~", np.mean([d.replaced_i for d in draws]), "(expected 0.75)")
print("first draws:", [(d.i, d.j) for d in draws[:5]])

# three score pairs; the last is discarded because the real edge scores higher
f_pos = Tensor(np.array([[0.2], [0.3], [0.6]]))
f_neg = Tensor(np.array([[0.9], [0.4], [0.3]]))
keep, loss = pair_losses(f_pos, f_neg, gamma=0.5)
print("kept pairs", keep.tolist(), "loss", loss.item())
