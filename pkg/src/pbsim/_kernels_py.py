"""Pure-numpy sequence evolution, used when the compiled kernel is unavailable."""

import numpy as np


def evolve(gates, offsets, channel_of, fused, shift, init):
    """Run every sequence from ``init`` through its gates.

    Sequence ``s`` applies ``gates[offsets[s]:offsets[s+1]]`` in order; gate ``g``
    under channel ``c`` maps ``a -> fused[c, g] @ a + shift[c]``. Returns the
    final Bloch vectors, shape ``(n_seq, 3)``.
    """
    offsets = np.asarray(offsets, dtype=np.int64)
    channel_of = np.asarray(channel_of, dtype=np.int64)
    n_seq = offsets.size - 1
    lengths = np.diff(offsets)
    out = np.tile(np.asarray(init, dtype=np.float64), (n_seq, 1))
    if n_seq == 0:
        return out
    order = np.argsort(-lengths, kind="stable")
    sorted_len = lengths[order]
    for k in range(int(sorted_len[0])):
        active = order[: np.searchsorted(-sorted_len, -k, side="left")]
        g = gates[offsets[active] + k]
        c = channel_of[active]
        out[active] = np.einsum("nij,nj->ni", fused[c, g], out[active]) + shift[c]
    return out
