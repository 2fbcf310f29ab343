"""Slow direct-formula recomputation of the retrieval-tuning losses.

Deliberately naive: scalar Python loops, plain ``math.exp`` ratios, no
max-subtraction and no numpy.  The fast vectorized paths in ``losses`` are
cross-checked against this module, so nothing here may import from it.
"""

import math
from typing import Sequence

Vector = Sequence[float]


def ref_cosine(a: Vector, b: Vector) -> float:
    """Cosine similarity; all-zero vectors score 0 by convention."""
    dot = 0.0
    na = 0.0
    nb = 0.0
    for x, y in zip(a, b):
        dot += x * y
        na += x * x
        nb += y * y
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (math.sqrt(na) * math.sqrt(nb))


def ref_info_nce(anchor: Vector, candidates: Sequence[Vector], pos: int, tau: float) -> float:
    """Contrastive loss of one anchor against a candidate list, direct ratio form."""
    num = math.exp(ref_cosine(anchor, candidates[pos]) / tau)
    den = 0.0
    for cand in candidates:
        den += math.exp(ref_cosine(anchor, cand) / tau)
    return -math.log(num / den)


def _masked(vec: Vector, weights: Vector) -> list:
    return [v * w for v, w in zip(vec, weights)]


def ref_losses(
    queries: Sequence[Vector],
    documents: Sequence[Vector],
    masks: Sequence[Vector],
    submasks: Sequence[Sequence[Vector]],
    tau: float,
    beta: float,
) -> dict:
    """All four loss values recomputed directly from their definitions.

    ``submasks[i][s]`` is the s-th part of pair i's mask.  Returns a dict with
    keys ``l_in``, ``l_din``, ``l_sin``, ``total``.
    """
    b = len(queries)
    n = len(submasks[0])

    l_in = 0.0
    for i in range(b):
        l_in += ref_info_nce(queries[i], documents, i, tau)
    l_in /= b

    l_din = 0.0
    for i in range(b):
        # query anchor against every document masked by this pair's mask
        masked_docs = [_masked(documents[j], masks[i]) for j in range(b)]
        forward = ref_info_nce(queries[i], masked_docs, i, tau)
        # masked-document anchor against the batch's queries
        backward = ref_info_nce(_masked(documents[i], masks[i]), queries, i, tau)
        l_din += 0.5 * (forward + backward)
    l_din /= b

    l_sin = 0.0
    for i in range(b):
        for s in range(n):
            masked_docs = [_masked(documents[j], submasks[i][s]) for j in range(b)]
            l_sin += ref_info_nce(queries[i], masked_docs, i, tau) / n
    l_sin /= b

    return {
        "l_in": l_in,
        "l_din": l_din,
        "l_sin": l_sin,
        "total": l_din + beta * l_sin,
    }
