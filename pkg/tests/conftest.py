import numpy as np
import pytest

from cascadelab import (CategorySchema, IdentityMatrix, Network, SynthWorldParams,
                        generate_world)


def make_net(edges, nodes=None):
    """Network from (src_id, dst_id, weight) triples; reverse edges added
    automatically with the same weight unless already present."""
    seen = {(a, b): w for a, b, w in edges}
    for (a, b), w in list(seen.items()):
        seen.setdefault((b, a), w)
    ids = []
    for a, b in seen:
        for x in (a, b):
            if x not in ids:
                ids.append(x)
    if nodes:
        for x in nodes:
            if x not in ids:
                ids.append(x)
    index = {x: i for i, x in enumerate(ids)}
    src = [index[a] for a, b in seen]
    dst = [index[b] for a, b in seen]
    w = [seen[k] for k in seen]
    return Network(ids, src, dst, w)


def one_dim_identity(values):
    """IdentityMatrix with a single one-register category."""
    schema = CategorySchema([("only", ["r0"])])
    return IdentityMatrix(np.asarray(values, dtype=float).reshape(-1, 1), schema)


@pytest.fixture(scope="session")
def small_world():
    params = SynthWorldParams(blocks=4, nodes_per_block=100, intra_p=0.08,
                              inter_p=0.01, homophily=0.6,
                              identity_concentration=30.0, region_grid=(2, 2),
                              rng_seed=3)
    return generate_world(params)


@pytest.fixture(scope="session")
def homophilous_world():
    params = SynthWorldParams(blocks=8, nodes_per_block=150, intra_p=0.05,
                              inter_p=0.004, homophily=0.8,
                              identity_concentration=60.0, region_grid=(2, 4),
                              rng_seed=11)
    return generate_world(params)
