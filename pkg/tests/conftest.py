import numpy as np
import pytest

from jobgraph.graph import (
    JOB_SKILL,
    JOB_TITLE,
    MEMBER_SKILL,
    MEMBER_TITLE,
    SEEKER_ENGAGEMENT,
    HeteroGraph,
    NodeRef,
    NodeType,
)


def mk(node_type: NodeType, node_id: int) -> NodeRef:
    return NodeRef(node_type, node_id)


@pytest.fixture
def tiny_graph() -> HeteroGraph:
    """Four-dim features; one member, two jobs, two skills, one title."""
    rng = np.random.default_rng(42)
    g = HeteroGraph(feature_dims=4)
    nodes = [
        mk(NodeType.MEMBER, 1),
        mk(NodeType.JOB, 1),
        mk(NodeType.JOB, 2),
        mk(NodeType.SKILL, 7),
        mk(NodeType.SKILL, 8),
        mk(NodeType.TITLE, 3),
    ]
    for n in nodes:
        g.add_node(n, rng.normal(size=4).astype(np.float32))
    g.add_edge(MEMBER_SKILL, mk(NodeType.MEMBER, 1), mk(NodeType.SKILL, 7), 1.0, reciprocal=True)
    g.add_edge(MEMBER_SKILL, mk(NodeType.MEMBER, 1), mk(NodeType.SKILL, 8), 3.0, reciprocal=True)
    g.add_edge(MEMBER_TITLE, mk(NodeType.MEMBER, 1), mk(NodeType.TITLE, 3), 1.0, reciprocal=True)
    g.add_edge(JOB_SKILL, mk(NodeType.JOB, 1), mk(NodeType.SKILL, 7), 1.0, reciprocal=True)
    g.add_edge(JOB_TITLE, mk(NodeType.JOB, 2), mk(NodeType.TITLE, 3), 1.0, reciprocal=True)
    g.add_edge(SEEKER_ENGAGEMENT, mk(NodeType.MEMBER, 1), mk(NodeType.JOB, 1), 2.0, reciprocal=True)
    return g


def randomize_params(params, seed: int, scale: float = 0.5) -> None:
    """Overwrite every encoder parameter with random values (incl. the lazy head)."""
    rng = np.random.default_rng(seed)
    for layer in params.layers:
        for arr in (layer.weight, layer.bias, layer.self_weight, layer.attention):
            arr[...] = rng.normal(0.0, scale, arr.shape).astype(np.float32)


def central_difference(param_array, index, loss_fn, step: float = 1e-4) -> float:
    """Central finite difference in the widest precision, dividing by the
    realized float32 step so parameter quantization cancels."""
    original = param_array[index]
    param_array[index] = original + step
    hi = float(param_array[index])
    loss_hi = loss_fn()
    param_array[index] = original - step
    lo = float(param_array[index])
    loss_lo = loss_fn()
    param_array[index] = original
    return (loss_hi - loss_lo) / (hi - lo)


def gradcheck(params_dict, grads, loss_fn, rtol: float = 1e-4, atol: float = 1e-7,
              step: float = 1e-4) -> float:
    """Compare analytic grads against central differences for every entry;
    returns the worst relative error and asserts the tolerance."""
    worst = 0.0
    for name, arr in params_dict.items():
        analytic = grads[name]
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            numeric = central_difference(arr, idx, loss_fn, step)
            a = float(analytic[idx])
            err = abs(a - numeric)
            denom = max(abs(a), abs(numeric))
            rel = err / denom if denom > 0 else 0.0
            assert err <= atol or rel <= rtol, (
                f"{name}{idx}: analytic {a!r} vs numeric {numeric!r} "
                f"(rel {rel:.2e})"
            )
            worst = max(worst, min(rel, err))
    return worst


def canonical_tree(cg):
    """Order-insensitive form of a compute graph for multiset comparison."""

    def node_key(layer_idx, occ_idx):
        layer = cg.layers[layer_idx]
        return (
            str(layer.nodes[occ_idx]),
            round(float(layer.weights[occ_idx]), 9),
            layer.features[occ_idx].tobytes(),
        )

    children: dict[tuple[int, int], list] = {}
    for layer_idx in range(1, len(cg.layers)):
        for occ_idx, parent in enumerate(cg.layers[layer_idx].parents):
            children.setdefault((layer_idx - 1, int(parent)), []).append(occ_idx)

    def canon(layer_idx, occ_idx):
        kids = sorted(
            canon(layer_idx + 1, k) for k in children.get((layer_idx, occ_idx), [])
        )
        return (node_key(layer_idx, occ_idx), tuple(kids))

    return canon(0, 0)
