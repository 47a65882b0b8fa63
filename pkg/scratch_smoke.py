"""Scratch smoke test (deleted before delivery)."""
import numpy as np

from jobgraph import *
from jobgraph.graph import MEMBER_SKILL, JOB_SKILL, SEEKER_ENGAGEMENT
from jobgraph.model import backward_batch, score_matrix_dot, score_pairs, LayerParams
from jobgraph.sampling import SamplerConfig
from jobgraph.training import Batch, BatchBuilder

rng = np.random.default_rng(0)

# tiny graph
g = HeteroGraph(feature_dims=4)
m1 = NodeRef(NodeType.MEMBER, 1)
j1 = NodeRef(NodeType.JOB, 1)
s1 = NodeRef(NodeType.SKILL, 7)
s2 = NodeRef(NodeType.SKILL, 8)
for n in (m1, j1, s1, s2):
    g.add_node(n, rng.normal(size=4).astype(np.float32))
g.add_edge(MEMBER_SKILL, m1, s1, 1.0, reciprocal=True)
g.add_edge(MEMBER_SKILL, m1, s2, 2.0, reciprocal=True)
g.add_edge(JOB_SKILL, j1, s1, 1.0, reciprocal=True)
g.add_edge(SEEKER_ENGAGEMENT, m1, j1, 1.0, reciprocal=True)

cfg = SamplerConfig(fanout=(3, 2), strategy="uniform", seed=1)
cg = sample_neighborhood(g, m1, cfg)
print("cg sizes:", [len(l) for l in cg.layers])

params = init_encoder_params(4, (5, 3), aggregation="attention", seed=2)
# randomize all params for grad check (incl. output layer)
r2 = np.random.default_rng(3)
for l in params.layers:
    l.weight[...] = r2.normal(0, 0.5, l.weight.shape).astype(np.float32)
    l.self_weight[...] = r2.normal(0, 0.5, l.self_weight.shape).astype(np.float32)
    l.bias[...] = r2.normal(0, 0.5, l.bias.shape).astype(np.float32)
    l.attention[...] = r2.normal(0, 0.5, l.attention.shape).astype(np.float32)

cg_j = sample_neighborhood(g, j1, cfg)
emb, cache = encode_batch([cg, cg_j], params)
print("emb:", emb.shape)

# loss: in-batch dot on 1x1? use 2 members 2 jobs
cgs_m = [cg, sample_neighborhood(g, m1, SamplerConfig((3, 2), seed=9))]
cgs_j = [cg_j, sample_neighborhood(g, j1, SamplerConfig((3, 2), seed=10))]
labels = make_in_batch_labels(2)

def forward_loss(p):
    e, c = encode_batch(cgs_m + cgs_j, p)
    me, je = e[:2], e[2:]
    s, back = score_matrix_dot(me, je)
    loss, dl = loss_cross_entropy(s, labels)
    return loss, dl, back, c

loss, dl, back, cache = forward_loss(params)
dm, dj, _ = back(dl)
grads = backward_batch(cache, np.concatenate([dm, dj]))

# finite differences over every param
h = 1e-5
worst = 0.0
for name, arr in params.param_dict().items():
    g_ana = grads[name]
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + h
        hi = float(arr[idx]); lp, *_ = forward_loss(params)
        arr[idx] = orig - h
        lo = float(arr[idx]); lm, *_ = forward_loss(params)
        arr[idx] = orig
        num = (lp - lm) / (hi - lo)
        ana = g_ana[idx]
        err = abs(num - ana) / max(1.0, abs(num), abs(ana))
        worst = max(worst, err)
print(f"attention-mode gradcheck worst rel err: {worst:.3e}")
assert worst < 1e-4, "gradcheck FAILED"

# mean mode
params.aggregation = "mean"
loss, dl, back, cache = forward_loss(params)
dm, dj, _ = back(dl)
grads = backward_batch(cache, np.concatenate([dm, dj]))
worst = 0.0
for name, arr in params.param_dict().items():
    g_ana = grads[name]
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + h
        hi = float(arr[idx]); lp, *_ = forward_loss(params)
        arr[idx] = orig - h
        lo = float(arr[idx]); lm, *_ = forward_loss(params)
        arr[idx] = orig
        num = (lp - lm) / (hi - lo)
        err = abs(num - g_ana[idx]) / max(1.0, abs(num), abs(g_ana[idx]))
        worst = max(worst, err)
print(f"mean-mode gradcheck worst rel err: {worst:.3e}")
assert worst < 1e-4, "gradcheck FAILED"

# paired decoders quick grad check through decoder only
for kind in ("dot", "cosine", "mlp"):
    mlp = Mlp([6, 4, 1], seed=5) if kind == "mlp" else None
    M = rng.normal(size=(3, 3))
    J = rng.normal(size=(3, 3))
    s, back = score_pairs(M, J, kind, mlp)
    y = np.array([1.0, 0.0, 1.0])
    loss, dl = loss_cross_entropy(s, y)
    dM, dJ, mg = back(dl)
    hh = 1e-6
    worst = 0.0
    for arr, g_ana in ((M, dM), (J, dJ)):
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + hh
            sp, _ = score_pairs(M, J, kind, mlp)
            lp, _ = loss_cross_entropy(sp, y)
            arr[idx] = orig - hh
            sm, _ = score_pairs(M, J, kind, mlp)
            lm, _ = loss_cross_entropy(sm, y)
            arr[idx] = orig
            num = (lp - lm) / (2 * hh)
            err = abs(num - g_ana[idx]) / max(1.0, abs(num), abs(g_ana[idx]))
            worst = max(worst, err)
    print(f"decoder {kind} embedding-grad worst rel err: {worst:.3e}")
    assert worst < 1e-4

# synth tiny + nearline equivalence
sc = SynthConfig(member_count=300, jobs_per_member=0.05, cluster_count=5,
                 title_count=10, skill_count=20, generic_skill_count=4,
                 positions_per_member=0.05, companies_per_member=0.03, seed=7)
res = generate(sc)
st = stats(res.graph)
print("member skill mean degree:", st.mean_degrees.get("Member.MemberSkill"))
print("job skill mean degree:", st.mean_degrees.get("Job.JobSkill"))
print("jobs:", res.graph.node_count(NodeType.JOB))
cold = sum(1 for m in res.graph.nodes(NodeType.MEMBER)
           if res.graph.degree(m, SEEKER_ENGAGEMENT) == 0)
print("cold members:", cold, "expected:", len(res.cold_members))

# nearline replay vs batch inference (exhaustive fanout)
from jobgraph.nearline import NearlineStores, NearlineConfig
params2 = init_encoder_params(16, (8, 8), seed=11)
r3 = np.random.default_rng(12)
for l in params2.layers:
    l.weight[...] = r3.normal(0, 0.3, l.weight.shape).astype(np.float32)
    l.self_weight[...] = r3.normal(0, 0.3, l.self_weight.shape).astype(np.float32)

stores = NearlineStores.fresh(NearlineConfig(capacity=100000, debounce_ms=100))
emb_store = EmbeddingStore()
big = SamplerConfig(fanout=(10000, 10000), seed=0)
pstats = run_pipeline(iter(res.events), params2, stores, emb_store, big, workers=1)
print("pipeline:", pstats.to_text())

batch_nodes = emb_store.nodes()
vectors = compute_embeddings(res.graph, batch_nodes, params2, big)
worst = 0.0
for node in batch_nodes:
    diff = np.max(np.abs(emb_store.get(node).vector.astype(np.float64)
                         - vectors[node].astype(np.float64)))
    worst = max(worst, diff)
print(f"nearline vs batch worst abs diff over {len(batch_nodes)} nodes: {worst:.3e}")
assert worst <= 1e-6
print("SMOKE OK")
