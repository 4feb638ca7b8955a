#pragma once

#include <algorithm>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dear/dataset.hpp"
#include "dear/tape.hpp"

namespace dear {

struct ModelConfig {
    Algo algorithm = Algo::bellman_ford;
    int latent_dim = 128;
    int msg_hidden_layers = 2;
    int msg_hidden_dim = 0;  // 0 means latent_dim

    int hidden_dim() const { return msg_hidden_dim > 0 ? msg_hidden_dim : latent_dim; }

    void validate() const {
        if (latent_dim < 1) throw std::invalid_argument("ModelConfig: latent_dim must be >= 1");
        if (msg_hidden_layers < 0) throw std::invalid_argument("ModelConfig: negative MLP depth");
    }
};

inline int node_raw_dim(Algo a) {
    switch (a) {
        case Algo::bellman_ford: return 2;   // [i/n, is_source]
        case Algo::floyd_warshall: return 1; // [i/n]
        case Algo::scc: return 1;            // [i/n]
        case Algo::insertion_sort: return 2; // [key, i/n]
    }
    return 0;
}

inline int edge_raw_dim(Algo a) {
    switch (a) {
        case Algo::bellman_ford: return 1;   // [weight]
        case Algo::floyd_warshall: return 1; // [weight]
        case Algo::scc: return 2;            // [a_ij, a_ji]
        case Algo::insertion_sort: return 1; // constant
    }
    return 0;
}

// Per-instance constants: raw features, message topology, candidate sets and
// the projected U/E blocks. None of this changes across processor iterations.
struct EncodedInstance {
    int n = 0;
    Tensor node_raw;  // n x node_raw_dim
    Tensor msg_raw;   // M x edge_raw_dim, one row per ordered message pair

    // ordered message pairs sorted by (dst, src); groups are dst-contiguous
    std::vector<int> msg_src, msg_dst;
    std::shared_ptr<std::vector<int>> msg_group;

    std::vector<std::vector<int>> candidates;    // node-pointer slots, sorted
    std::vector<std::pair<int, int>> edge_slots; // edge-pointer slots, sorted

    Tensor U;  // n x d
    Tensor E;  // M x d
    int graph_diameter = 0;

    int message_count() const { return static_cast<int>(msg_src.size()); }
    int slot_count() const {
        return edge_slots.empty() ? static_cast<int>(candidates.size())
                                  : static_cast<int>(edge_slots.size());
    }
};

struct ProcessorParams {
    Mlp message;          // 5d -> d with rectified hidden layers
    LinearLayer readout;  // 3d -> d
    LinearLayer gate;     // 3d -> d, squashed by the logistic function
};

struct DecoderParams {
    // node pointers: score(u -> v) = <phi(h_u), psi(h_v)>
    LinearLayer phi, psi;
    // edge pointers: score((i,j) -> k) = <edge_phi(h_i || h_j), edge_psi(h_k)>
    LinearLayer edge_phi, edge_psi;
};

struct Model {
    ModelConfig cfg;
    LinearLayer enc_node, enc_edge;
    ProcessorParams proc;
    DecoderParams dec;

    static Model init(const ModelConfig& cfg, uint64_t seed) {
        cfg.validate();
        Model m;
        m.cfg = cfg;
        const int d = cfg.latent_dim;
        Rng rng = Rng::substream(seed, 0x6d6f64656cULL);
        m.enc_node = LinearLayer(node_raw_dim(cfg.algorithm), d);
        m.enc_edge = LinearLayer(edge_raw_dim(cfg.algorithm), d);
        m.proc.message = Mlp(5 * d, cfg.hidden_dim(), cfg.msg_hidden_layers, d);
        m.proc.readout = LinearLayer(3 * d, d);
        m.proc.gate = LinearLayer(3 * d, d);
        if (uses_edge_pointers(cfg.algorithm)) {
            m.dec.edge_phi = LinearLayer(2 * d, d);
            m.dec.edge_psi = LinearLayer(d, d);
        } else {
            m.dec.phi = LinearLayer(d, d);
            m.dec.psi = LinearLayer(d, d);
        }
        m.enc_node.init_xavier(rng);
        m.enc_edge.init_xavier(rng);
        m.proc.message.init_xavier(rng);
        m.proc.readout.init_xavier(rng);
        m.proc.gate.init_xavier(rng);
        // damp the processor blocks: the equilibrium map must start contractive
        // or early solves truncate at max_iters and feed noisy gradients into
        // the optimizer; the Jacobian regularizer holds the line from there
        for (auto& l : m.proc.message.layers)
            for (int64_t i = 0; i < l.weight.value.numel(); ++i) l.weight.value[i] *= 0.5;
        for (int64_t i = 0; i < m.proc.readout.weight.value.numel(); ++i)
            m.proc.readout.weight.value[i] *= 0.5;
        if (uses_edge_pointers(cfg.algorithm)) {
            m.dec.edge_phi.init_xavier(rng);
            m.dec.edge_psi.init_xavier(rng);
        } else {
            m.dec.phi.init_xavier(rng);
            m.dec.psi.init_xavier(rng);
        }
        m.assign_names();
        return m;
    }

    void assign_names() {
        auto name_layer = [](LinearLayer& l, const std::string& stem) {
            l.weight.name = stem + ".weight";
            l.bias.name = stem + ".bias";
        };
        name_layer(enc_node, "encoder.node");
        name_layer(enc_edge, "encoder.edge");
        for (size_t i = 0; i < proc.message.layers.size(); ++i)
            name_layer(proc.message.layers[i], "processor.message." + std::to_string(i));
        name_layer(proc.readout, "processor.readout");
        name_layer(proc.gate, "processor.gate");
        name_layer(dec.phi, "decoder.phi");
        name_layer(dec.psi, "decoder.psi");
        name_layer(dec.edge_phi, "decoder.edge_phi");
        name_layer(dec.edge_psi, "decoder.edge_psi");
    }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> ps;
        auto add_layer = [&](LinearLayer& l) {
            if (l.weight.value.numel() == 0) return;
            ps.push_back(&l.weight);
            ps.push_back(&l.bias);
        };
        add_layer(enc_node);
        add_layer(enc_edge);
        for (auto& l : proc.message.layers) add_layer(l);
        add_layer(proc.readout);
        add_layer(proc.gate);
        add_layer(dec.phi);
        add_layer(dec.psi);
        add_layer(dec.edge_phi);
        add_layer(dec.edge_psi);
        return ps;
    }

    void zero_grads() {
        for (Parameter* p : parameters()) p->zero_grad();
    }
};

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

// Build the instance constants for one sample: raw feature blocks, the message
// mask (graph edges in both directions plus self-loops for the sparse tasks,
// complete including self for scc and sorting), candidate sets (neighbors plus
// self for bellman_ford, all nodes otherwise) and the projected U/E.
inline EncodedInstance encode(const Sample& sample, Model& model) {
    if (sample.algorithm != model.cfg.algorithm)
        throw std::runtime_error("encode: sample/model algorithm schema mismatch");
    const int n = sample.n();
    const Algo algo = sample.algorithm;
    EncodedInstance inst;
    inst.n = n;

    inst.node_raw = Tensor({n, node_raw_dim(algo)});
    for (int i = 0; i < n; ++i) {
        const auto& row = sample.node_raw[static_cast<size_t>(i)];
        if (static_cast<int>(row.size()) != node_raw_dim(algo))
            throw std::runtime_error("encode: node_raw width does not match schema");
        for (int c = 0; c < node_raw_dim(algo); ++c) inst.node_raw.at(i, c) = row[static_cast<size_t>(c)];
    }

    const bool complete = (algo == Algo::scc || algo == Algo::insertion_sort);
    std::vector<std::vector<std::pair<int, double>>> wnbr(static_cast<size_t>(n));
    std::vector<std::vector<char>> dir_adj;
    if (algo == Algo::scc)
        dir_adj.assign(static_cast<size_t>(n), std::vector<char>(static_cast<size_t>(n), 0));
    for (const auto& e : sample.graph.edges) {
        if (algo == Algo::scc) {
            dir_adj[static_cast<size_t>(e.src)][static_cast<size_t>(e.dst)] = 1;
        } else {
            wnbr[static_cast<size_t>(e.src)].push_back({e.dst, e.w});
            wnbr[static_cast<size_t>(e.dst)].push_back({e.src, e.w});
        }
    }
    for (auto& lst : wnbr) std::sort(lst.begin(), lst.end());

    // message rows, dst-major
    std::vector<std::vector<double>> msg_feat;
    inst.msg_group = std::make_shared<std::vector<int>>();
    for (int dst = 0; dst < n; ++dst) {
        if (complete) {
            for (int src = 0; src < n; ++src) {
                inst.msg_src.push_back(src);
                inst.msg_dst.push_back(dst);
                if (algo == Algo::scc)
                    msg_feat.push_back({dir_adj[static_cast<size_t>(dst)][static_cast<size_t>(src)] ? 1.0 : 0.0,
                                        dir_adj[static_cast<size_t>(src)][static_cast<size_t>(dst)] ? 1.0 : 0.0});
                else
                    msg_feat.push_back({1.0});
            }
        } else {
            // self first (src == dst sorts lowest only when no neighbor < dst;
            // keep strict (dst, src) order: merge self into the sorted scan)
            bool self_emitted = false;
            for (const auto& [src, w] : wnbr[static_cast<size_t>(dst)]) {
                if (!self_emitted && dst < src) {
                    inst.msg_src.push_back(dst);
                    inst.msg_dst.push_back(dst);
                    msg_feat.push_back({0.0});
                    self_emitted = true;
                }
                inst.msg_src.push_back(src);
                inst.msg_dst.push_back(dst);
                msg_feat.push_back({w});
            }
            if (!self_emitted) {
                inst.msg_src.push_back(dst);
                inst.msg_dst.push_back(dst);
                msg_feat.push_back({0.0});
            }
        }
    }
    const int m_count = static_cast<int>(inst.msg_src.size());
    inst.msg_group->resize(static_cast<size_t>(m_count));
    for (int r = 0; r < m_count; ++r) (*inst.msg_group)[static_cast<size_t>(r)] = inst.msg_dst[static_cast<size_t>(r)];
    inst.msg_raw = Tensor({m_count, edge_raw_dim(algo)});
    for (int r = 0; r < m_count; ++r)
        for (int c = 0; c < edge_raw_dim(algo); ++c)
            inst.msg_raw.at(r, c) = msg_feat[static_cast<size_t>(r)][static_cast<size_t>(c)];

    // candidate sets / edge slots
    if (uses_edge_pointers(algo)) {
        for (const auto& e : sample.graph.edges) {
            inst.edge_slots.push_back({e.src, e.dst});
            inst.edge_slots.push_back({e.dst, e.src});
        }
        std::sort(inst.edge_slots.begin(), inst.edge_slots.end());
    } else {
        inst.candidates.resize(static_cast<size_t>(n));
        for (int u = 0; u < n; ++u) {
            auto& cand = inst.candidates[static_cast<size_t>(u)];
            if (algo == Algo::bellman_ford) {
                for (const auto& [v, w] : wnbr[static_cast<size_t>(u)]) cand.push_back(v);
                cand.push_back(u);
                std::sort(cand.begin(), cand.end());
            } else {
                cand.resize(static_cast<size_t>(n));
                for (int v = 0; v < n; ++v) cand[static_cast<size_t>(v)] = v;
            }
        }
    }

    // diagnostics: hop diameter of the message topology without self-loops
    std::vector<std::pair<int, int>> links;
    for (int r = 0; r < m_count; ++r)
        if (inst.msg_src[static_cast<size_t>(r)] != inst.msg_dst[static_cast<size_t>(r)])
            links.push_back({inst.msg_src[static_cast<size_t>(r)], inst.msg_dst[static_cast<size_t>(r)]});
    inst.graph_diameter = hop_diameter(n, links);

    // plain projections
    Tape t(false);
    inst.U = t.val(t.linear(model.enc_node, t.leaf(inst.node_raw)));
    inst.E = t.val(t.linear(model.enc_edge, t.leaf(inst.msg_raw)));
    return inst;
}

// ---------------------------------------------------------------------------
// Processor
// ---------------------------------------------------------------------------

struct EncodedNodes {
    NodeId u, e;
};

inline EncodedNodes encode_traced(Tape& t, const EncodedInstance& inst, Model& model) {
    return {t.linear(model.enc_node, t.leaf(inst.node_raw)),
            t.linear(model.enc_edge, t.leaf(inst.msg_raw))};
}

struct ProcessorTrace {
    NodeId h_prev = -1, u = -1, e = -1;
    NodeId ctx = -1;                  // [U || H], n x 2d
    std::vector<NodeId> msg_preacts;  // hidden pre-activations of the message MLP
    NodeId msg_out = -1;              // M x d
    std::shared_ptr<std::vector<int>> argwin;
    NodeId pooled = -1;  // n x d
    NodeId update = -1;  // candidate update, n x d
    NodeId gate = -1;    // n x d in (0,1)
    NodeId out = -1;     // n x d
};

// One gated message-passing step:
//   ctx_i   = u_i || h_i
//   msg_ij  = MLP(ctx_i, ctx_j, e_ij), pooled_i = max over message sources
//   update  = readout(ctx_i, pooled_i), gate = logistic(gate_proj(ctx_i, pooled_i))
//   h'_i    = gate * update + (1 - gate) * h_i
inline ProcessorTrace processor_step_traced(Tape& t, NodeId h_prev, NodeId u, NodeId e,
                                            const EncodedInstance& inst, ProcessorParams& proc) {
    ProcessorTrace tr;
    tr.h_prev = h_prev;
    tr.u = u;
    tr.e = e;
    tr.ctx = t.concat_cols({u, h_prev});

    auto dst_idx = std::make_shared<std::vector<int>>(inst.msg_dst);
    auto src_idx = std::make_shared<std::vector<int>>(inst.msg_src);
    NodeId ctx_dst = t.gather_rows(tr.ctx, dst_idx);
    NodeId ctx_src = t.gather_rows(tr.ctx, src_idx);
    NodeId msg_in = t.concat_cols({ctx_dst, ctx_src, e});

    NodeId h = msg_in;
    for (size_t l = 0; l < proc.message.layers.size(); ++l) {
        h = t.linear(proc.message.layers[l], h);
        if (l + 1 < proc.message.layers.size()) {
            tr.msg_preacts.push_back(h);
            h = t.relu(h);
        }
    }
    tr.msg_out = h;

    auto seg = t.segment_max(tr.msg_out, inst.msg_group, inst.n);
    tr.pooled = seg.id;
    tr.argwin = seg.argwin;

    NodeId rin = t.concat_cols({tr.ctx, tr.pooled});
    tr.update = t.linear(proc.readout, rin);
    tr.gate = t.sigmoid(t.linear(proc.gate, rin));
    tr.out = t.add(t.mul(tr.gate, tr.update), t.mul(t.one_minus(tr.gate), h_prev));
    return tr;
}

// Reusable buffers for the untraced application. The fixed-point solver calls
// the processor hundreds of times per sample with identical shapes; keeping the
// scratch alive avoids rebuilding any per-iteration state.
struct ProcessorScratch {
    Tensor ctx, msg_in, mlp_a, mlp_b, pooled, rin, update, gate, out;
};

// Plain (untraced) application with fixed U, E; this is the map handed to the
// fixed-point solver, so it must not retain any per-iteration record. Uses the
// same linear kernel as the tape op, so results match the traced path bitwise.
inline const Tensor& processor_apply(const Tensor& h_prev, const EncodedInstance& inst,
                                     ProcessorParams& proc, ProcessorScratch& s) {
    const int n = inst.n;
    const int d = h_prev.cols();
    const int m_count = inst.message_count();
    auto ensure = [](Tensor& t, int r, int c) {
        if (t.rank() != 2 || t.rows() != r || t.cols() != c) t = Tensor({r, c});
    };

    ensure(s.ctx, n, 2 * d);
    for (int i = 0; i < n; ++i) {
        double* row = s.ctx.data() + static_cast<size_t>(i) * 2 * d;
        const double* u = inst.U.data() + static_cast<size_t>(i) * d;
        const double* h = h_prev.data() + static_cast<size_t>(i) * d;
        for (int c = 0; c < d; ++c) row[c] = u[c];
        for (int c = 0; c < d; ++c) row[d + c] = h[c];
    }

    ensure(s.msg_in, m_count, 5 * d);
    for (int r = 0; r < m_count; ++r) {
        double* row = s.msg_in.data() + static_cast<size_t>(r) * 5 * d;
        const double* cd = s.ctx.data() + static_cast<size_t>(inst.msg_dst[static_cast<size_t>(r)]) * 2 * d;
        const double* cs = s.ctx.data() + static_cast<size_t>(inst.msg_src[static_cast<size_t>(r)]) * 2 * d;
        const double* e = inst.E.data() + static_cast<size_t>(r) * d;
        for (int c = 0; c < 2 * d; ++c) row[c] = cd[c];
        for (int c = 0; c < 2 * d; ++c) row[2 * d + c] = cs[c];
        for (int c = 0; c < d; ++c) row[4 * d + c] = e[c];
    }

    const Tensor* cur = &s.msg_in;
    for (size_t l = 0; l < proc.message.layers.size(); ++l) {
        LinearLayer& layer = proc.message.layers[l];
        Tensor& dst = (l % 2 == 0) ? s.mlp_a : s.mlp_b;
        ensure(dst, m_count, layer.out_dim());
        linear_rows(*cur, layer.weight.value, &layer.bias.value, dst);
        if (l + 1 < proc.message.layers.size())
            for (int64_t i = 0; i < dst.numel(); ++i)
                if (dst[i] < 0.0) dst[i] = 0.0;
        cur = &dst;
    }

    ensure(s.pooled, n, d);
    {
        std::vector<char> seen(static_cast<size_t>(n), 0);
        for (int r = 0; r < m_count; ++r) {
            const int g = (*inst.msg_group)[static_cast<size_t>(r)];
            const double* mr = cur->data() + static_cast<size_t>(r) * d;
            double* pg = s.pooled.data() + static_cast<size_t>(g) * d;
            if (!seen[static_cast<size_t>(g)]) {
                seen[static_cast<size_t>(g)] = 1;
                for (int c = 0; c < d; ++c) pg[c] = mr[c];
            } else {
                for (int c = 0; c < d; ++c)
                    if (mr[c] > pg[c]) pg[c] = mr[c];
            }
        }
        for (int g = 0; g < n; ++g)
            if (!seen[static_cast<size_t>(g)])
                throw std::runtime_error("processor_apply: empty aggregation group " +
                                         std::to_string(g));
    }

    ensure(s.rin, n, 3 * d);
    for (int i = 0; i < n; ++i) {
        double* row = s.rin.data() + static_cast<size_t>(i) * 3 * d;
        const double* cx = s.ctx.data() + static_cast<size_t>(i) * 2 * d;
        const double* pl = s.pooled.data() + static_cast<size_t>(i) * d;
        for (int c = 0; c < 2 * d; ++c) row[c] = cx[c];
        for (int c = 0; c < d; ++c) row[2 * d + c] = pl[c];
    }

    ensure(s.update, n, d);
    ensure(s.gate, n, d);
    ensure(s.out, n, d);
    linear_rows(s.rin, proc.readout.weight.value, &proc.readout.bias.value, s.update);
    linear_rows(s.rin, proc.gate.weight.value, &proc.gate.bias.value, s.gate);
    for (int64_t i = 0; i < s.gate.numel(); ++i) s.gate[i] = Tape::sigmoid_scalar(s.gate[i]);
    for (int64_t i = 0; i < s.out.numel(); ++i)
        s.out[i] = s.gate[i] * s.update[i] + (1.0 - s.gate[i]) * h_prev[i];
    return s.out;
}

inline Tensor processor_step(const Tensor& h_prev, const EncodedInstance& inst, Model& model) {
    thread_local ProcessorScratch scratch;
    return processor_apply(h_prev, inst, model.proc, scratch);
}

// Directional derivative of one processor step with respect to the latent
// state, as tape ops at the trace's linearization point. Rectifier masks and
// max-aggregation routings are frozen from the primal; everything else stays
// parameter-tracked, so the squared norm of the result is differentiable in
// the parameters (what the Jacobian regularizer needs).
inline NodeId processor_jvp(Tape& t, const ProcessorTrace& tr, const EncodedInstance& inst,
                            ProcessorParams& proc, const Tensor& v) {
    const int n = inst.n;
    const int d = v.cols();
    const int m_count = inst.message_count();

    Tensor dctx({n, 2 * d});
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < d; ++c) dctx.at(i, d + c) = v.at(i, c);
    const int in_dim = proc.message.layers.front().in_dim();
    Tensor dmsg_in({m_count, in_dim});
    for (int r = 0; r < m_count; ++r) {
        const int dst = inst.msg_dst[static_cast<size_t>(r)];
        const int src = inst.msg_src[static_cast<size_t>(r)];
        for (int c = 0; c < 2 * d; ++c) {
            dmsg_in.at(r, c) = dctx.at(dst, c);
            dmsg_in.at(r, 2 * d + c) = dctx.at(src, c);
        }
        // encoded-edge block of the tangent is zero
    }

    NodeId dh = t.leaf(std::move(dmsg_in));
    for (size_t l = 0; l < proc.message.layers.size(); ++l) {
        dh = t.linear_nobias(proc.message.layers[l], dh);
        if (l + 1 < proc.message.layers.size()) {
            const Tensor& pre = t.val(tr.msg_preacts[l]);
            Tensor mask(pre.shape());
            for (int64_t i = 0; i < pre.numel(); ++i) mask[i] = pre[i] > 0.0 ? 1.0 : 0.0;
            dh = t.mul(dh, t.leaf(std::move(mask)));
        }
    }
    NodeId dpooled = t.gather_winners(dh, tr.argwin, n);
    NodeId drin = t.concat_cols({t.leaf(dctx), dpooled});
    NodeId dupdate = t.linear_nobias(proc.readout, drin);
    NodeId dgate_pre = t.linear_nobias(proc.gate, drin);
    NodeId dgate = t.mul(t.mul(tr.gate, t.one_minus(tr.gate)), dgate_pre);

    NodeId term = t.add(t.mul(dgate, tr.update), t.mul(tr.gate, dupdate));
    term = t.sub(term, t.mul(dgate, tr.h_prev));
    term = t.add(term, t.mul(t.one_minus(tr.gate), t.leaf(v)));
    return term;
}

// ---------------------------------------------------------------------------
// Decoders, loss, accuracy
// ---------------------------------------------------------------------------

// Group-contiguous score layout: slot g owns scores [offsets[g], offsets[g+1]).
struct SlotLayout {
    std::shared_ptr<std::vector<int>> offsets;
    std::shared_ptr<std::vector<std::pair<int, int>>> pairs;
};

inline SlotLayout build_slot_layout(const EncodedInstance& inst) {
    SlotLayout lay;
    lay.offsets = std::make_shared<std::vector<int>>();
    lay.pairs = std::make_shared<std::vector<std::pair<int, int>>>();
    lay.offsets->push_back(0);
    if (inst.edge_slots.empty()) {
        for (size_t u = 0; u < inst.candidates.size(); ++u) {
            for (int v : inst.candidates[u]) lay.pairs->push_back({static_cast<int>(u), v});
            lay.offsets->push_back(static_cast<int>(lay.pairs->size()));
        }
    } else {
        for (size_t s = 0; s < inst.edge_slots.size(); ++s) {
            for (int k = 0; k < inst.n; ++k) lay.pairs->push_back({static_cast<int>(s), k});
            lay.offsets->push_back(static_cast<int>(lay.pairs->size()));
        }
    }
    return lay;
}

// Scores for every (slot, candidate) pair; non-candidates are simply absent
// from the layout, which is the masked -inf logit in effect.
inline NodeId decode_traced(Tape& t, NodeId h, const EncodedInstance& inst, DecoderParams& dec,
                            const SlotLayout& lay) {
    if (inst.edge_slots.empty()) {
        NodeId a = t.linear(dec.phi, h);
        NodeId b = t.linear(dec.psi, h);
        return t.pair_dot(a, b, lay.pairs);
    }
    auto i_idx = std::make_shared<std::vector<int>>();
    auto j_idx = std::make_shared<std::vector<int>>();
    for (const auto& [i, j] : inst.edge_slots) {
        i_idx->push_back(i);
        j_idx->push_back(j);
    }
    NodeId cat = t.concat_cols({t.gather_rows(h, i_idx), t.gather_rows(h, j_idx)});
    NodeId a = t.linear(dec.edge_phi, cat);
    NodeId b = t.linear(dec.edge_psi, h);
    return t.pair_dot(a, b, lay.pairs);
}

struct Logits {
    Tensor scores;
    SlotLayout layout;
    int slots() const { return static_cast<int>(layout.offsets->size()) - 1; }
};

inline Logits decode_pointers(const Tensor& h, const EncodedInstance& inst, Model& model) {
    Logits out;
    out.layout = build_slot_layout(inst);
    Tape t(false);
    out.scores = t.val(decode_traced(t, t.leaf(h), inst, model.dec, out.layout));
    return out;
}

// Absolute score index of the oracle target in each slot. A target outside its
// slot's candidate set is a fatal data error.
inline std::vector<int> target_positions(const Sample& sample, const EncodedInstance& inst,
                                         const SlotLayout& lay) {
    std::vector<int> pos;
    if (inst.edge_slots.empty()) {
        for (int u = 0; u < inst.n; ++u) {
            const auto& cand = inst.candidates[static_cast<size_t>(u)];
            const int tgt = sample.node_targets[static_cast<size_t>(u)];
            auto it = std::lower_bound(cand.begin(), cand.end(), tgt);
            if (it == cand.end() || *it != tgt)
                throw std::runtime_error("pointer target " + std::to_string(tgt) +
                                         " of node " + std::to_string(u) +
                                         " is outside its candidate set");
            pos.push_back((*lay.offsets)[static_cast<size_t>(u)] +
                          static_cast<int>(it - cand.begin()));
        }
    } else {
        std::vector<std::pair<std::pair<int, int>, int>> lookup;
        for (const auto& [i, j, k] : sample.edge_targets) lookup.push_back({{i, j}, k});
        std::sort(lookup.begin(), lookup.end());
        if (lookup.size() != inst.edge_slots.size())
            throw std::runtime_error("edge target count does not match edge slots");
        for (size_t s = 0; s < inst.edge_slots.size(); ++s) {
            if (lookup[s].first != inst.edge_slots[s])
                throw std::runtime_error("edge targets and edge slots disagree");
            const int k = lookup[s].second;
            pos.push_back((*lay.offsets)[s] + k);
        }
    }
    return pos;
}

// Mean softmax cross-entropy over the pointer slots of one instance.
inline double pointer_loss(const Logits& lg, const std::vector<int>& positions) {
    const int slots = lg.slots();
    if (slots == 0) return 0.0;
    Tape t(false);
    auto pos = std::make_shared<std::vector<int>>(positions);
    NodeId nll = t.nll_sum(t.leaf(lg.scores), lg.layout.offsets, pos);
    return t.val(nll)[0] / slots;
}

inline int argmax_in_group(const Tensor& scores, int lo, int hi) {
    int best = lo;
    for (int i = lo + 1; i < hi; ++i)
        if (scores[i] > scores[best]) best = i;  // ties -> lowest index
    return best;
}

inline int count_correct(const Logits& lg, const std::vector<int>& positions) {
    int correct = 0;
    const auto& off = *lg.layout.offsets;
    for (size_t g = 0; g + 1 < off.size(); ++g)
        if (argmax_in_group(lg.scores, off[g], off[g + 1]) == positions[g]) ++correct;
    return correct;
}

inline double pointer_accuracy(const Logits& lg, const std::vector<int>& positions) {
    const int slots = lg.slots();
    if (slots == 0) return 1.0;
    return static_cast<double>(count_correct(lg, positions)) / slots;
}

// Expected accuracy of uniform guessing over each slot's candidate set.
inline double chance_level_sum(const EncodedInstance& inst) {
    double s = 0.0;
    if (inst.edge_slots.empty()) {
        for (const auto& cand : inst.candidates) s += 1.0 / static_cast<double>(cand.size());
    } else {
        s += static_cast<double>(inst.edge_slots.size()) / inst.n;
    }
    return s;
}

}  // namespace dear
