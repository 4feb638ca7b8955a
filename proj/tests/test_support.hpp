#pragma once

// Shared helpers for the unit and acceptance suites.

#include <map>
#include <utility>
#include <vector>

#include "dear/model.hpp"

namespace dear_test {

inline dear::Sample permute_sample(const dear::Sample& s, const std::vector<int>& perm) {
    dear::Sample p;
    p.algorithm = s.algorithm;
    p.graph.n = s.graph.n;
    p.graph.directed = s.graph.directed;
    for (const auto& e : s.graph.edges)
        p.graph.edges.push_back({perm[static_cast<size_t>(e.src)],
                                 perm[static_cast<size_t>(e.dst)], e.w});
    p.node_raw.resize(s.node_raw.size());
    for (size_t u = 0; u < s.node_raw.size(); ++u)
        p.node_raw[static_cast<size_t>(perm[u])] = s.node_raw[u];
    if (!s.node_targets.empty()) {
        p.node_targets.resize(s.node_targets.size());
        for (size_t u = 0; u < s.node_targets.size(); ++u)
            p.node_targets[static_cast<size_t>(perm[u])] =
                perm[static_cast<size_t>(s.node_targets[u])];
    }
    for (const auto& [i, j, k] : s.edge_targets)
        p.edge_targets.push_back({perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)],
                                  perm[static_cast<size_t>(k)]});
    p.tau = s.tau;
    return p;
}

// owner key: (node, -1) for node-pointer schemas, (i, j) for edge pointers
using ProbKey = std::pair<std::pair<int, int>, int>;

inline std::map<ProbKey, double> prob_map(const dear::Logits& lg,
                                          const dear::EncodedInstance& inst) {
    std::map<ProbKey, double> out;
    const auto& off = *lg.layout.offsets;
    for (size_t g = 0; g + 1 < off.size(); ++g) {
        double mx = lg.scores[off[g]];
        for (int i = off[g]; i < off[g + 1]; ++i) mx = std::max(mx, lg.scores[i]);
        double z = 0.0;
        for (int i = off[g]; i < off[g + 1]; ++i) z += std::exp(lg.scores[i] - mx);
        for (int i = off[g]; i < off[g + 1]; ++i) {
            const auto [owner_row, cand] = (*lg.layout.pairs)[static_cast<size_t>(i)];
            std::pair<int, int> owner =
                inst.edge_slots.empty() ? std::pair<int, int>{owner_row, -1}
                                        : inst.edge_slots[static_cast<size_t>(owner_row)];
            const int cand_node =
                inst.edge_slots.empty()
                    ? inst.candidates[static_cast<size_t>(owner_row)]
                                     [static_cast<size_t>(i - off[g])]
                    : cand;
            out[{owner, cand_node}] = std::exp(lg.scores[i] - mx) / z;
        }
    }
    return out;
}

// Largest deviation between the permuted instance's pointer distribution and
// the permutation of the base instance's distribution; also checks processor
// output rows. Returns the max abs deviation observed.
inline double equivariance_gap(dear::Model& model, const dear::Sample& s,
                               const std::vector<int>& perm, const dear::Tensor& h) {
    using namespace dear;
    Sample sp = permute_sample(s, perm);
    EncodedInstance ia = encode(s, model);
    EncodedInstance ib = encode(sp, model);
    const int n = ia.n;
    const int d = h.cols();
    Tensor hp({n, d});
    for (int u = 0; u < n; ++u)
        for (int c = 0; c < d; ++c) hp.at(perm[static_cast<size_t>(u)], c) = h.at(u, c);

    Tensor oa = processor_step(h, ia, model);
    Tensor ob = processor_step(hp, ib, model);
    double gap = 0.0;
    for (int u = 0; u < n; ++u)
        for (int c = 0; c < d; ++c)
            gap = std::max(gap, std::abs(oa.at(u, c) - ob.at(perm[static_cast<size_t>(u)], c)));

    auto pa = prob_map(decode_pointers(oa, ia, model), ia);
    auto pb = prob_map(decode_pointers(ob, ib, model), ib);
    if (pa.size() != pb.size()) return 1.0;
    for (const auto& [key, prob] : pa) {
        const auto& [owner, cand] = key;
        std::pair<int, int> powner =
            owner.second < 0
                ? std::pair<int, int>{perm[static_cast<size_t>(owner.first)], -1}
                : std::pair<int, int>{perm[static_cast<size_t>(owner.first)],
                                      perm[static_cast<size_t>(owner.second)]};
        auto it = pb.find({powner, perm[static_cast<size_t>(cand)]});
        if (it == pb.end()) return 1.0;
        gap = std::max(gap, std::abs(prob - it->second));
    }
    return gap;
}

}  // namespace dear_test
