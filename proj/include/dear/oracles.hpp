#pragma once

#include <algorithm>
#include <array>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "dear/graph.hpp"

namespace dear {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct ShortestPathResult {
    std::vector<int> pointers;       // predecessor per node, self at source/unreachable
    std::vector<double> distances;
    int tau = 1;                     // synchronous relaxation rounds until no change
};

// Single-source shortest paths on an undirected non-negatively weighted graph.
// Distances come from synchronous relaxation rounds (which also yields tau);
// pointers are then derived from final distances so that equal-cost predecessor
// ties always resolve to the lowest node index.
inline ShortestPathResult oracle_bellman_ford(const Graph& g, int source) {
    if (g.directed) throw std::invalid_argument("oracle_bellman_ford: expects undirected graph");
    const int n = g.n;
    std::vector<std::vector<std::pair<int, double>>> nbr(static_cast<size_t>(n));
    for (const auto& e : g.edges) {
        if (e.w < 0.0) throw std::invalid_argument("oracle_bellman_ford: negative weight");
        nbr[static_cast<size_t>(e.src)].push_back({e.dst, e.w});
        nbr[static_cast<size_t>(e.dst)].push_back({e.src, e.w});
    }
    for (auto& lst : nbr) std::sort(lst.begin(), lst.end());

    ShortestPathResult res;
    res.distances.assign(static_cast<size_t>(n), kInf);
    res.distances[static_cast<size_t>(source)] = 0.0;
    res.tau = 0;
    bool changed = true;
    while (changed) {
        ++res.tau;
        changed = false;
        std::vector<double> next = res.distances;
        for (int u = 0; u < n; ++u) {
            for (const auto& [v, w] : nbr[static_cast<size_t>(u)]) {
                const double cand = res.distances[static_cast<size_t>(v)] + w;
                if (cand < next[static_cast<size_t>(u)]) {
                    next[static_cast<size_t>(u)] = cand;
                    changed = true;
                }
            }
        }
        res.distances = std::move(next);
    }

    res.pointers.resize(static_cast<size_t>(n));
    for (int u = 0; u < n; ++u) {
        res.pointers[static_cast<size_t>(u)] = u;
        if (u == source || res.distances[static_cast<size_t>(u)] == kInf) continue;
        for (const auto& [v, w] : nbr[static_cast<size_t>(u)]) {  // ascending v
            if (res.distances[static_cast<size_t>(v)] + w == res.distances[static_cast<size_t>(u)]) {
                res.pointers[static_cast<size_t>(u)] = v;
                break;
            }
        }
    }
    return res;
}

struct AllPairsResult {
    std::vector<std::vector<double>> dist;
    std::vector<std::vector<int>> pred;            // predecessor matrix
    std::vector<std::array<int, 3>> edge_pointers; // (i, j, pred[i][j]) per ordered edge
    int tau = 1;
};

// Classical triple loop, k ascending. pred[i][j] starts at i for existing edges
// and follows pred[k][j] on strict improvement, so it is the predecessor of j on
// the chosen shortest i->j path. Pointers are emitted for both orientations of
// every stored edge, sorted by (i, j).
inline AllPairsResult oracle_floyd_warshall(const Graph& g) {
    if (g.directed) throw std::invalid_argument("oracle_floyd_warshall: expects undirected graph");
    const int n = g.n;
    AllPairsResult res;
    res.dist.assign(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(n), kInf));
    res.pred.assign(static_cast<size_t>(n), std::vector<int>(static_cast<size_t>(n), -1));
    for (int i = 0; i < n; ++i) {
        res.dist[static_cast<size_t>(i)][static_cast<size_t>(i)] = 0.0;
        res.pred[static_cast<size_t>(i)][static_cast<size_t>(i)] = i;
    }
    for (const auto& e : g.edges) {
        if (e.w < 0.0) throw std::invalid_argument("oracle_floyd_warshall: negative weight");
        res.dist[static_cast<size_t>(e.src)][static_cast<size_t>(e.dst)] = e.w;
        res.dist[static_cast<size_t>(e.dst)][static_cast<size_t>(e.src)] = e.w;
        res.pred[static_cast<size_t>(e.src)][static_cast<size_t>(e.dst)] = e.src;
        res.pred[static_cast<size_t>(e.dst)][static_cast<size_t>(e.src)] = e.dst;
    }
    for (int k = 0; k < n; ++k) {
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                const double through = res.dist[static_cast<size_t>(i)][static_cast<size_t>(k)] +
                                       res.dist[static_cast<size_t>(k)][static_cast<size_t>(j)];
                if (through < res.dist[static_cast<size_t>(i)][static_cast<size_t>(j)]) {
                    res.dist[static_cast<size_t>(i)][static_cast<size_t>(j)] = through;
                    res.pred[static_cast<size_t>(i)][static_cast<size_t>(j)] =
                        res.pred[static_cast<size_t>(k)][static_cast<size_t>(j)];
                }
            }
        }
    }
    res.tau = n;

    std::vector<std::pair<int, int>> oriented;
    for (const auto& e : g.edges) {
        oriented.push_back({e.src, e.dst});
        oriented.push_back({e.dst, e.src});
    }
    std::sort(oriented.begin(), oriented.end());
    for (const auto& [i, j] : oriented)
        res.edge_pointers.push_back({i, j, res.pred[static_cast<size_t>(i)][static_cast<size_t>(j)]});
    return res;
}

struct SccResult {
    std::vector<int> component;  // component id per node
    std::vector<int> pointers;   // lowest-index in-neighbor in the same component, else self
    int tau = 1;
};

// Strongly connected components via iterative Kosaraju. The pointer of u is its
// lowest-index in-neighbor inside SCC(u), or u itself when none exists. tau is a
// settling-round diagnostic: the max BFS depth, within each component, from the
// component's lowest-index node, plus one.
inline SccResult oracle_scc(const Graph& g) {
    if (!g.directed) throw std::invalid_argument("oracle_scc: expects directed graph");
    const int n = g.n;
    std::vector<std::vector<int>> out(static_cast<size_t>(n)), in(static_cast<size_t>(n));
    for (const auto& e : g.edges) {
        out[static_cast<size_t>(e.src)].push_back(e.dst);
        in[static_cast<size_t>(e.dst)].push_back(e.src);
    }

    // first pass: finish order
    std::vector<int> order;
    order.reserve(static_cast<size_t>(n));
    std::vector<char> visited(static_cast<size_t>(n), 0);
    std::vector<std::pair<int, size_t>> stack;
    for (int s = 0; s < n; ++s) {
        if (visited[static_cast<size_t>(s)]) continue;
        visited[static_cast<size_t>(s)] = 1;
        stack.push_back({s, 0});
        while (!stack.empty()) {
            auto& [u, next] = stack.back();
            if (next < out[static_cast<size_t>(u)].size()) {
                const int v = out[static_cast<size_t>(u)][next++];
                if (!visited[static_cast<size_t>(v)]) {
                    visited[static_cast<size_t>(v)] = 1;
                    stack.push_back({v, 0});
                }
            } else {
                order.push_back(u);
                stack.pop_back();
            }
        }
    }

    // second pass: reverse graph in reverse finish order
    SccResult res;
    res.component.assign(static_cast<size_t>(n), -1);
    int comp_count = 0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if (res.component[static_cast<size_t>(*it)] >= 0) continue;
        const int c = comp_count++;
        std::vector<int> dfs = {*it};
        res.component[static_cast<size_t>(*it)] = c;
        while (!dfs.empty()) {
            const int u = dfs.back();
            dfs.pop_back();
            for (int v : in[static_cast<size_t>(u)]) {
                if (res.component[static_cast<size_t>(v)] < 0) {
                    res.component[static_cast<size_t>(v)] = c;
                    dfs.push_back(v);
                }
            }
        }
    }

    res.pointers.resize(static_cast<size_t>(n));
    for (int u = 0; u < n; ++u) {
        int best = u;
        for (int v : in[static_cast<size_t>(u)]) {
            if (res.component[static_cast<size_t>(v)] == res.component[static_cast<size_t>(u)] &&
                v != u && (best == u || v < best))
                best = v;
        }
        res.pointers[static_cast<size_t>(u)] = best;
    }

    // settling-round diagnostic
    std::vector<int> comp_min(static_cast<size_t>(comp_count), n);
    for (int u = 0; u < n; ++u)
        comp_min[static_cast<size_t>(res.component[static_cast<size_t>(u)])] =
            std::min(comp_min[static_cast<size_t>(res.component[static_cast<size_t>(u)])], u);
    std::vector<int> depth(static_cast<size_t>(n), -1);
    int max_depth = 0;
    for (int c = 0; c < comp_count; ++c) {
        const int root = comp_min[static_cast<size_t>(c)];
        std::vector<int> frontier = {root};
        depth[static_cast<size_t>(root)] = 0;
        int d = 0;
        while (!frontier.empty()) {
            std::vector<int> next;
            for (int u : frontier) {
                for (int v : out[static_cast<size_t>(u)]) {
                    if (res.component[static_cast<size_t>(v)] == c &&
                        depth[static_cast<size_t>(v)] < 0) {
                        depth[static_cast<size_t>(v)] = d + 1;
                        next.push_back(v);
                    }
                }
            }
            if (!next.empty()) ++d;
            frontier = std::move(next);
        }
        max_depth = std::max(max_depth, d);
    }
    res.tau = max_depth + 1;
    return res;
}

// Predecessor pointers of the stable ascending order: the minimum element
// points to itself, every other element points to the index of the element
// just before it in sorted (key, original index) order.
inline std::vector<int> oracle_insertion_sort(const std::vector<double>& keys) {
    if (keys.empty()) throw std::invalid_argument("oracle_insertion_sort: empty input");
    const int n = static_cast<int>(keys.size());
    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (keys[static_cast<size_t>(a)] != keys[static_cast<size_t>(b)])
            return keys[static_cast<size_t>(a)] < keys[static_cast<size_t>(b)];
        return a < b;
    });
    std::vector<int> pointers(static_cast<size_t>(n));
    pointers[static_cast<size_t>(idx[0])] = idx[0];
    for (int r = 1; r < n; ++r)
        pointers[static_cast<size_t>(idx[static_cast<size_t>(r)])] = idx[static_cast<size_t>(r - 1)];
    return pointers;
}

inline int insertion_sort_tau(int n) { return std::max(1, n - 1); }

}  // namespace dear
