#pragma once

#include <algorithm>
#include <queue>
#include <stdexcept>
#include <vector>

#include "dear/rng.hpp"

namespace dear {

// Simple edge-list graph. No self-loops, no duplicate edges; undirected graphs
// store each edge once and are interpreted symmetrically.
struct Graph {
    struct Edge {
        int src = 0;
        int dst = 0;
        double w = 0.0;
    };

    int n = 0;
    bool directed = false;
    std::vector<Edge> edges;

    std::vector<std::vector<int>> adjacency() const {
        std::vector<std::vector<int>> adj(static_cast<size_t>(n));
        for (const Edge& e : edges) {
            adj[static_cast<size_t>(e.src)].push_back(e.dst);
            if (!directed) adj[static_cast<size_t>(e.dst)].push_back(e.src);
        }
        return adj;
    }
};

// G(n, p): every (un)ordered pair is included independently with probability p,
// weights iid uniform [0,1]. Pair order (and hence the consumed stream) is fixed.
inline Graph gen_erdos_renyi(int n, double p, bool directed, Rng& rng) {
    if (n < 2) throw std::invalid_argument("gen_erdos_renyi: n must be >= 2");
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("gen_erdos_renyi: p outside [0,1]");
    Graph g;
    g.n = n;
    g.directed = directed;
    for (int i = 0; i < n; ++i) {
        for (int j = directed ? 0 : i + 1; j < n; ++j) {
            if (i == j) continue;
            if (rng.uniform01() < p) g.edges.push_back({i, j, rng.uniform01()});
        }
    }
    return g;
}

// Hop diameter of an undirected view of the message topology: the largest
// finite BFS distance over all reachable ordered pairs (0 for edgeless graphs).
inline int hop_diameter(int n, const std::vector<std::pair<int, int>>& links) {
    std::vector<std::vector<int>> adj(static_cast<size_t>(n));
    for (const auto& [a, b] : links) {
        if (a == b) continue;
        adj[static_cast<size_t>(a)].push_back(b);
        adj[static_cast<size_t>(b)].push_back(a);
    }
    int diameter = 0;
    std::vector<int> dist(static_cast<size_t>(n));
    for (int s = 0; s < n; ++s) {
        std::fill(dist.begin(), dist.end(), -1);
        std::queue<int> q;
        q.push(s);
        dist[static_cast<size_t>(s)] = 0;
        while (!q.empty()) {
            const int u = q.front();
            q.pop();
            diameter = std::max(diameter, dist[static_cast<size_t>(u)]);
            for (int v : adj[static_cast<size_t>(u)]) {
                if (dist[static_cast<size_t>(v)] < 0) {
                    dist[static_cast<size_t>(v)] = dist[static_cast<size_t>(u)] + 1;
                    q.push(v);
                }
            }
        }
    }
    return diameter;
}

}  // namespace dear
