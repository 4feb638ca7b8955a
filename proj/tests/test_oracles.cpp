#include <catch2/catch_amalgamated.hpp>

#include "dear/oracles.hpp"
#include "dear/selftest.hpp"

using namespace dear;
namespace sd = selftest_detail;

namespace {

Graph path_graph(int n, double w = 1.0) {
    Graph g;
    g.n = n;
    for (int i = 0; i + 1 < n; ++i) g.edges.push_back({i, i + 1, w});
    return g;
}

}  // namespace

TEST_CASE("bellman-ford examples") {
    SECTION("single node") {
        Graph g;
        g.n = 1;
        auto res = oracle_bellman_ford(g, 0);
        CHECK(res.pointers == std::vector<int>{0});
        CHECK(res.distances[0] == 0.0);
        CHECK(res.tau >= 1);
    }
    SECTION("unit path 0-1-2") {
        auto res = oracle_bellman_ford(path_graph(3), 0);
        CHECK(res.pointers == std::vector<int>{0, 0, 1});
        CHECK(res.distances == std::vector<double>{0, 1, 2});
    }
    SECTION("unreachable nodes point to themselves") {
        Graph g;
        g.n = 3;
        g.edges.push_back({0, 1, 0.5});
        auto res = oracle_bellman_ford(g, 0);
        CHECK(res.pointers[2] == 2);
        CHECK(res.distances[2] == kInf);
    }
    SECTION("equal-cost predecessor ties break to the lowest index") {
        // two length-1 paths to node 3 through nodes 1 and 2 with equal weights
        Graph g;
        g.n = 4;
        g.edges = {{0, 1, 0.5}, {0, 2, 0.5}, {1, 3, 0.5}, {2, 3, 0.5}};
        auto res = oracle_bellman_ford(g, 0);
        CHECK(res.pointers[3] == 1);
    }
    SECTION("distances equal exhaustive path enumeration on small graphs") {
        for (int trial = 0; trial < 120; ++trial) {
            Rng rng = Rng::substream(501, 0xbf, static_cast<uint64_t>(trial));
            const int n = rng.range_int(2, 8);
            Graph g = gen_erdos_renyi(n, rng.uniform01(), false, rng);
            sd::quantize_weights(g);
            const int src = rng.range_int(0, n - 1);
            auto res = oracle_bellman_ford(g, src);
            auto brute = sd::brute_force_shortest_paths(g, src);
            for (int u = 0; u < n; ++u) REQUIRE(res.distances[static_cast<size_t>(u)] ==
                                                brute[static_cast<size_t>(u)]);
        }
    }
    SECTION("pointer chains reach the source with non-increasing distance") {
        for (int trial = 0; trial < 60; ++trial) {
            Rng rng = Rng::substream(502, 0xbf, static_cast<uint64_t>(trial));
            const int n = rng.range_int(2, 12);
            Graph g = gen_erdos_renyi(n, rng.uniform01(), false, rng);
            const int src = rng.range_int(0, n - 1);
            auto res = oracle_bellman_ford(g, src);
            for (int u = 0; u < n; ++u) {
                if (res.distances[static_cast<size_t>(u)] == kInf || u == src) {
                    if (u != src) CHECK(res.pointers[static_cast<size_t>(u)] == u);
                    continue;
                }
                int cur = u, hops = 0;
                while (cur != src) {
                    const int prev = res.pointers[static_cast<size_t>(cur)];
                    REQUIRE(prev != cur);  // acyclic except the source self-loop
                    CHECK(res.distances[static_cast<size_t>(prev)] <=
                          res.distances[static_cast<size_t>(cur)]);
                    cur = prev;
                    REQUIRE(++hops <= n - 1);
                }
            }
        }
    }
}

TEST_CASE("floyd-warshall examples") {
    SECTION("triangle improvement via node 1") {
        Graph g;
        g.n = 3;
        g.edges = {{0, 1, 1.0}, {1, 2, 1.0}, {0, 2, 3.0}};
        auto res = oracle_floyd_warshall(g);
        CHECK(res.dist[0][2] == 2.0);
        CHECK(res.pred[0][2] == 1);
        // pointers only for existing edges, both orientations, sorted
        CHECK(res.edge_pointers.size() == 6);
        bool found = false;
        for (const auto& [i, j, k] : res.edge_pointers)
            if (i == 0 && j == 2) {
                found = true;
                CHECK(k == 1);
            }
        CHECK(found);
    }
    SECTION("no pointers emitted for absent edges") {
        Graph g;
        g.n = 4;
        g.edges = {{0, 1, 1.0}};
        auto res = oracle_floyd_warshall(g);
        CHECK(res.edge_pointers.size() == 2);
    }
    SECTION("distances match bellman-ford from every source") {
        for (int trial = 0; trial < 80; ++trial) {
            Rng rng = Rng::substream(503, 0xf3, static_cast<uint64_t>(trial));
            const int n = rng.range_int(2, 7);
            Graph g = gen_erdos_renyi(n, rng.uniform01(), false, rng);
            sd::quantize_weights(g);
            auto fw = oracle_floyd_warshall(g);
            for (int s = 0; s < n; ++s) {
                auto bf = oracle_bellman_ford(g, s);
                for (int u = 0; u < n; ++u)
                    REQUIRE(fw.dist[static_cast<size_t>(s)][static_cast<size_t>(u)] ==
                            bf.distances[static_cast<size_t>(u)]);
            }
        }
    }
    SECTION("triangle inequality holds for all triples") {
        Rng rng = Rng::substream(504, 0xf3);
        Graph g = gen_erdos_renyi(8, 0.5, false, rng);
        auto fw = oracle_floyd_warshall(g);
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j)
                for (int k = 0; k < 8; ++k)
                    CHECK(fw.dist[i][j] <= fw.dist[i][k] + fw.dist[k][j] + 1e-12);
    }
}

TEST_CASE("scc examples") {
    SECTION("DAG: every node points to itself") {
        Graph g;
        g.n = 4;
        g.directed = true;
        g.edges = {{0, 1, 1}, {1, 2, 1}, {0, 3, 1}};
        auto res = oracle_scc(g);
        CHECK(res.pointers == std::vector<int>{0, 1, 2, 3});
    }
    SECTION("two-cycle") {
        Graph g;
        g.n = 2;
        g.directed = true;
        g.edges = {{0, 1, 1}, {1, 0, 1}};
        auto res = oracle_scc(g);
        CHECK(res.pointers == std::vector<int>{1, 0});
        CHECK(res.component[0] == res.component[1]);
    }
    SECTION("lowest-index in-neighbor within the component wins") {
        // 0 -> 1, 2 -> 1, 1 -> 0, 1 -> 2: all one component; in-neighbors of 1
        // inside it are {0, 2} so the pointer is 0
        Graph g;
        g.n = 3;
        g.directed = true;
        g.edges = {{0, 1, 1}, {2, 1, 1}, {1, 0, 1}, {1, 2, 1}};
        auto res = oracle_scc(g);
        CHECK(res.pointers[1] == 0);
    }
    SECTION("partition matches reachability intersection on random digraphs") {
        for (int trial = 0; trial < 150; ++trial) {
            Rng rng = Rng::substream(505, 0x5cc, static_cast<uint64_t>(trial));
            const int n = rng.range_int(2, 8);
            Graph g = gen_erdos_renyi(n, rng.uniform01(), true, rng);
            auto res = oracle_scc(g);
            REQUIRE(sd::same_partition(res.component, sd::brute_force_scc_partition(g)));
            // pointers always land inside the pointing node's own component
            for (int u = 0; u < n; ++u)
                CHECK(res.component[static_cast<size_t>(res.pointers[static_cast<size_t>(u)])] ==
                      res.component[static_cast<size_t>(u)]);
        }
    }
}

TEST_CASE("insertion sort examples") {
    SECTION("reference vector") {
        auto ptr = oracle_insertion_sort({5, 2, 4, 3, 1});
        CHECK(ptr[0] == 2);
        CHECK(ptr == std::vector<int>{2, 4, 3, 1, 4});
    }
    SECTION("single element points to itself") {
        CHECK(oracle_insertion_sort({0.37}) == std::vector<int>{0});
    }
    SECTION("already sorted input") {
        CHECK(oracle_insertion_sort({1, 2, 3}) == std::vector<int>{0, 0, 1});
    }
    SECTION("duplicate keys are stable by original index") {
        auto ptr = oracle_insertion_sort({0.5, 0.5, 0.1});
        // sorted order: 2, 0, 1
        CHECK(ptr == std::vector<int>{2, 0, 2});
    }
}

TEST_CASE("oracles are pure") {
    Rng rng = Rng::substream(506, 0x1, 0);
    Graph g = gen_erdos_renyi(7, 0.5, false, rng);
    auto a = oracle_bellman_ford(g, 3);
    auto b = oracle_bellman_ford(g, 3);
    CHECK(a.pointers == b.pointers);
    CHECK(a.distances == b.distances);
    CHECK(a.tau == b.tau);
}
