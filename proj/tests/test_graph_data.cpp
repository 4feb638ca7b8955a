#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "dear/dataset.hpp"

using namespace dear;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("erdos-renyi generator") {
    SECTION("p = 0 gives an edgeless graph") {
        Rng rng(1);
        CHECK(gen_erdos_renyi(6, 0.0, false, rng).edges.empty());
    }
    SECTION("p = 1 on four undirected nodes gives six edges") {
        Rng rng(1);
        CHECK(gen_erdos_renyi(4, 1.0, false, rng).edges.size() == 6);
    }
    SECTION("p = 1 directed gives n(n-1) edges") {
        Rng rng(1);
        CHECK(gen_erdos_renyi(4, 1.0, true, rng).edges.size() == 12);
    }
    SECTION("mean edge count within 3 sigma of the binomial expectation") {
        // n=16, p=0.5: 120 pairs, mean 60, per-trial variance 30
        Rng rng(20240817);
        const int trials = 10000;
        int64_t total = 0;
        for (int i = 0; i < trials; ++i)
            total += static_cast<int64_t>(gen_erdos_renyi(16, 0.5, false, rng).edges.size());
        const double mean = static_cast<double>(total) / trials;
        const double sigma = std::sqrt(30.0 / trials);
        CHECK(std::abs(mean - 60.0) <= 3.0 * sigma);
    }
    SECTION("weights lie in [0,1] and no self loops or duplicates appear") {
        Rng rng(7);
        Graph g = gen_erdos_renyi(12, 0.6, true, rng);
        std::set<std::pair<int, int>> seen;
        for (const auto& e : g.edges) {
            CHECK(e.src != e.dst);
            CHECK(e.w >= 0.0);
            CHECK(e.w <= 1.0);
            CHECK(seen.insert({e.src, e.dst}).second);
        }
    }
}

TEST_CASE("make_dataset bookkeeping and determinism") {
    DatasetSpec spec;
    spec.algorithm = Algo::insertion_sort;
    spec.train_count = 4;
    spec.val_count = 2;
    spec.test_count = 2;
    spec.n_val = 16;
    spec.n_test = 32;
    spec.seed = 99;

    const auto dir_a = fresh_dir("dear_ds_a");
    const auto dir_b = fresh_dir("dear_ds_b");
    auto paths_a = make_dataset(spec, dir_a.string());
    auto paths_b = make_dataset(spec, dir_b.string());

    SECTION("split counts and sizes") {
        auto train = load_dataset(paths_a.train);
        auto val = load_dataset(paths_a.val);
        auto test = load_dataset(paths_a.test);
        CHECK(train.size() == 4);
        CHECK(val.size() == 2);
        CHECK(test.size() == 2);
        for (const auto& s : train) {
            CHECK(s.n() >= 8);
            CHECK(s.n() <= 16);
        }
        for (const auto& s : val) CHECK(s.n() == 16);
        for (const auto& s : test) CHECK(s.n() == 32);
    }
    SECTION("identical seeds give byte-identical files") {
        CHECK(slurp(paths_a.train) == slurp(paths_b.train));
        CHECK(slurp(paths_a.val) == slurp(paths_b.val));
        CHECK(slurp(paths_a.test) == slurp(paths_b.test));
        CHECK(slurp(paths_a.meta) == slurp(paths_b.meta));
    }
    SECTION("different seeds give different files") {
        DatasetSpec other = spec;
        other.seed = 100;
        const auto dir_c = fresh_dir("dear_ds_c");
        auto paths_c = make_dataset(other, dir_c.string());
        CHECK(slurp(paths_a.train) != slurp(paths_c.train));
    }
    SECTION("sidecar metadata round-trips the spec") {
        json meta = json::parse(slurp(paths_a.meta));
        CHECK(meta.at("algorithm") == "insertion_sort");
        CHECK(meta.at("counts").at("train") == 4);
        CHECK(meta.at("seed") == 99);
        CHECK(meta.at("n_test") == 32);
    }
}

TEST_CASE("samples survive a serialization round trip") {
    for (Algo algo : {Algo::bellman_ford, Algo::floyd_warshall, Algo::scc, Algo::insertion_sort}) {
        DatasetSpec spec;
        spec.algorithm = algo;
        spec.seed = 7;
        for (int i = 0; i < 8; ++i) {
            Sample s = generate_sample(spec, 0xabc, static_cast<uint64_t>(i), 0);
            Sample r = sample_from_json(sample_to_json(s), "roundtrip");
            CHECK(r.algorithm == s.algorithm);
            CHECK(r.n() == s.n());
            CHECK(r.graph.directed == s.graph.directed);
            REQUIRE(r.graph.edges.size() == s.graph.edges.size());
            for (size_t e = 0; e < s.graph.edges.size(); ++e) {
                CHECK(r.graph.edges[e].src == s.graph.edges[e].src);
                CHECK(r.graph.edges[e].dst == s.graph.edges[e].dst);
                CHECK(r.graph.edges[e].w == s.graph.edges[e].w);  // exact double round trip
            }
            CHECK(r.node_raw == s.node_raw);
            CHECK(r.node_targets == s.node_targets);
            CHECK(r.edge_targets == s.edge_targets);
            CHECK(r.tau == s.tau);
        }
    }
}

TEST_CASE("per-algorithm sample structure") {
    DatasetSpec spec;
    spec.seed = 21;
    SECTION("bellman_ford targets are neighbors or self, source marked") {
        spec.algorithm = Algo::bellman_ford;
        Sample s = generate_sample(spec, 1, 4, 12);
        CHECK(s.source() >= 0);
        CHECK(s.node_targets[static_cast<size_t>(s.source())] == s.source());
        CHECK_NOTHROW(validate_sample(s, "test"));
    }
    SECTION("sorting samples store keys and no edges") {
        spec.algorithm = Algo::insertion_sort;
        Sample s = generate_sample(spec, 2, 0, 9);
        CHECK(s.graph.edges.empty());
        CHECK(s.node_raw[0].size() == 2);
        auto keys = s.sort_keys();
        CHECK(keys.size() == 9);
        CHECK(s.node_targets == oracle_insertion_sort(keys));
    }
    SECTION("floyd_warshall emits both orientations per edge") {
        spec.algorithm = Algo::floyd_warshall;
        Sample s = generate_sample(spec, 3, 1, 10);
        CHECK(s.edge_targets.size() == 2 * s.graph.edges.size());
    }
    SECTION("scc samples are directed") {
        spec.algorithm = Algo::scc;
        Sample s = generate_sample(spec, 4, 2, 10);
        CHECK(s.graph.directed);
    }
    SECTION("tau is at least one everywhere") {
        for (Algo algo : {Algo::bellman_ford, Algo::floyd_warshall, Algo::scc,
                          Algo::insertion_sort}) {
            spec.algorithm = algo;
            CHECK(generate_sample(spec, 5, 3, 8).tau >= 1);
        }
    }
}

TEST_CASE("dataset loading surfaces errors with path context") {
    const auto dir = fresh_dir("dear_ds_err");
    const auto path = (dir / "bad.jsonl").string();
    {
        std::ofstream out(path);
        out << "{\"algorithm\":\"bellman_ford\",\"n\":2,\"directed\":false,\"edges\":[],"
               "\"node_raw\":[[0.0,1.0],[0.5,0.0]],\"target\":[0,5],\"tau\":1}\n";
    }
    CHECK_THROWS_WITH(load_dataset(path), Catch::Matchers::ContainsSubstring("bad.jsonl"));
    CHECK_THROWS_AS(load_dataset((dir / "missing.jsonl").string()), std::runtime_error);
}

TEST_CASE("decoding sort pointers reproduces ascending order") {
    DatasetSpec spec;
    spec.algorithm = Algo::insertion_sort;
    spec.seed = 5;
    for (int i = 0; i < 20; ++i) {
        Sample s = generate_sample(spec, 9, static_cast<uint64_t>(i), 0);
        const auto keys = s.sort_keys();
        const int n = s.n();
        int start = -1;
        std::vector<int> successor(static_cast<size_t>(n), -1);
        for (int u = 0; u < n; ++u) {
            if (s.node_targets[static_cast<size_t>(u)] == u) start = u;
            else successor[static_cast<size_t>(s.node_targets[static_cast<size_t>(u)])] = u;
        }
        REQUIRE(start >= 0);
        std::vector<double> decoded;
        for (int cur = start; cur >= 0; cur = successor[static_cast<size_t>(cur)])
            decoded.push_back(keys[static_cast<size_t>(cur)]);
        std::vector<double> want = keys;
        std::sort(want.begin(), want.end());
        CHECK(decoded == want);
    }
}
