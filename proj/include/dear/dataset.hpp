#pragma once

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dear/graph.hpp"
#include "dear/oracles.hpp"
#include "dear/rng.hpp"

namespace dear {

using json = nlohmann::json;

enum class Algo { bellman_ford, floyd_warshall, scc, insertion_sort };

inline const char* to_string(Algo a) {
    switch (a) {
        case Algo::bellman_ford: return "bellman_ford";
        case Algo::floyd_warshall: return "floyd_warshall";
        case Algo::scc: return "scc";
        case Algo::insertion_sort: return "insertion_sort";
    }
    return "?";
}

inline Algo algo_from_string(const std::string& s) {
    if (s == "bellman_ford") return Algo::bellman_ford;
    if (s == "floyd_warshall") return Algo::floyd_warshall;
    if (s == "scc") return Algo::scc;
    if (s == "insertion_sort") return Algo::insertion_sort;
    throw std::invalid_argument("unknown algorithm '" + s + "'");
}

inline bool uses_edge_pointers(Algo a) { return a == Algo::floyd_warshall; }

// One problem instance: raw features plus oracle pointer targets.
// Sorting samples use a complete-graph representation and store no edges;
// scc graphs are directed and their weights are ignored.
struct Sample {
    Algo algorithm = Algo::bellman_ford;
    Graph graph;
    std::vector<std::vector<double>> node_raw;
    std::vector<int> node_targets;                // node-pointer algorithms
    std::vector<std::array<int, 3>> edge_targets; // floyd_warshall: (i, j, k)
    int tau = 1;

    int n() const { return graph.n; }

    // bellman_ford marks its source in the second raw feature column
    int source() const {
        for (size_t i = 0; i < node_raw.size(); ++i)
            if (node_raw[i].size() >= 2 && node_raw[i][1] == 1.0) return static_cast<int>(i);
        return -1;
    }

    std::vector<double> sort_keys() const {
        std::vector<double> keys;
        keys.reserve(node_raw.size());
        for (const auto& row : node_raw) keys.push_back(row.at(0));
        return keys;
    }
};

struct DatasetSpec {
    Algo algorithm = Algo::bellman_ford;
    int train_count = 5000;
    int val_count = 100;
    int test_count = 100;
    int n_train_min = 8;
    int n_train_max = 16;
    int n_val = 16;
    int n_test = 64;
    std::vector<double> edge_p_grid = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    uint64_t seed = 1;

    void validate() const {
        if (train_count <= 0 || val_count <= 0 || test_count <= 0)
            throw std::invalid_argument("DatasetSpec: counts must be > 0");
        if (n_train_min < 2 || n_train_max < n_train_min || n_val < 2 || n_test < 2)
            throw std::invalid_argument("DatasetSpec: sizes must be >= 2");
        if (edge_p_grid.empty())
            throw std::invalid_argument("DatasetSpec: empty edge probability grid");
    }
};

namespace detail {
// stream tags per split so sample index i of each split has its own substream
constexpr uint64_t kTagTrain = 0x7261696eULL;
constexpr uint64_t kTagVal = 0x76616cULL;
constexpr uint64_t kTagTest = 0x74657374ULL;
}  // namespace detail

inline std::vector<double> positional_feature(int n) {
    std::vector<double> f(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) f[static_cast<size_t>(i)] = static_cast<double>(i) / n;
    return f;
}

// Generate one sample with its oracle targets from a dedicated substream.
inline Sample generate_sample(const DatasetSpec& spec, uint64_t split_tag, uint64_t index,
                              int n_fixed) {
    Rng rng = Rng::substream(spec.seed, split_tag ^ static_cast<uint64_t>(spec.algorithm) * 0x9e37ULL,
                             index);
    Sample s;
    s.algorithm = spec.algorithm;
    const int n = n_fixed > 0 ? n_fixed : rng.range_int(spec.n_train_min, spec.n_train_max);
    const auto pos = positional_feature(n);

    switch (spec.algorithm) {
        case Algo::bellman_ford: {
            const double p = spec.edge_p_grid[rng.below(spec.edge_p_grid.size())];
            s.graph = gen_erdos_renyi(n, p, false, rng);
            const int source = rng.range_int(0, n - 1);
            auto res = oracle_bellman_ford(s.graph, source);
            s.node_targets = std::move(res.pointers);
            s.tau = res.tau;
            for (int i = 0; i < n; ++i)
                s.node_raw.push_back({pos[static_cast<size_t>(i)], i == source ? 1.0 : 0.0});
            break;
        }
        case Algo::floyd_warshall: {
            const double p = spec.edge_p_grid[rng.below(spec.edge_p_grid.size())];
            s.graph = gen_erdos_renyi(n, p, false, rng);
            auto res = oracle_floyd_warshall(s.graph);
            s.edge_targets = std::move(res.edge_pointers);
            s.tau = res.tau;
            for (int i = 0; i < n; ++i) s.node_raw.push_back({pos[static_cast<size_t>(i)]});
            break;
        }
        case Algo::scc: {
            const double p = spec.edge_p_grid[rng.below(spec.edge_p_grid.size())];
            s.graph = gen_erdos_renyi(n, p, true, rng);
            auto res = oracle_scc(s.graph);
            s.node_targets = std::move(res.pointers);
            s.tau = res.tau;
            for (int i = 0; i < n; ++i) s.node_raw.push_back({pos[static_cast<size_t>(i)]});
            break;
        }
        case Algo::insertion_sort: {
            s.graph.n = n;
            s.graph.directed = false;
            std::vector<double> keys(static_cast<size_t>(n));
            for (double& k : keys) k = rng.uniform01();
            s.node_targets = oracle_insertion_sort(keys);
            s.tau = insertion_sort_tau(n);
            for (int i = 0; i < n; ++i)
                s.node_raw.push_back({keys[static_cast<size_t>(i)], pos[static_cast<size_t>(i)]});
            break;
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

inline void validate_sample(const Sample& s, const std::string& context) {
    const int n = s.n();
    auto fail = [&](const std::string& msg) {
        throw std::runtime_error(context + ": invalid sample: " + msg);
    };
    if (n < 1) fail("node count < 1");
    if (static_cast<int>(s.node_raw.size()) != n) fail("node_raw size mismatch");
    if (s.tau < 1) fail("tau < 1");
    for (const auto& e : s.graph.edges)
        if (e.src < 0 || e.src >= n || e.dst < 0 || e.dst >= n || e.src == e.dst)
            fail("bad edge endpoints");
    if (uses_edge_pointers(s.algorithm)) {
        for (const auto& [i, j, k] : s.edge_targets)
            if (i < 0 || i >= n || j < 0 || j >= n || k < 0 || k >= n)
                fail("edge target out of range");
    } else {
        if (static_cast<int>(s.node_targets.size()) != n) fail("target size mismatch");
        for (int u = 0; u < n; ++u) {
            const int t = s.node_targets[static_cast<size_t>(u)];
            if (t < 0 || t >= n) fail("pointer target out of range");
        }
        if (s.algorithm == Algo::bellman_ford) {
            std::vector<std::vector<char>> adj(static_cast<size_t>(n),
                                               std::vector<char>(static_cast<size_t>(n), 0));
            for (const auto& e : s.graph.edges)
                adj[static_cast<size_t>(e.src)][static_cast<size_t>(e.dst)] =
                    adj[static_cast<size_t>(e.dst)][static_cast<size_t>(e.src)] = 1;
            for (int u = 0; u < n; ++u) {
                const int t = s.node_targets[static_cast<size_t>(u)];
                if (t != u && !adj[static_cast<size_t>(u)][static_cast<size_t>(t)])
                    fail("bellman_ford target is neither self nor a neighbor");
            }
        }
    }
}

// ---------------------------------------------------------------------------
// JSON lines serialization
// ---------------------------------------------------------------------------

inline json sample_to_json(const Sample& s) {
    json j;
    j["algorithm"] = to_string(s.algorithm);
    j["n"] = s.n();
    j["directed"] = s.graph.directed;
    json edges = json::array();
    for (const auto& e : s.graph.edges) edges.push_back({e.src, e.dst, e.w});
    j["edges"] = std::move(edges);
    j["node_raw"] = s.node_raw;
    if (uses_edge_pointers(s.algorithm)) {
        json t = json::array();
        for (const auto& [a, b, k] : s.edge_targets) t.push_back({a, b, k});
        j["target"] = std::move(t);
    } else {
        j["target"] = s.node_targets;
    }
    j["tau"] = s.tau;
    return j;
}

inline Sample sample_from_json(const json& j, const std::string& context) {
    try {
        Sample s;
        s.algorithm = algo_from_string(j.at("algorithm").get<std::string>());
        s.graph.n = j.at("n").get<int>();
        s.graph.directed = j.at("directed").get<bool>();
        for (const auto& e : j.at("edges"))
            s.graph.edges.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<double>()});
        s.node_raw = j.at("node_raw").get<std::vector<std::vector<double>>>();
        if (uses_edge_pointers(s.algorithm)) {
            for (const auto& t : j.at("target"))
                s.edge_targets.push_back({t.at(0).get<int>(), t.at(1).get<int>(), t.at(2).get<int>()});
        } else {
            s.node_targets = j.at("target").get<std::vector<int>>();
        }
        s.tau = j.at("tau").get<int>();
        validate_sample(s, context);
        return s;
    } catch (const json::exception& e) {
        throw std::runtime_error(context + ": malformed sample record: " + e.what());
    }
}

inline void write_jsonl(const std::string& path, const std::vector<Sample>& samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& s : samples) out << sample_to_json(s).dump() << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::vector<Sample> load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset: " + path);
    std::vector<Sample> samples;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string context = path + ":" + std::to_string(line_no);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error(context + ": parse error: " + e.what());
        }
        samples.push_back(sample_from_json(j, context));
    }
    return samples;
}

inline json spec_to_json(const DatasetSpec& spec) {
    return json{{"algorithm", to_string(spec.algorithm)},
                {"counts", {{"train", spec.train_count}, {"val", spec.val_count}, {"test", spec.test_count}}},
                {"n_train_min", spec.n_train_min},
                {"n_train_max", spec.n_train_max},
                {"n_val", spec.n_val},
                {"n_test", spec.n_test},
                {"edge_p_grid", spec.edge_p_grid},
                {"seed", spec.seed},
                {"format_version", 1}};
}

struct DatasetPaths {
    std::string train, val, test, meta;
};

inline DatasetPaths dataset_paths(const std::string& out_dir, Algo algorithm) {
    const std::string stem = out_dir + "/" + to_string(algorithm);
    return {stem + "_train.jsonl", stem + "_val.jsonl", stem + "_test.jsonl",
            stem + "_meta.json"};
}

// Generate all splits and write them next to a sidecar metadata record.
// Train sizes are drawn uniformly from [n_train_min, n_train_max]; val and test
// use their fixed sizes. Fully reproducible from the seed.
inline DatasetPaths make_dataset(const DatasetSpec& spec, const std::string& out_dir) {
    spec.validate();
    const DatasetPaths paths = dataset_paths(out_dir, spec.algorithm);

    auto gen_split = [&](uint64_t tag, int count, int n_fixed) {
        std::vector<Sample> samples;
        samples.reserve(static_cast<size_t>(count));
        for (int i = 0; i < count; ++i) {
            Sample s = generate_sample(spec, tag, static_cast<uint64_t>(i), n_fixed);
            validate_sample(s, "generated sample " + std::to_string(i));
            samples.push_back(std::move(s));
        }
        return samples;
    };

    write_jsonl(paths.train, gen_split(detail::kTagTrain, spec.train_count, 0));
    write_jsonl(paths.val, gen_split(detail::kTagVal, spec.val_count, spec.n_val));
    write_jsonl(paths.test, gen_split(detail::kTagTest, spec.test_count, spec.n_test));

    std::ofstream meta(paths.meta, std::ios::binary);
    if (!meta) throw std::runtime_error("cannot open for writing: " + paths.meta);
    meta << spec_to_json(spec).dump(2) << '\n';
    if (!meta) throw std::runtime_error("write failed: " + paths.meta);
    return paths;
}

}  // namespace dear
