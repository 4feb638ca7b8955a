#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "dear/deq.hpp"
#include "dear/model.hpp"
#include "dear/oracles.hpp"
#include "dear/solver.hpp"

namespace dear {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

// Independent oracles used to cross-check the implementation. Everything in
// this namespace is deliberately written against the definitions, not against
// the code under test.
namespace selftest_detail {

// Exhaustive simple-path minima with path-ordered accumulation (the same
// association order a relaxation produces, so exact comparison is meaningful).
inline std::vector<double> brute_force_shortest_paths(const Graph& g, int source) {
    const int n = g.n;
    std::vector<std::vector<std::pair<int, double>>> nbr(static_cast<size_t>(n));
    for (const auto& e : g.edges) {
        nbr[static_cast<size_t>(e.src)].push_back({e.dst, e.w});
        nbr[static_cast<size_t>(e.dst)].push_back({e.src, e.w});
    }
    std::vector<double> best(static_cast<size_t>(n), kInf);
    std::vector<char> onpath(static_cast<size_t>(n), 0);
    std::function<void(int, double)> dfs = [&](int u, double cost) {
        if (cost < best[static_cast<size_t>(u)]) best[static_cast<size_t>(u)] = cost;
        onpath[static_cast<size_t>(u)] = 1;
        for (const auto& [v, w] : nbr[static_cast<size_t>(u)])
            if (!onpath[static_cast<size_t>(v)]) dfs(v, cost + w);
        onpath[static_cast<size_t>(u)] = 0;
    };
    dfs(source, 0.0);
    return best;
}

// SCC partition by reachability intersection over the boolean closure.
inline std::vector<int> brute_force_scc_partition(const Graph& g) {
    const int n = g.n;
    std::vector<std::vector<char>> reach(static_cast<size_t>(n),
                                         std::vector<char>(static_cast<size_t>(n), 0));
    for (int i = 0; i < n; ++i) reach[static_cast<size_t>(i)][static_cast<size_t>(i)] = 1;
    for (const auto& e : g.edges) reach[static_cast<size_t>(e.src)][static_cast<size_t>(e.dst)] = 1;
    for (int k = 0; k < n; ++k)
        for (int i = 0; i < n; ++i)
            if (reach[static_cast<size_t>(i)][static_cast<size_t>(k)])
                for (int j = 0; j < n; ++j)
                    if (reach[static_cast<size_t>(k)][static_cast<size_t>(j)])
                        reach[static_cast<size_t>(i)][static_cast<size_t>(j)] = 1;
    std::vector<int> comp(static_cast<size_t>(n), -1);
    int next = 0;
    for (int i = 0; i < n; ++i) {
        if (comp[static_cast<size_t>(i)] >= 0) continue;
        comp[static_cast<size_t>(i)] = next;
        for (int j = i + 1; j < n; ++j)
            if (reach[static_cast<size_t>(i)][static_cast<size_t>(j)] &&
                reach[static_cast<size_t>(j)][static_cast<size_t>(i)])
                comp[static_cast<size_t>(j)] = next;
        ++next;
    }
    return comp;
}

inline bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t j = i + 1; j < a.size(); ++j)
            if ((a[i] == a[j]) != (b[i] == b[j])) return false;
    return true;
}

// Independent dense solve (Gauss-Jordan, no pivot sharing with the library's
// elimination routine) for affine fixed-point oracles.
inline std::vector<double> gauss_jordan_solve(std::vector<double> a, std::vector<double> b) {
    const int n = static_cast<int>(b.size());
    for (int col = 0; col < n; ++col) {
        int piv = col;
        for (int r = col; r < n; ++r)
            if (std::abs(a[static_cast<size_t>(r) * n + col]) >
                std::abs(a[static_cast<size_t>(piv) * n + col]))
                piv = r;
        for (int c = 0; c < n; ++c)
            std::swap(a[static_cast<size_t>(piv) * n + c], a[static_cast<size_t>(col) * n + c]);
        std::swap(b[static_cast<size_t>(piv)], b[static_cast<size_t>(col)]);
        const double d = a[static_cast<size_t>(col) * n + col];
        for (int c = 0; c < n; ++c) a[static_cast<size_t>(col) * n + c] /= d;
        b[static_cast<size_t>(col)] /= d;
        for (int r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = a[static_cast<size_t>(r) * n + col];
            if (f == 0.0) continue;
            for (int c = 0; c < n; ++c)
                a[static_cast<size_t>(r) * n + c] -= f * a[static_cast<size_t>(col) * n + c];
            b[static_cast<size_t>(r)] -= f * b[static_cast<size_t>(col)];
        }
    }
    return b;
}

// Spectral radius via the geometric mean of normalized power-iteration growth.
// The plain last-ratio estimate oscillates (and can badly undershoot) when the
// dominant eigenvalues are a complex pair; the log-growth average converges to
// |lambda_max| regardless.
inline double spectral_radius_estimate(const std::vector<double>& a, int n, Rng& rng) {
    std::vector<double> x(static_cast<size_t>(n));
    for (double& v : x) v = rng.gauss();
    const int warmup = 100, measured = 400;
    double log_growth = 0.0;
    for (int it = 0; it < warmup + measured; ++it) {
        std::vector<double> y(static_cast<size_t>(n), 0.0);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c)
                y[static_cast<size_t>(r)] += a[static_cast<size_t>(r) * n + c] * x[static_cast<size_t>(c)];
        double norm = 0.0;
        for (double v : y) norm += v * v;
        norm = std::sqrt(norm);
        if (norm < 1e-300) return 0.0;
        if (it >= warmup) log_growth += std::log(norm);
        for (int r = 0; r < n; ++r) x[static_cast<size_t>(r)] = y[static_cast<size_t>(r)] / norm;
    }
    return std::exp(log_growth / measured);
}

// Central finite differences of a scalar-valued closure w.r.t. one parameter.
inline Tensor fd_grad(Parameter& p, const std::function<double()>& loss, double h = 1e-6) {
    Tensor g(p.value.shape());
    for (int64_t i = 0; i < p.value.numel(); ++i) {
        const double orig = p.value[i];
        p.value[i] = orig + h;
        const double up = loss();
        p.value[i] = orig - h;
        const double dn = loss();
        p.value[i] = orig;
        g[i] = (up - dn) / (2.0 * h);
    }
    return g;
}

// Relative block error with an absolute noise floor: finite differences bottom
// out around 1e-9 per block, and some blocks (softmax-shift-invariant decoder
// biases, gate parameters at an equilibrium) have exactly zero true gradient.
inline double rel_block_error(const Tensor& got, const Tensor& want) {
    Tensor diff = got;
    axpy(-1.0, want, diff);
    const double denom = std::max(frob_norm(want), 1e-4);
    return frob_norm(diff) / denom;
}

// Edge weights on a dyadic grid: sums of up to 2^6 of them are exact in
// doubles, so cross-algorithm distance comparisons can demand bit equality.
inline void quantize_weights(Graph& g) {
    for (auto& e : g.edges) e.w = std::floor(e.w * 65536.0) / 65536.0;
}

inline Sample make_random_sample(Algo algo, int n, double p, uint64_t seed) {
    DatasetSpec spec;
    spec.algorithm = algo;
    spec.seed = seed;
    spec.edge_p_grid = {p};
    return generate_sample(spec, 0xad0cULL, seed, n);
}

// Mean pointer loss of encode -> one processor step from zero -> decode.
// Rebuilt from scratch on every call so it can sit under finite differences.
inline double one_step_loss(Model& model, const Sample& sample) {
    EncodedInstance inst = encode(sample, model);
    Tensor h0({inst.n, model.cfg.latent_dim});
    Tensor h1 = processor_step(h0, inst, model);
    Logits lg = decode_pointers(h1, inst, model);
    return pointer_loss(lg, target_positions(sample, inst, lg.layout));
}

}  // namespace selftest_detail

// ---------------------------------------------------------------------------
// Suite 1: gradient finite-difference checks
// ---------------------------------------------------------------------------

inline std::vector<CheckResult> selftest_gradients(uint64_t seed = 7) {
    namespace sd = selftest_detail;
    std::vector<CheckResult> out;

    const Algo algos[] = {Algo::bellman_ford, Algo::insertion_sort, Algo::floyd_warshall};
    for (Algo algo : algos) {
        ModelConfig mc;
        mc.algorithm = algo;
        mc.latent_dim = 8;
        Model model = Model::init(mc, seed);
        // jitter every parameter: zero biases with zero raw features put whole
        // rows exactly on the rectifier kink, where central differences straddle
        // the subgradient; the check needs a non-degenerate point
        Rng jitter = Rng::substream(seed, 0x6a69ULL);
        for (Parameter* p : model.parameters())
            for (int64_t i = 0; i < p->value.numel(); ++i) p->value[i] += 0.05 * jitter.gauss();
        Sample sample = sd::make_random_sample(algo, 4, 0.7, seed + 11);

        model.zero_grads();
        {
            EncodedInstance inst = encode(sample, model);
            Tape t(true);
            EncodedNodes en = encode_traced(t, inst, model);
            NodeId h0 = t.leaf(Tensor({inst.n, mc.latent_dim}));
            ProcessorTrace tr = processor_step_traced(t, h0, en.u, en.e, inst, model.proc);
            SlotLayout lay = build_slot_layout(inst);
            NodeId scores = decode_traced(t, tr.out, inst, model.dec, lay);
            auto positions =
                std::make_shared<std::vector<int>>(target_positions(sample, inst, lay));
            NodeId nll = t.nll_sum(scores, lay.offsets, positions);
            t.backward(nll, Tensor::scalar(1.0 / static_cast<double>(positions->size())));
        }

        double worst = 0.0;
        std::string worst_block;
        for (Parameter* p : model.parameters()) {
            Tensor fd = sd::fd_grad(*p, [&]() { return sd::one_step_loss(model, sample); });
            const double err = sd::rel_block_error(p->grad, fd);
            if (err > worst) {
                worst = err;
                worst_block = p->name;
            }
        }
        std::ostringstream msg;
        msg << "worst block " << worst_block << " rel err " << worst;
        out.push_back({std::string("gradients.end_to_end.") + to_string(algo), worst <= 1e-4,
                       msg.str()});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Suite 2: solver contraction checks
// ---------------------------------------------------------------------------

inline std::vector<CheckResult> selftest_solvers(uint64_t seed = 23) {
    namespace sd = selftest_detail;
    std::vector<CheckResult> out;
    const int dim = 8;
    Rng rng = Rng::substream(seed, 0x50fe);

    bool all_close = true;
    bool anderson_never_slower = true;
    double worst_err = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const double target_radius = 0.05 + 0.85 * trial / 19.0;
        std::vector<double> a(dim * dim);
        for (double& v : a) v = rng.gauss();
        const double radius = sd::spectral_radius_estimate(a, dim, rng);
        if (radius > 1e-12)
            for (double& v : a) v *= target_radius / radius;
        Tensor b({dim});
        for (int i = 0; i < dim; ++i) b[i] = rng.gauss();

        // oracle: x* = (I - A)^{-1} b by direct elimination
        std::vector<double> ia(static_cast<size_t>(dim) * dim);
        for (int r = 0; r < dim; ++r)
            for (int c = 0; c < dim; ++c)
                ia[static_cast<size_t>(r) * dim + c] =
                    (r == c ? 1.0 : 0.0) - a[static_cast<size_t>(r) * dim + c];
        const auto xstar = sd::gauss_jordan_solve(ia, b.values());

        auto f = [&](const Tensor& x) {
            Tensor y = b;
            for (int r = 0; r < dim; ++r) {
                double s = 0.0;
                for (int c = 0; c < dim; ++c) s += a[static_cast<size_t>(r) * dim + c] * x[c];
                y[r] += s;
            }
            return y;
        };

        SolverConfig pic;
        pic.method = SolveMethod::picard;
        pic.stop_mode = StopMode::absolute;
        pic.epsilon = 1e-7;
        pic.max_iters = 5000;
        SolverConfig and_cfg = pic;
        and_cfg.method = SolveMethod::anderson;

        SolveResult rp = solve_fixed_point(f, Tensor({dim}), pic);
        SolveResult ra = solve_fixed_point(f, Tensor({dim}), and_cfg);
        for (int i = 0; i < dim; ++i) {
            worst_err = std::max(worst_err, std::abs(rp.state[i] - xstar[static_cast<size_t>(i)]));
            worst_err = std::max(worst_err, std::abs(ra.state[i] - xstar[static_cast<size_t>(i)]));
        }
        if (worst_err > 1e-5) all_close = false;
        if (ra.iterations > rp.iterations) anderson_never_slower = false;
    }
    {
        std::ostringstream msg;
        msg << "worst |x - x*| = " << worst_err << " over 20 affine contractions";
        out.push_back({"solvers.affine_fixed_points", all_close, msg.str()});
    }
    out.push_back({"solvers.anderson_leq_picard_iterations", anderson_never_slower,
                   anderson_never_slower ? "held on all 20 maps" : "violated on some map"});
    return out;
}

// ---------------------------------------------------------------------------
// Suite 3: implicit gradient vs unrolled backprop
// ---------------------------------------------------------------------------

inline std::vector<CheckResult> selftest_implicit(uint64_t seed = 41) {
    namespace sd = selftest_detail;
    std::vector<CheckResult> out;

    // closed-form scalar: f(z, theta) = theta z + c, dz*/dtheta = c / (1-theta)^2
    {
        Parameter theta(Tensor::row({0.5}));
        const double c = 1.0;
        const double zstar = c / (1.0 - 0.5);
        Tape t(true);
        NodeId zleaf = t.leaf(Tensor::row({zstar}));
        NodeId outn = t.add(t.mul(t.param(theta), zleaf), t.leaf(Tensor::row({c})));
        BackwardConfig bc;
        bc.max_iters = 200;
        bc.tolerance = 1e-14;
        implicit_backward_tape(t, outn, zleaf, Tensor::row({1.0}), bc);
        const double got = theta.grad[0];
        std::ostringstream msg;
        msg << "d z*/d theta = " << got << " (expect 4)";
        out.push_back({"implicit.scalar_closed_form", std::abs(got - 4.0) <= 1e-6, msg.str()});
    }

    double worst = 0.0;
    std::string worst_block;
    bool pass = true;
    for (int trial = 0; trial < 10; ++trial) {
        ModelConfig mc;
        mc.algorithm = Algo::bellman_ford;
        mc.latent_dim = 8;
        Model model = Model::init(mc, seed + static_cast<uint64_t>(trial));
        for (Parameter* p : model.parameters())
            for (int64_t i = 0; i < p->value.numel(); ++i) p->value[i] *= 0.1;
        Sample sample = sd::make_random_sample(Algo::bellman_ford, 4, 0.6,
                                               seed + 100 + static_cast<uint64_t>(trial));
        EncodedInstance inst = encode(sample, model);
        const int d = mc.latent_dim;
        Rng crng = Rng::substream(seed, 0xc07a, static_cast<uint64_t>(trial));
        Tensor cot({inst.n, d});
        for (int64_t i = 0; i < cot.numel(); ++i) cot[i] = crng.gauss();

        // implicit route
        model.zero_grads();
        auto f = [&](const Tensor& h) { return processor_step(h, inst, model); };
        SolverConfig scfg;
        scfg.method = SolveMethod::anderson;
        scfg.stop_mode = StopMode::absolute;
        scfg.epsilon = 1e-12;
        scfg.max_iters = 500;
        SolveResult sr = solve_fixed_point(f, Tensor({inst.n, d}), scfg);
        {
            Tape t(true);
            EncodedNodes en = encode_traced(t, inst, model);
            NodeId hstar = t.leaf(sr.state);
            ProcessorTrace tr = processor_step_traced(t, hstar, en.u, en.e, inst, model.proc);
            BackwardConfig bc;
            bc.max_iters = 1000;
            bc.tolerance = 1e-13;
            implicit_backward_tape(t, tr.out, hstar, cot, bc);
        }
        std::vector<Tensor> implicit_grads;
        for (Parameter* p : model.parameters()) implicit_grads.push_back(p->grad);

        // oracle: 100 recorded steps, plain backprop
        model.zero_grads();
        {
            Tape t(true);
            EncodedNodes en = encode_traced(t, inst, model);
            NodeId h = t.leaf(Tensor({inst.n, d}));
            for (int k = 0; k < 100; ++k)
                h = processor_step_traced(t, h, en.u, en.e, inst, model.proc).out;
            t.backward(h, cot);
        }
        auto params = model.parameters();
        for (size_t i = 0; i < params.size(); ++i) {
            const double err = sd::rel_block_error(implicit_grads[i], params[i]->grad);
            if (err > worst) {
                worst = err;
                worst_block = params[i]->name;
            }
        }
        if (worst > 1e-2) pass = false;
    }
    std::ostringstream msg;
    msg << "worst block " << worst_block << " rel err " << worst << " over 10 processors";
    out.push_back({"implicit.vs_unrolled_backprop", pass, msg.str()});
    return out;
}

// ---------------------------------------------------------------------------
// Suite 4: oracle brute-force checks
// ---------------------------------------------------------------------------

inline std::vector<CheckResult> selftest_oracles(uint64_t seed = 77, int trials = 1000) {
    namespace sd = selftest_detail;
    std::vector<CheckResult> out;

    bool bf_exact = true, fw_exact = true, scc_ok = true, sort_ok = true;
    for (int trial = 0; trial < trials; ++trial) {
        Rng r = Rng::substream(seed, 0xe57ULL, static_cast<uint64_t>(trial));
        const int n = r.range_int(2, 8);
        const double p = r.uniform01();
        Graph g = gen_erdos_renyi(n, p, false, r);
        sd::quantize_weights(g);

        for (int src = 0; src < n && bf_exact; ++src) {
            auto res = oracle_bellman_ford(g, src);
            auto brute = sd::brute_force_shortest_paths(g, src);
            for (int u = 0; u < n; ++u)
                if (res.distances[static_cast<size_t>(u)] != brute[static_cast<size_t>(u)])
                    bf_exact = false;
        }
        if (fw_exact) {
            auto fw = oracle_floyd_warshall(g);
            for (int src = 0; src < n && fw_exact; ++src) {
                auto res = oracle_bellman_ford(g, src);
                for (int u = 0; u < n; ++u)
                    if (fw.dist[static_cast<size_t>(src)][static_cast<size_t>(u)] !=
                        res.distances[static_cast<size_t>(u)])
                        fw_exact = false;
            }
        }
        {
            Graph dg = gen_erdos_renyi(n, p, true, r);
            auto scc = oracle_scc(dg);
            if (!sd::same_partition(scc.component, sd::brute_force_scc_partition(dg)))
                scc_ok = false;
        }
        {
            const int len = r.range_int(1, 16);
            std::vector<double> keys(static_cast<size_t>(len));
            for (double& k : keys) k = r.uniform01();
            auto ptr = oracle_insertion_sort(keys);
            // decode: start at the self-pointing minimum, walk successors
            int start = -1;
            for (int i = 0; i < len; ++i)
                if (ptr[static_cast<size_t>(i)] == i) start = i;
            if (start < 0) {
                sort_ok = false;
            } else {
                std::vector<int> successor(static_cast<size_t>(len), -1);
                for (int i = 0; i < len; ++i)
                    if (ptr[static_cast<size_t>(i)] != i) successor[static_cast<size_t>(ptr[static_cast<size_t>(i)])] = i;
                std::vector<double> decoded;
                int cur = start;
                int guard = 0;
                while (cur >= 0 && guard++ <= len) {
                    decoded.push_back(keys[static_cast<size_t>(cur)]);
                    cur = successor[static_cast<size_t>(cur)];
                }
                std::vector<double> want = keys;
                std::sort(want.begin(), want.end());
                if (decoded != want) sort_ok = false;
            }
        }
    }
    out.push_back({"oracles.bellman_ford_vs_path_enumeration", bf_exact,
                   bf_exact ? "exact on all graphs" : "mismatch found"});
    out.push_back({"oracles.floyd_warshall_vs_all_sources", fw_exact,
                   fw_exact ? "exact on all graphs" : "mismatch found"});
    out.push_back({"oracles.scc_vs_reachability_intersection", scc_ok,
                   scc_ok ? "partitions match" : "partition mismatch"});
    out.push_back({"oracles.sort_pointers_decode_ascending", sort_ok,
                   sort_ok ? "decoded order correct" : "decode mismatch"});
    return out;
}

inline std::vector<CheckResult> run_selftest(uint64_t seed = 1) {
    std::vector<CheckResult> all;
    for (auto& r : selftest_oracles(seed + 1)) all.push_back(std::move(r));
    for (auto& r : selftest_gradients(seed + 2)) all.push_back(std::move(r));
    for (auto& r : selftest_solvers(seed + 3)) all.push_back(std::move(r));
    for (auto& r : selftest_implicit(seed + 4)) all.push_back(std::move(r));
    return all;
}

}  // namespace dear
