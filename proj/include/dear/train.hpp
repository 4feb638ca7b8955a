#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dear/checkpoint.hpp"
#include "dear/dataset.hpp"
#include "dear/deq.hpp"
#include "dear/model.hpp"
#include "dear/solver.hpp"

namespace dear {

enum class RunMode { dear, nar_baseline };

inline const char* to_string(RunMode m) { return m == RunMode::dear ? "dear" : "nar_baseline"; }

inline RunMode run_mode_from_string(const std::string& s) {
    if (s == "dear") return RunMode::dear;
    if (s == "nar_baseline") return RunMode::nar_baseline;
    throw std::invalid_argument("unknown mode '" + s + "' (expected dear or nar_baseline)");
}

struct TrainConfig {
    RunMode mode = RunMode::dear;
    int epochs = 100;
    int batch_size = 32;
    double learning_rate = 3e-4;
    SolverConfig solver;
    BackwardConfig backward;
    JacRegConfig jac_reg;
    uint64_t seed = 1;
    int workers = 1;

    void validate() const {
        if (epochs < 1 || batch_size < 1 || workers < 1)
            throw std::invalid_argument("TrainConfig: positive counts required");
        if (learning_rate <= 0.0) throw std::invalid_argument("TrainConfig: learning rate <= 0");
        solver.validate();
        backward.validate();
        jac_reg.validate();
    }
};

struct EpochRow {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

struct SampleDiag {
    int n = 0;
    int iterations = 0;      // solver iterations (dear) or unroll length (baseline)
    double residual = 0.0;
    bool converged = true;
    int diameter = 0;
    int slots = 0;
    int correct = 0;
    double nll_sum = 0.0;
    double seconds = 0.0;
};

struct EvalResult {
    double accuracy = 0.0;
    double loss = 0.0;           // mean pointer cross-entropy over all slots
    double chance_level = 0.0;   // expected accuracy of uniform candidate guessing
    int samples = 0;
    int64_t slots_total = 0;
    int64_t correct_total = 0;
    double mean_iterations = 0.0;
    int max_iterations = 0;
    double mean_residual = 0.0;
    double converged_fraction = 1.0;
    double seconds_per_sample = 0.0;
    std::vector<SampleDiag> per_sample;
};

struct Metrics {
    std::vector<EpochRow> epochs;
    int best_epoch = 0;
    double best_val_loss = 0.0;
    EvalResult test;
};

// ---------------------------------------------------------------------------
// Per-sample forward / gradient steps
// ---------------------------------------------------------------------------

inline int sample_slot_count(const Sample& s) {
    return uses_edge_pointers(s.algorithm) ? static_cast<int>(s.edge_targets.size()) : s.n();
}

namespace detail {
constexpr uint64_t kTagJacProbe = 0x6a616370ULL;
constexpr uint64_t kTagShuffle = 0x73687566ULL;
}  // namespace detail

struct StepStats {
    double nll_sum = 0.0;
    int slots = 0;
    double reg_value = 0.0;
    int solver_iterations = 0;
    bool solver_converged = true;
    bool adjoint_converged = true;
};

// One DEAR gradient accumulation: equilibrium solve (tape-free), decoder
// backward to get the loss cotangent at the equilibrium, implicit backward
// through the fixed point, plus the Jacobian regularizer term. ptr_seed and
// reg_seed carry the batch-reduction factors.
inline StepStats grad_step_dear(Model& model, const Sample& sample, const SolverConfig& scfg,
                                const BackwardConfig& bcfg, const JacRegConfig& jcfg,
                                double ptr_seed, double reg_seed, Rng& jac_rng) {
    StepStats st;
    EncodedInstance inst = encode(sample, model);
    const int d = model.cfg.latent_dim;
    auto f = [&](const Tensor& h) { return processor_step(h, inst, model); };
    SolveResult sr = solve_fixed_point(f, Tensor({inst.n, d}), scfg);
    st.solver_iterations = sr.iterations;
    st.solver_converged = sr.converged;

    SlotLayout lay = build_slot_layout(inst);
    const auto positions = target_positions(sample, inst, lay);
    st.slots = static_cast<int>(positions.size());

    Tensor grad_out({inst.n, d});
    if (st.slots > 0) {
        Tape td(true);
        NodeId hleaf = td.leaf(sr.state);
        NodeId scores = decode_traced(td, hleaf, inst, model.dec, lay);
        NodeId nll = td.nll_sum(scores, lay.offsets, std::make_shared<std::vector<int>>(positions));
        st.nll_sum = td.val(nll)[0];
        td.backward(nll, Tensor::scalar(ptr_seed));
        grad_out = td.grad(hleaf);
    }

    Tape tp(true);
    EncodedNodes en = encode_traced(tp, inst, model);
    NodeId hstar = tp.leaf(sr.state);
    ProcessorTrace tr = processor_step_traced(tp, hstar, en.u, en.e, inst, model.proc);
    if (st.slots > 0) {
        AdjointStats as = implicit_backward_tape(tp, tr.out, hstar, grad_out, bcfg);
        st.adjoint_converged = as.converged;
    }
    if (jcfg.active()) {
        NodeId reg = jacobian_sq_norm_estimate(
            tp,
            [&](const Tensor& v) { return processor_jvp(tp, tr, inst, model.proc, v); },
            {inst.n, d}, jcfg.probes, jac_rng);
        st.reg_value = tp.val(reg)[0];
        tp.backward(reg, Tensor::scalar(reg_seed));
    }
    return st;
}

// Recurrent no-hint baseline: unroll T = n processor steps on one tape and
// backpropagate through the whole rollout.
inline StepStats grad_step_baseline(Model& model, const Sample& sample, double ptr_seed) {
    StepStats st;
    EncodedInstance inst = encode(sample, model);
    const int d = model.cfg.latent_dim;
    Tape t(true);
    EncodedNodes en = encode_traced(t, inst, model);
    NodeId h = t.leaf(Tensor({inst.n, d}));
    const int steps = inst.n;
    for (int k = 0; k < steps; ++k)
        h = processor_step_traced(t, h, en.u, en.e, inst, model.proc).out;
    st.solver_iterations = steps;

    SlotLayout lay = build_slot_layout(inst);
    const auto positions = target_positions(sample, inst, lay);
    st.slots = static_cast<int>(positions.size());
    if (st.slots > 0) {
        NodeId scores = decode_traced(t, h, inst, model.dec, lay);
        NodeId nll = t.nll_sum(scores, lay.offsets, std::make_shared<std::vector<int>>(positions));
        st.nll_sum = t.val(nll)[0];
        t.backward(nll, Tensor::scalar(ptr_seed));
    }
    return st;
}

// Forward-only pass used by evaluation. Returns logits plus diagnostics.
inline SampleDiag eval_sample(Model& model, const Sample& sample, RunMode mode,
                              const SolverConfig& scfg, Logits& logits_out,
                              std::vector<int>& positions_out) {
    SampleDiag diag;
    EncodedInstance inst = encode(sample, model);
    diag.n = inst.n;
    diag.diameter = inst.graph_diameter;

    const auto t0 = std::chrono::steady_clock::now();
    if (mode == RunMode::dear) {
        DeqForwardResult fr = deq_forward(inst, model, scfg);
        diag.iterations = fr.solve.iterations;
        diag.residual = fr.solve.residual;
        diag.converged = fr.solve.converged;
        logits_out = std::move(fr.logits);
    } else {
        Tensor h({inst.n, model.cfg.latent_dim});
        for (int k = 0; k < inst.n; ++k) h = processor_step(h, inst, model);
        diag.iterations = inst.n;
        diag.residual = 0.0;
        diag.converged = true;
        logits_out = decode_pointers(h, inst, model);
    }
    diag.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    positions_out = target_positions(sample, inst, logits_out.layout);
    diag.slots = static_cast<int>(positions_out.size());
    diag.correct = count_correct(logits_out, positions_out);
    if (diag.slots > 0) {
        Tape t(false);
        diag.nll_sum = t.val(t.nll_sum(t.leaf(logits_out.scores), logits_out.layout.offsets,
                                       std::make_shared<std::vector<int>>(positions_out)))[0];
    }
    return diag;
}

// ---------------------------------------------------------------------------
// Parallel helpers
// ---------------------------------------------------------------------------

// Static stride partition; fn(index) must only touch state owned by index.
// Worker count never changes results because nothing is reduced in thread order.
template <typename Fn>
inline void parallel_for_samples(int count, int workers, Fn&& fn) {
    workers = std::max(1, std::min(workers, count == 0 ? 1 : count));
    if (workers == 1) {
        for (int i = 0; i < count; ++i) fn(i, 0);
        return;
    }
    std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (int i = w; i < count; i += workers) fn(i, w);
            } catch (...) {
                errors[static_cast<size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline void copy_param_values(Model& from, Model& to) {
    auto src = from.parameters();
    auto dst = to.parameters();
    for (size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

inline EvalResult evaluate_dataset(Model& model, const std::vector<Sample>& data, RunMode mode,
                                   const SolverConfig& scfg, int workers = 1) {
    EvalResult res;
    res.samples = static_cast<int>(data.size());
    res.per_sample.resize(data.size());
    std::vector<double> chance_sums(data.size(), 0.0);

    // each worker gets its own model copy: evaluation never mutates parameters,
    // but encode() tapes reference them and copies keep the hot path cache-local
    const int w_count = std::max(1, std::min(workers, res.samples == 0 ? 1 : res.samples));
    std::vector<Model> replicas;
    for (int w = 0; w < w_count; ++w) replicas.push_back(model);

    parallel_for_samples(res.samples, w_count, [&](int i, int w) {
        Logits lg;
        std::vector<int> positions;
        res.per_sample[static_cast<size_t>(i)] =
            eval_sample(replicas[static_cast<size_t>(w)], data[static_cast<size_t>(i)], mode,
                        scfg, lg, positions);
        EncodedInstance inst = encode(data[static_cast<size_t>(i)], replicas[static_cast<size_t>(w)]);
        chance_sums[static_cast<size_t>(i)] = chance_level_sum(inst);
    });

    double nll_total = 0.0, chance_total = 0.0, iter_total = 0.0, resid_total = 0.0;
    double seconds_total = 0.0;
    int64_t converged = 0;
    for (const SampleDiag& s : res.per_sample) {
        res.slots_total += s.slots;
        res.correct_total += s.correct;
        nll_total += s.nll_sum;
        iter_total += s.iterations;
        res.max_iterations = std::max(res.max_iterations, s.iterations);
        resid_total += s.residual;
        seconds_total += s.seconds;
        converged += s.converged ? 1 : 0;
    }
    for (double c : chance_sums) chance_total += c;
    res.accuracy = res.slots_total > 0
                       ? static_cast<double>(res.correct_total) / static_cast<double>(res.slots_total)
                       : 1.0;
    res.loss = res.slots_total > 0 ? nll_total / static_cast<double>(res.slots_total) : 0.0;
    res.chance_level = res.slots_total > 0 ? chance_total / static_cast<double>(res.slots_total) : 1.0;
    if (res.samples > 0) {
        res.mean_iterations = iter_total / res.samples;
        res.mean_residual = resid_total / res.samples;
        res.converged_fraction = static_cast<double>(converged) / res.samples;
        res.seconds_per_sample = seconds_total / res.samples;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainOutput {
    Metrics metrics;
    Model best_model;
    int non_finite_batches = 0;  // always 0; kept for report symmetry
};

// No-hint training: minimize the pointer cross-entropy (mean over the slots of
// each batch) plus, in dear mode, the weighted Jacobian regularizer (mean over
// the batch's samples). Validates once per epoch and keeps the checkpoint with
// the lowest validation loss (ties go to the earliest epoch).
inline TrainOutput train(Model& model, const std::vector<Sample>& train_set,
                         const std::vector<Sample>& val_set, const TrainConfig& cfg,
                         std::FILE* log = nullptr) {
    cfg.validate();
    if (train_set.empty()) throw std::invalid_argument("train: empty training set");

    Adam opt(AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});
    auto params = model.parameters();

    const int w_count = std::max(1, cfg.workers);
    std::vector<Model> replicas;
    for (int w = 0; w < w_count; ++w) replicas.push_back(model);
    std::vector<std::vector<Parameter*>> replica_params;
    for (auto& r : replicas) replica_params.push_back(r.parameters());

    TrainOutput out;
    out.best_model = model;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = -1;

    const int n_train = static_cast<int>(train_set.size());
    std::vector<int> order(static_cast<size_t>(n_train));
    for (int i = 0; i < n_train; ++i) order[static_cast<size_t>(i)] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = Rng::substream(cfg.seed, detail::kTagShuffle, static_cast<uint64_t>(epoch));
        shuffle_rng.shuffle(order);

        double epoch_nll = 0.0, epoch_reg = 0.0;
        int64_t epoch_slots = 0;

        for (int start = 0; start < n_train; start += cfg.batch_size) {
            const int bsz = std::min(cfg.batch_size, n_train - start);
            int64_t batch_slots = 0;
            for (int b = 0; b < bsz; ++b)
                batch_slots += sample_slot_count(train_set[static_cast<size_t>(
                    order[static_cast<size_t>(start + b)])]);
            const double ptr_seed = batch_slots > 0 ? 1.0 / static_cast<double>(batch_slots) : 0.0;
            const double reg_seed = cfg.jac_reg.weight / static_cast<double>(bsz);

            // per-sample gradient buffers reduced in sample order, so results do
            // not depend on the worker count
            std::vector<std::vector<Tensor>> grad_bufs(static_cast<size_t>(bsz));
            std::vector<StepStats> stats(static_cast<size_t>(bsz));

            try {
                parallel_for_samples(bsz, w_count, [&](int b, int w) {
                    Model& m = replicas[static_cast<size_t>(w)];
                    auto& ps = replica_params[static_cast<size_t>(w)];
                    for (Parameter* p : ps) p->zero_grad();
                    const int sample_idx = order[static_cast<size_t>(start + b)];
                    const Sample& sample = train_set[static_cast<size_t>(sample_idx)];
                    const uint64_t step_id =
                        static_cast<uint64_t>(epoch) * static_cast<uint64_t>(n_train) +
                        static_cast<uint64_t>(start + b);
                    if (cfg.mode == RunMode::dear) {
                        Rng jac_rng = Rng::substream(cfg.seed, detail::kTagJacProbe, step_id);
                        stats[static_cast<size_t>(b)] =
                            grad_step_dear(m, sample, cfg.solver, cfg.backward, cfg.jac_reg,
                                           ptr_seed, reg_seed, jac_rng);
                    } else {
                        stats[static_cast<size_t>(b)] = grad_step_baseline(m, sample, ptr_seed);
                    }
                    auto& buf = grad_bufs[static_cast<size_t>(b)];
                    buf.resize(ps.size());
                    for (size_t k = 0; k < ps.size(); ++k) {
                        buf[k] = std::move(ps[k]->grad);
                        ps[k]->grad = Tensor();
                    }
                });
            } catch (const std::exception& e) {
                throw std::runtime_error("training failed at epoch " + std::to_string(epoch + 1) +
                                         ", batch " + std::to_string(start / cfg.batch_size + 1) +
                                         ": " + e.what());
            }

            for (Parameter* p : params) p->zero_grad();
            for (int b = 0; b < bsz; ++b)
                for (size_t k = 0; k < params.size(); ++k)
                    axpy(1.0, grad_bufs[static_cast<size_t>(b)][k], params[k]->grad);

            double batch_loss = 0.0;
            for (int b = 0; b < bsz; ++b) {
                const StepStats& st = stats[static_cast<size_t>(b)];
                epoch_nll += st.nll_sum;
                epoch_reg += st.reg_value;
                epoch_slots += st.slots;
                batch_loss += st.nll_sum * ptr_seed + st.reg_value * reg_seed;
            }
            if (!std::isfinite(batch_loss))
                throw std::runtime_error("non-finite training loss at epoch " +
                                         std::to_string(epoch + 1) + ", batch " +
                                         std::to_string(start / cfg.batch_size + 1));

            opt.step(params);
            for (auto& r : replicas) copy_param_values(model, r);
        }

        EvalResult val = evaluate_dataset(model, val_set, cfg.mode, cfg.solver, cfg.workers);
        EpochRow row;
        row.epoch = epoch + 1;
        row.train_loss = (epoch_slots > 0 ? epoch_nll / static_cast<double>(epoch_slots) : 0.0) +
                         (cfg.mode == RunMode::dear && cfg.jac_reg.active()
                              ? cfg.jac_reg.weight * epoch_reg / static_cast<double>(n_train)
                              : 0.0);
        row.val_loss = val.loss;
        row.val_accuracy = val.accuracy;
        out.metrics.epochs.push_back(row);
        if (log) {
            std::fprintf(log,
                         "epoch %3d  train_loss %.6f  val_loss %.6f  val_acc %.4f  "
                         "val_iters %.1f  val_conv %.2f\n",
                         row.epoch, row.train_loss, row.val_loss, row.val_accuracy,
                         val.mean_iterations, val.converged_fraction);
            std::fflush(log);
        }

        if (row.val_loss < best_val) {
            best_val = row.val_loss;
            best_epoch = epoch + 1;
            copy_param_values(model, out.best_model);
        }
    }

    out.metrics.best_epoch = best_epoch;
    out.metrics.best_val_loss = best_val;
    return out;
}

// ---------------------------------------------------------------------------
// Inference benchmark
// ---------------------------------------------------------------------------

struct BenchResult {
    double seconds_per_sample_mean = 0.0;
    double seconds_per_sample_std = 0.0;
    bool single_measurement = false;
    int repetitions = 0;
    int samples = 0;
    double mean_iterations = 0.0;
};

// Wall time of the processor+solver+decode path (optionally including the
// encoder), mean and std across timed repetitions. A warm-up pass is excluded.
// Timed section is single-threaded for stability.
inline BenchResult benchmark_inference(Model& model, const std::vector<Sample>& data,
                                       RunMode mode, const SolverConfig& scfg, int repetitions,
                                       bool include_encode = false) {
    if (repetitions < 1) throw std::invalid_argument("benchmark_inference: repetitions >= 1");
    BenchResult res;
    res.repetitions = repetitions;
    res.samples = static_cast<int>(data.size());

    std::vector<EncodedInstance> encoded;
    encoded.reserve(data.size());
    for (const auto& s : data) encoded.push_back(encode(s, model));

    auto forward = [&](int i) {
        const EncodedInstance& inst = encoded[static_cast<size_t>(i)];
        if (mode == RunMode::dear) {
            DeqForwardResult fr = deq_forward(inst, model, scfg);
            return static_cast<double>(fr.solve.iterations);
        }
        Tensor h({inst.n, model.cfg.latent_dim});
        for (int k = 0; k < inst.n; ++k) h = processor_step(h, inst, model);
        decode_pointers(h, inst, model);
        return static_cast<double>(inst.n);
    };

    double iter_sum = 0.0;
    for (int i = 0; i < res.samples; ++i) iter_sum += forward(i);  // warm-up
    res.mean_iterations = res.samples > 0 ? iter_sum / res.samples : 0.0;

    std::vector<double> per_rep;
    for (int r = 0; r < repetitions; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        for (int i = 0; i < res.samples; ++i) {
            if (include_encode) encoded[static_cast<size_t>(i)] = encode(data[static_cast<size_t>(i)], model);
            forward(i);
        }
        const double total =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        per_rep.push_back(res.samples > 0 ? total / res.samples : 0.0);
    }
    double mean = 0.0;
    for (double t : per_rep) mean += t;
    mean /= static_cast<double>(per_rep.size());
    res.seconds_per_sample_mean = mean;
    if (per_rep.size() > 1) {
        double var = 0.0;
        for (double t : per_rep) var += (t - mean) * (t - mean);
        res.seconds_per_sample_std = std::sqrt(var / static_cast<double>(per_rep.size() - 1));
    } else {
        res.seconds_per_sample_std = 0.0;
        res.single_measurement = true;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Relative-tolerance ablation
// ---------------------------------------------------------------------------

struct AblationResult {
    EvalResult absolute;
    EvalResult relative;
    double accuracy_delta = 0.0;        // relative - absolute
    double mean_iterations_delta = 0.0; // relative - absolute
    bool relative_leq_absolute_per_sample = true;
};

// Same weights evaluated under the absolute eps=1e-3 and relative eps=0.1
// stopping rules.
inline AblationResult ablation_relative_tolerance(Model& model, const std::vector<Sample>& data,
                                                  SolverConfig base, int workers = 1) {
    SolverConfig abs_cfg = base;
    abs_cfg.stop_mode = StopMode::absolute;
    abs_cfg.epsilon = SolverConfig::default_epsilon(StopMode::absolute);
    SolverConfig rel_cfg = base;
    rel_cfg.stop_mode = StopMode::relative;
    rel_cfg.epsilon = SolverConfig::default_epsilon(StopMode::relative);

    AblationResult res;
    res.absolute = evaluate_dataset(model, data, RunMode::dear, abs_cfg, workers);
    res.relative = evaluate_dataset(model, data, RunMode::dear, rel_cfg, workers);
    res.accuracy_delta = res.relative.accuracy - res.absolute.accuracy;
    res.mean_iterations_delta = res.relative.mean_iterations - res.absolute.mean_iterations;
    for (size_t i = 0; i < res.absolute.per_sample.size(); ++i)
        if (res.relative.per_sample[i].iterations > res.absolute.per_sample[i].iterations)
            res.relative_leq_absolute_per_sample = false;
    return res;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline json eval_to_json(const EvalResult& r) {
    return json{{"accuracy", r.accuracy},
                {"loss", r.loss},
                {"chance_level", r.chance_level},
                {"samples", r.samples},
                {"slots", r.slots_total},
                {"correct", r.correct_total},
                {"mean_solver_iterations", r.mean_iterations},
                {"max_solver_iterations", r.max_iterations},
                {"mean_residual", r.mean_residual},
                {"converged_fraction", r.converged_fraction},
                {"seconds_per_sample", r.seconds_per_sample}};
}

inline json bench_to_json(const BenchResult& r) {
    return json{{"seconds_per_sample_mean", r.seconds_per_sample_mean},
                {"seconds_per_sample_std", r.seconds_per_sample_std},
                {"single_measurement", r.single_measurement},
                {"repetitions", r.repetitions},
                {"samples", r.samples},
                {"mean_iterations", r.mean_iterations}};
}

inline void write_metrics_csv(const std::string& path, const Metrics& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "epoch,train_loss,val_loss,val_accuracy\n";
    char buf[160];
    for (const EpochRow& r : m.epochs) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss,
                      r.val_loss, r.val_accuracy);
        out << buf;
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_json_file(const std::string& path, const json& doc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << doc.dump(2) << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace dear
