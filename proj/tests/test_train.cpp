#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dear/checkpoint.hpp"
#include "dear/selftest.hpp"
#include "dear/train.hpp"

using namespace dear;
namespace fs = std::filesystem;
namespace sd = selftest_detail;

namespace {

std::vector<Sample> make_set(Algo algo, int count, int n_fixed, uint64_t seed) {
    DatasetSpec spec;
    spec.algorithm = algo;
    spec.seed = seed;
    std::vector<Sample> out;
    for (int i = 0; i < count; ++i)
        out.push_back(generate_sample(spec, 0x7e57, static_cast<uint64_t>(i), n_fixed));
    return out;
}

TrainConfig tiny_config(RunMode mode, int epochs, uint64_t seed = 3) {
    TrainConfig tc;
    tc.mode = mode;
    tc.epochs = epochs;
    tc.batch_size = 8;
    tc.learning_rate = 3e-3;
    tc.seed = seed;
    tc.solver.max_iters = 16;
    tc.backward.max_iters = 16;
    return tc;
}

bool same_metrics(const Metrics& a, const Metrics& b) {
    if (a.epochs.size() != b.epochs.size()) return false;
    for (size_t i = 0; i < a.epochs.size(); ++i) {
        if (a.epochs[i].train_loss != b.epochs[i].train_loss) return false;
        if (a.epochs[i].val_loss != b.epochs[i].val_loss) return false;
        if (a.epochs[i].val_accuracy != b.epochs[i].val_accuracy) return false;
    }
    return a.best_epoch == b.best_epoch && a.best_val_loss == b.best_val_loss;
}

}  // namespace

TEST_CASE("one epoch bookkeeping") {
    auto train_set = make_set(Algo::insertion_sort, 8, 6, 1);
    auto val_set = make_set(Algo::insertion_sort, 4, 6, 2);
    ModelConfig mc;
    mc.algorithm = Algo::insertion_sort;
    mc.latent_dim = 8;
    Model model = Model::init(mc, 5);
    TrainOutput out = train(model, train_set, val_set, tiny_config(RunMode::dear, 1));
    CHECK(out.metrics.epochs.size() == 1);
    CHECK(out.metrics.best_epoch == 1);
    CHECK(out.metrics.epochs[0].val_accuracy >= 0.0);
    CHECK(out.metrics.epochs[0].val_accuracy <= 1.0);
}

TEST_CASE("training loss decreases when overfitting a fixed batch") {
    auto train_set = make_set(Algo::insertion_sort, 8, 5, 7);
    auto val_set = make_set(Algo::insertion_sort, 2, 5, 8);
    ModelConfig mc;
    mc.algorithm = Algo::insertion_sort;
    mc.latent_dim = 16;
    Model model = Model::init(mc, 9);
    TrainConfig tc = tiny_config(RunMode::dear, 40);
    tc.batch_size = 8;
    TrainOutput out = train(model, train_set, val_set, tc);
    const double first = out.metrics.epochs.front().train_loss;
    const double last = out.metrics.epochs.back().train_loss;
    INFO("first " << first << " last " << last);
    CHECK(last < 0.8 * first);
}

TEST_CASE("baseline mode also trains") {
    auto train_set = make_set(Algo::insertion_sort, 8, 5, 17);
    auto val_set = make_set(Algo::insertion_sort, 2, 5, 18);
    ModelConfig mc;
    mc.algorithm = Algo::insertion_sort;
    mc.latent_dim = 12;
    Model model = Model::init(mc, 19);
    TrainOutput out = train(model, train_set, val_set, tiny_config(RunMode::nar_baseline, 25));
    CHECK(out.metrics.epochs.back().train_loss <
          0.9 * out.metrics.epochs.front().train_loss);
}

TEST_CASE("rerunning an identical config reproduces metrics bit for bit") {
    auto train_set = make_set(Algo::bellman_ford, 12, 8, 21);
    auto val_set = make_set(Algo::bellman_ford, 4, 8, 22);
    ModelConfig mc;
    mc.algorithm = Algo::bellman_ford;
    mc.latent_dim = 8;
    TrainConfig tc = tiny_config(RunMode::dear, 3);

    Model m1 = Model::init(mc, 31);
    TrainOutput a = train(m1, train_set, val_set, tc);
    Model m2 = Model::init(mc, 31);
    TrainOutput b = train(m2, train_set, val_set, tc);
    CHECK(same_metrics(a.metrics, b.metrics));
}

TEST_CASE("worker count does not change training results") {
    auto train_set = make_set(Algo::bellman_ford, 12, 8, 41);
    auto val_set = make_set(Algo::bellman_ford, 4, 8, 42);
    ModelConfig mc;
    mc.algorithm = Algo::bellman_ford;
    mc.latent_dim = 8;
    TrainConfig tc1 = tiny_config(RunMode::dear, 2);
    tc1.workers = 1;
    TrainConfig tc2 = tc1;
    tc2.workers = 2;

    Model m1 = Model::init(mc, 43);
    TrainOutput a = train(m1, train_set, val_set, tc1);
    Model m2 = Model::init(mc, 43);
    TrainOutput b = train(m2, train_set, val_set, tc2);
    CHECK(same_metrics(a.metrics, b.metrics));
}

TEST_CASE("model selection takes the lowest validation loss, earliest on ties") {
    auto train_set = make_set(Algo::insertion_sort, 8, 5, 51);
    auto val_set = make_set(Algo::insertion_sort, 3, 5, 52);
    ModelConfig mc;
    mc.algorithm = Algo::insertion_sort;
    mc.latent_dim = 8;
    Model model = Model::init(mc, 53);
    TrainOutput out = train(model, train_set, val_set, tiny_config(RunMode::dear, 6));
    double best = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    for (const auto& row : out.metrics.epochs) {
        if (row.val_loss < best) {
            best = row.val_loss;
            best_epoch = row.epoch;
        }
    }
    CHECK(out.metrics.best_epoch == best_epoch);
    CHECK(out.metrics.best_val_loss == best);
}

TEST_CASE("evaluation") {
    auto data = make_set(Algo::bellman_ford, 10, 12, 61);
    ModelConfig mc;
    mc.algorithm = Algo::bellman_ford;
    mc.latent_dim = 8;
    Model model = Model::init(mc, 63);
    SolverConfig scfg;

    SECTION("never mutates parameters") {
        std::vector<Tensor> before;
        for (Parameter* p : model.parameters()) before.push_back(p->value);
        evaluate_dataset(model, data, RunMode::dear, scfg, 2);
        auto params = model.parameters();
        for (size_t i = 0; i < params.size(); ++i)
            CHECK(max_abs_diff(before[i], params[i]->value) == 0.0);
    }
    SECTION("reported accuracy equals a recount from the per-sample records") {
        EvalResult r = evaluate_dataset(model, data, RunMode::dear, scfg, 1);
        int64_t slots = 0, correct = 0;
        for (const auto& s : r.per_sample) {
            slots += s.slots;
            correct += s.correct;
        }
        CHECK(r.slots_total == slots);
        CHECK(r.correct_total == correct);
        CHECK(r.accuracy == static_cast<double>(correct) / static_cast<double>(slots));
    }
    SECTION("reported accuracy matches an offline recomputation of predictions") {
        EvalResult r = evaluate_dataset(model, data, RunMode::dear, scfg, 1);
        int64_t correct = 0, slots = 0;
        for (const auto& sample : data) {
            EncodedInstance inst = encode(sample, model);
            DeqForwardResult fr = deq_forward(inst, model, scfg);
            auto positions = target_positions(sample, inst, fr.logits.layout);
            correct += count_correct(fr.logits, positions);
            slots += static_cast<int64_t>(positions.size());
        }
        CHECK(r.correct_total == correct);
        CHECK(r.slots_total == slots);
    }
    SECTION("an untrained model scores near the chance level on large graphs") {
        auto big = make_set(Algo::bellman_ford, 12, 64, 65);
        EvalResult r = evaluate_dataset(model, big, RunMode::dear, scfg, 2);
        INFO("accuracy " << r.accuracy << " chance " << r.chance_level);
        CHECK(r.accuracy <= 3.0 * r.chance_level);
        CHECK(r.accuracy >= r.chance_level / 3.0);
    }
    SECTION("worker count does not change evaluation metrics") {
        EvalResult a = evaluate_dataset(model, data, RunMode::dear, scfg, 1);
        EvalResult b = evaluate_dataset(model, data, RunMode::dear, scfg, 2);
        CHECK(a.accuracy == b.accuracy);
        CHECK(a.loss == b.loss);
        CHECK(a.mean_iterations == b.mean_iterations);
    }
    SECTION("perfect predictions give accuracy one") {
        // feed the oracle targets through the accuracy path directly
        const Sample& sample = data[0];
        EncodedInstance inst = encode(sample, model);
        SlotLayout lay = build_slot_layout(inst);
        auto positions = target_positions(sample, inst, lay);
        Logits lg;
        lg.layout = lay;
        lg.scores = Tensor({(*lay.offsets).back()});
        for (int pos : positions) lg.scores[pos] = 10.0;
        CHECK(pointer_accuracy(lg, positions) == 1.0);
    }
}

TEST_CASE("checkpoints round trip exactly") {
    ModelConfig mc;
    mc.algorithm = Algo::floyd_warshall;
    mc.latent_dim = 8;
    Model model = Model::init(mc, 71);
    const auto path = (fs::temp_directory_path() / "dear_ckpt_test.json").string();
    save_checkpoint(path, model);
    Model loaded = load_checkpoint(path);
    CHECK(loaded.cfg.algorithm == mc.algorithm);
    CHECK(loaded.cfg.latent_dim == 8);
    auto pa = model.parameters();
    auto pb = loaded.parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i]->name == pb[i]->name);
        CHECK(max_abs_diff(pa[i]->value, pb[i]->value) == 0.0);
    }

    auto data = make_set(Algo::floyd_warshall, 4, 8, 73);
    SolverConfig scfg;
    EvalResult a = evaluate_dataset(model, data, RunMode::dear, scfg, 1);
    EvalResult b = evaluate_dataset(loaded, data, RunMode::dear, scfg, 1);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.loss == b.loss);
}

TEST_CASE("benchmark bookkeeping") {
    ModelConfig mc;
    mc.algorithm = Algo::insertion_sort;
    mc.latent_dim = 8;
    Model model = Model::init(mc, 81);
    SolverConfig rel;
    rel.stop_mode = StopMode::relative;
    rel.epsilon = 0.1;

    SECTION("single repetition flags the undefined deviation as zero") {
        auto data = make_set(Algo::insertion_sort, 3, 6, 83);
        BenchResult r = benchmark_inference(model, data, RunMode::dear, rel, 1);
        CHECK(r.single_measurement);
        CHECK(r.seconds_per_sample_std == 0.0);
        CHECK(r.repetitions == 1);
    }
    SECTION("baseline time grows with instance size") {
        auto small = make_set(Algo::insertion_sort, 3, 4, 85);
        auto large = make_set(Algo::insertion_sort, 3, 24, 86);
        BenchResult rs = benchmark_inference(model, small, RunMode::nar_baseline, rel, 2);
        BenchResult rl = benchmark_inference(model, large, RunMode::nar_baseline, rel, 2);
        CHECK(rl.seconds_per_sample_mean > rs.seconds_per_sample_mean);
        CHECK(rl.mean_iterations == 24.0);  // T = n unroll
        CHECK(rs.mean_iterations == 4.0);
    }
}

TEST_CASE("relative-tolerance ablation") {
    ModelConfig mc;
    mc.algorithm = Algo::bellman_ford;
    mc.latent_dim = 8;
    Model model = Model::init(mc, 91);
    auto data = make_set(Algo::bellman_ford, 8, 12, 93);
    SolverConfig base;

    AblationResult r = ablation_relative_tolerance(model, data, base, 2);
    SECTION("identical stopping configs give identical metrics") {
        AblationResult r2 = ablation_relative_tolerance(model, data, base, 2);
        CHECK(r.absolute.accuracy == r2.absolute.accuracy);
        CHECK(r.relative.accuracy == r2.relative.accuracy);
        CHECK(r.absolute.mean_iterations == r2.absolute.mean_iterations);
    }
    SECTION("relative stopping never needs more iterations per sample") {
        CHECK(r.relative_leq_absolute_per_sample);
        CHECK(r.mean_iterations_delta <= 0.0);
    }
}

TEST_CASE("metrics csv and json reports") {
    Metrics m;
    m.epochs = {{1, 0.5, 0.4, 0.25}, {2, 0.3, 0.35, 0.5}};
    m.best_epoch = 2;
    const auto path = (fs::temp_directory_path() / "dear_metrics_test.csv").string();
    write_metrics_csv(path, m);
    std::ifstream in(path);
    std::string header, row1;
    std::getline(in, header);
    std::getline(in, row1);
    CHECK(header == "epoch,train_loss,val_loss,val_accuracy");
    CHECK(row1.rfind("1,0.5", 0) == 0);

    EvalResult e;
    e.accuracy = 0.75;
    e.chance_level = 0.1;
    json j = eval_to_json(e);
    CHECK(j.at("accuracy") == 0.75);
    CHECK(j.at("chance_level") == 0.1);
}

TEST_CASE("non-finite losses abort with epoch and batch context") {
    auto train_set = make_set(Algo::insertion_sort, 4, 5, 95);
    auto val_set = make_set(Algo::insertion_sort, 2, 5, 96);
    ModelConfig mc;
    mc.algorithm = Algo::insertion_sort;
    mc.latent_dim = 8;
    Model model = Model::init(mc, 97);
    model.proc.readout.weight.value.fill(1e308);  // force a non-finite forward
    TrainConfig tc = tiny_config(RunMode::dear, 1);
    CHECK_THROWS_WITH(train(model, train_set, val_set, tc),
                      Catch::Matchers::ContainsSubstring("epoch 1"));
}
