// Federated training with error-free delta transport.
//
// The claims under test are exactness claims, so the oracles are bitwise:
// reconstruct() must return the client's post-training value bit for bit,
// a single-client federation must match the uninterrupted centralized run,
// and aggregation must not care about the order clients report in.

#include <doctest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "veriloop/federated.hpp"

using namespace veriloop;
using federated::AdapterDelta;
using federated::ExactDelta;
using federated::FedConfig;
using federated::TwoSum;

namespace {

world::WorldConfig toy_world() {
    world::WorldConfig w;
    w.grid = 3;
    w.n_objects = 2;
    w.n_colors = 2;
    w.max_entities = 2;
    w.max_count = 2;
    return w;
}

pipeline::StreamConfig toy_stream(std::uint64_t budget) {
    pipeline::StreamConfig cfg;
    cfg.world = toy_world();
    cfg.model.kind = learner::LearnerKind::categorical;
    cfg.model.lora_rank = 2;
    cfg.training.loss = trainer::LossVariant::dpo_as_written;
    cfg.training.batch_size = 8;
    cfg.budget = budget;
    cfg.train_frequency = 8;
    cfg.burst_steps = 2;
    cfg.queue_capacity = 8;
    cfg.eval_prompts_per_category = 5;
    cfg.replay_capacity = 64;
    return cfg;
}

bool same_bits(double a, double b) {
    return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

// Random non-zero double with a spread of magnitudes.
double random_scaled(Rng& rng) {
    const double mantissa = 2.0 * draw_uniform(rng) - 1.0;
    const int exponent = static_cast<int>(draw_uniform(rng) * 80.0) - 40;
    const double x = std::ldexp(mantissa, exponent);
    return x == 0.0 ? 1.0 : x;
}

learner::ParameterSet perturbed(const learner::ParameterSet& base, bool lora_only,
                                std::uint64_t seed, double scale) {
    learner::ParameterSet post = base;
    Rng rng = make_rng(seed);
    for (const learner::ParamRef& ref : learner::trainable_refs(post, lora_only)) {
        Tensor& t = learner::param_tensor_mutable(post, ref);
        for (double& x : t.v) x += scale * (draw_uniform(rng) - 0.5);
    }
    return post;
}

}  // namespace

TEST_CASE("two_sum/exact_delta reconstruct the post value bitwise") {
    // The naive arithmetic delta provably cannot: crossing a binade loses
    // the low bits of the difference.
    const double pre = -1.0;
    const double post = 1.0 + std::numeric_limits<double>::epsilon();
    const double naive = pre + (post - pre);
    CHECK(naive != post);  // fl(post - pre) rounded to 2.0 exactly
    CHECK(naive == 1.0);

    const ExactDelta d = federated::exact_delta(pre, post);
    CHECK(same_bits(federated::reconstruct(pre, d), post));

    // two_sum error term: zero when the sum is exact, recovers it otherwise.
    const TwoSum t0 = federated::two_sum(3.0, 4.0);
    CHECK(t0.s == 7.0);
    CHECK(t0.e == 0.0);
    const TwoSum t1 = federated::two_sum(1.0, std::ldexp(1.0, -80));
    CHECK(t1.s == 1.0);
    CHECK(t1.e == std::ldexp(1.0, -80));

    // Fuzz across magnitudes: reconstruction is an exact round trip.
    Rng rng = make_rng(1234);
    for (int i = 0; i < 20000; ++i) {
        const double a = random_scaled(rng);
        const double b = random_scaled(rng);
        const ExactDelta dd = federated::exact_delta(a, b);
        CHECK(same_bits(federated::reconstruct(a, dd), b));
    }
}

TEST_CASE("tree_sum uses a fixed pairwise grouping") {
    CHECK(federated::tree_sum({}) == 0.0);

    const std::vector<double> one{3.25};
    CHECK(federated::tree_sum(one) == 3.25);

    Rng rng = make_rng(55);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> xs(5);
        for (double& x : xs) x = random_scaled(rng);
        const double expect = ((xs[0] + xs[1]) + (xs[2] + xs[3])) + xs[4];
        CHECK(same_bits(federated::tree_sum(xs), expect));

        const std::vector<double> quad(xs.begin(), xs.begin() + 4);
        CHECK(same_bits(federated::tree_sum(quad), (xs[0] + xs[1]) + (xs[2] + xs[3])));
    }
}

TEST_CASE("canonical_sort yields one bit sequence per multiset") {
    // Ties are broken by bit pattern, so even +0.0 / -0.0 land in a fixed
    // order (positive zero first: its pattern is numerically smaller).
    std::vector<double> zs{-0.0, 0.0, -0.0};
    federated::canonical_sort(zs);
    CHECK(!std::signbit(zs[0]));
    CHECK(std::signbit(zs[1]));
    CHECK(std::signbit(zs[2]));

    Rng rng = make_rng(77);
    std::vector<double> base{1.5, -2.0, 1.5, 0.25, -2.0, 8.0, 0.25, 0.25};
    std::vector<double> reference = base;
    federated::canonical_sort(reference);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> copy = base;
        std::shuffle(copy.begin(), copy.end(), rng);
        federated::canonical_sort(copy);
        REQUIRE(copy.size() == reference.size());
        for (std::size_t i = 0; i < copy.size(); ++i)
            CHECK(same_bits(copy[i], reference[i]));
    }
}

TEST_CASE("aggregate: single client reproduces its post bitwise") {
    const pipeline::StreamConfig cfg = toy_stream(16);
    Rng rng = make_rng(mix_seed(9, stream_tag::init));
    const learner::ParameterSet global =
        learner::make_params(cfg.world, cfg.model, cfg.init, rng);
    const learner::ParameterSet post = perturbed(global, true, 500, 0.25);

    const std::vector<Tensor> pre = federated::snapshot_trainable(global, true);
    const AdapterDelta delta = federated::make_delta(0, post, true, pre);
    const std::vector<AdapterDelta> one{delta};
    const learner::ParameterSet merged = federated::aggregate(global, true, one);

    CHECK(learner::serialize_params(merged) == learner::serialize_params(post));
}

TEST_CASE("aggregate: identical clients collapse to the single-client result") {
    const pipeline::StreamConfig cfg = toy_stream(16);
    Rng rng = make_rng(mix_seed(10, stream_tag::init));
    const learner::ParameterSet global =
        learner::make_params(cfg.world, cfg.model, cfg.init, rng);
    const learner::ParameterSet post = perturbed(global, true, 501, 0.25);
    const std::vector<Tensor> pre = federated::snapshot_trainable(global, true);

    std::vector<AdapterDelta> four;
    for (int m = 0; m < 4; ++m) four.push_back(federated::make_delta(m, post, true, pre));
    const learner::ParameterSet merged = federated::aggregate(global, true, four);
    CHECK(learner::serialize_params(merged) == learner::serialize_params(post));
}

TEST_CASE("aggregate is invariant under client permutations") {
    const pipeline::StreamConfig cfg = toy_stream(16);
    Rng rng = make_rng(mix_seed(11, stream_tag::init));
    const learner::ParameterSet global =
        learner::make_params(cfg.world, cfg.model, cfg.init, rng);
    const std::vector<Tensor> pre = federated::snapshot_trainable(global, true);

    std::vector<AdapterDelta> deltas;
    for (int m = 0; m < 3; ++m)
        deltas.push_back(
            federated::make_delta(m, perturbed(global, true, 600 + m, 0.5), true, pre));

    const learner::ParameterSet abc = federated::aggregate(global, true, deltas);
    std::swap(deltas[0], deltas[2]);
    const learner::ParameterSet cba = federated::aggregate(global, true, deltas);
    std::swap(deltas[0], deltas[1]);
    const learner::ParameterSet cab = federated::aggregate(global, true, deltas);

    CHECK(learner::serialize_params(abc) == learner::serialize_params(cba));
    CHECK(learner::serialize_params(abc) == learner::serialize_params(cab));

    // Frozen bases are untouched by aggregation.
    const Tensor& before = *global.tensors.front().base;
    const Tensor& after = *abc.tensors.front().base;
    REQUIRE(before.v.size() == after.v.size());
    for (std::size_t i = 0; i < before.v.size(); ++i)
        CHECK(same_bits(before.v[i], after.v[i]));
}

TEST_CASE("aggregate rejects malformed uploads") {
    const pipeline::StreamConfig cfg = toy_stream(16);
    Rng rng = make_rng(mix_seed(12, stream_tag::init));
    const learner::ParameterSet global =
        learner::make_params(cfg.world, cfg.model, cfg.init, rng);
    const std::vector<Tensor> pre = federated::snapshot_trainable(global, true);
    const AdapterDelta good =
        federated::make_delta(0, perturbed(global, true, 700, 0.1), true, pre);

    const std::vector<AdapterDelta> none;
    CHECK_THROWS_AS(federated::aggregate(global, true, none), ConfigError);

    AdapterDelta missing = good;
    missing.tensors.pop_back();
    const std::vector<AdapterDelta> short_upload{missing};
    CHECK_THROWS_AS(federated::aggregate(global, true, short_upload), ConfigError);

    AdapterDelta wrong_shape = good;
    wrong_shape.tensors.front().rows += 1;
    const std::vector<AdapterDelta> bad_shape{wrong_shape};
    CHECK_THROWS_AS(federated::aggregate(global, true, bad_shape), ConfigError);

    // Pre-round snapshot must match the trainable set.
    std::vector<Tensor> truncated(pre.begin(), pre.end() - 1);
    CHECK_THROWS_AS(federated::make_delta(0, global, true, truncated), ConfigError);
}

TEST_CASE("single-client federation equals the centralized run bitwise") {
    FedConfig fed;
    fed.stream = toy_stream(16);  // 16 prompts per round
    fed.clients = 1;
    fed.rounds = 3;
    const federated::FedResult f = federated::run_federation(fed, 33);

    const pipeline::RunResult sync = pipeline::run_stream_sync(toy_stream(48), 33);

    CHECK(learner::serialize_params(f.params) == learner::serialize_params(sync.params));
    REQUIRE(f.client_metrics.size() == 1);
    CHECK(f.client_metrics[0].to_jsonl() == sync.metrics.to_jsonl());
    CHECK(f.baseline.overall == sync.baseline.overall);
    CHECK(f.final_eval.overall == sync.final_eval.overall);
}

TEST_CASE("identical streams: four clients aggregate to the one-client result") {
    FedConfig base;
    base.stream = toy_stream(16);
    base.rounds = 2;
    base.identical_streams = true;

    FedConfig one = base;
    one.clients = 1;
    FedConfig four = base;
    four.clients = 4;

    const federated::FedResult a = federated::run_federation(one, 44);
    const federated::FedResult b = federated::run_federation(four, 44);
    CHECK(learner::serialize_params(a.params) == learner::serialize_params(b.params));
}

TEST_CASE("federation bookkeeping: rounds, cursors, admissions") {
    FedConfig fed;
    fed.stream = toy_stream(8);
    fed.clients = 2;
    fed.rounds = 3;
    const federated::FedResult res = federated::run_federation(fed, 55);

    REQUIRE(res.rounds.size() == 3);
    REQUIRE(res.client_metrics.size() == 2);
    for (std::size_t r = 0; r < res.rounds.size(); ++r) {
        CHECK(res.rounds[r].round == static_cast<int>(r));
        REQUIRE(res.rounds[r].client_admitted.size() == 2);
        REQUIRE(res.rounds[r].client_versions.size() == 2);
        if (r > 0) {
            for (int c = 0; c < 2; ++c) {
                // Cumulative counters never decrease across rounds.
                CHECK(res.rounds[r].client_admitted[c] >=
                      res.rounds[r - 1].client_admitted[c]);
                CHECK(res.rounds[r].client_versions[c] >=
                      res.rounds[r - 1].client_versions[c]);
            }
        }
    }

    // Each client's stream cursor persisted across rounds: 3 rounds x 8
    // prompts in unbroken stream order.
    for (const pipeline::MetricsLog& log : res.client_metrics) {
        REQUIRE(log.prompts().size() == 24);
        for (std::size_t i = 0; i < log.prompts().size(); ++i)
            CHECK(log.prompts()[i].prompt_index == i);
        CHECK(log.economy().consistent());
    }

    // Distinct stream keys: the two clients saw different prompt content.
    bool any_diff = false;
    for (std::size_t i = 0; i < 24; ++i)
        if (res.client_metrics[0].prompts()[i].category !=
            res.client_metrics[1].prompts()[i].category)
            any_diff = true;
    CHECK(any_diff);

    FedConfig bad = fed;
    bad.clients = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = fed;
    bad.rounds = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}
