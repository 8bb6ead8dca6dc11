#pragma once
// The continual training pipeline: deterministic prompt streams, the
// verify-refine generation loop, replay-fed preference bursts, and the
// bounded-staleness snapshot registry used by the asynchronous mode.
//
// Determinism contract: every random draw comes from an Rng seeded by
// mix_seed(seed, stream-tag, stream-key, absolute-index...), so behaviour is
// a pure function of (config, seed) and never of thread timing. The
// synchronous runner is bitwise reproducible; the asynchronous runner keeps
// the same per-trajectory streams but may generate against older parameter
// snapshots, with the allowed lag bounded by `staleness_limit` and the
// actual lag of every acquisition recorded for audit.

#include <array>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "veriloop/learner.hpp"
#include "veriloop/pairgen.hpp"
#include "veriloop/replay.hpp"
#include "veriloop/trainer.hpp"

namespace veriloop::pipeline {

// ---------------------------------------------------------------------------
// Prompt streams.
// ---------------------------------------------------------------------------

struct CategoryMix {
    std::array<double, world::kNumCategories> weights;

    static CategoryMix uniform();
    void validate() const;  // non-negative, at least one positive
};

// The prompt at an absolute stream position. Pure in (cfg, mix, seed,
// stream_key, index).
world::PromptSpec stream_prompt(const world::WorldConfig& cfg, const CategoryMix& mix,
                                std::uint64_t seed, std::uint64_t stream_key,
                                std::uint64_t index);

// ---------------------------------------------------------------------------
// Snapshot registry (async mode).
// ---------------------------------------------------------------------------

using SnapshotPtr = std::shared_ptr<const learner::VersionedParams>;

struct StalenessEvent {
    std::uint64_t used_version = 0;
    std::uint64_t latest_version = 0;
};

// Versioned parameter snapshots shared between the trainer (publisher) and
// generation workers (readers). Readers refresh when their held snapshot
// would fall more than `staleness_limit` versions behind, so the lag
// recorded at every acquisition is bounded by construction.
class SnapshotRegistry {
  public:
    explicit SnapshotRegistry(int staleness_limit);

    void publish(std::uint64_t version, const learner::ParameterSet& params);

    SnapshotPtr latest() const;
    std::uint64_t latest_version() const;

    // Refreshes `held` if keeping it would exceed the staleness limit, and
    // records the (used, latest) pair. `held` may be null (always filled).
    // Throws ShutdownError once the registry is shut down.
    void acquire_for_generation(SnapshotPtr& held);

    // Blocks until a version >= v is available. Throws ShutdownError if the
    // registry shuts down first.
    SnapshotPtr acquire_at_least(std::uint64_t v) const;

    void shutdown();
    bool is_shutdown() const;

    std::vector<StalenessEvent> trace() const;
    int staleness_limit() const { return limit_; }

  private:
    mutable std::mutex mu_;
    mutable std::condition_variable cv_;
    SnapshotPtr latest_;
    std::vector<StalenessEvent> trace_;
    int limit_ = 0;
    bool down_ = false;
};

// Single-producer single-consumer blocking queue with back-pressure.
template <typename T>
class BoundedQueue {
  public:
    explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw ConfigError("queue capacity must be >= 1");
    }

    // Blocks while full. Returns false (drops the item) once closed.
    bool push(T item) {
        std::unique_lock<std::mutex> lk(mu_);
        cv_space_.wait(lk, [&] { return items_.size() < capacity_ || closed_; });
        if (closed_) return false;
        items_.push_back(std::move(item));
        cv_items_.notify_one();
        return true;
    }

    // Blocks while empty. Returns nullopt once closed and drained.
    std::optional<T> pop() {
        std::unique_lock<std::mutex> lk(mu_);
        cv_items_.wait(lk, [&] { return !items_.empty() || closed_; });
        if (items_.empty()) return std::nullopt;
        T out = std::move(items_.front());
        items_.erase(items_.begin());
        cv_space_.notify_one();
        return out;
    }

    void close() {
        std::lock_guard<std::mutex> lk(mu_);
        closed_ = true;
        cv_items_.notify_all();
        cv_space_.notify_all();
    }

  private:
    std::mutex mu_;
    std::condition_variable cv_items_;
    std::condition_variable cv_space_;
    std::vector<T> items_;
    std::size_t capacity_;
    bool closed_ = false;
};

// ---------------------------------------------------------------------------
// Metrics.
// ---------------------------------------------------------------------------

enum class PromptOutcome : int {
    skipped_initial_pass = 0,  // first attempt already verified; nothing to mine
    pair_yielding = 1,         // verified after at least one refinement
    exhausted = 2,             // never verified within the step budget
};

const char* to_string(PromptOutcome o);

struct PromptRecord {
    std::uint64_t prompt_index = 0;
    std::uint64_t prompt_id = 0;
    world::Category category = world::Category::single_object;
    int steps_used = 0;
    bool satisfied = false;
    double first_aggregate = 0.0;
    double final_aggregate = 0.0;
    int raw_pairs = 0;         // candidates before margin filtering
    int margin_filtered = 0;   // dropped by the margin threshold
    int extracted = 0;         // pairs surviving the margin filter
    int admitted = 0;          // pairs accepted by the replay buffer
    PromptOutcome outcome = PromptOutcome::exhausted;
    std::uint64_t gen_version = 0;  // parameter version used to generate
};

struct TrainStepRecord {
    std::uint64_t step_index = 0;
    std::uint64_t burst_index = 0;
    std::uint64_t version_after = 0;
    double loss = 0.0;
    double grad_norm = 0.0;
    bool clipped = false;
    int batch = 0;
    double wall_ms = 0.0;  // excluded from the deterministic serialization
};

// Bookkeeping identities over a finished run:
//   total == skipped + pair_yielding + exhausted
//   raw_pairs == margin_filtered + extracted
//   extracted == admitted + progress_rejected
struct PairEconomy {
    std::uint64_t total = 0;
    std::uint64_t skipped = 0;
    std::uint64_t pair_yielding = 0;
    std::uint64_t exhausted = 0;
    std::uint64_t raw_pairs = 0;
    std::uint64_t margin_filtered = 0;
    std::uint64_t extracted = 0;
    std::uint64_t admitted = 0;
    std::uint64_t progress_rejected = 0;

    bool consistent() const;
};

class MetricsLog {
  public:
    void add_prompt(const PromptRecord& r);
    void add_train_step(const TrainStepRecord& r);

    const std::vector<PromptRecord>& prompts() const { return prompts_; }
    const std::vector<TrainStepRecord>& train_steps() const { return steps_; }

    PairEconomy economy() const;

    // Deterministic content: prompt records then train-step records, one
    // JSON object per line, wall time excluded.
    std::string to_jsonl() const;
    // Train steps only, wall time included (not reproducible across runs).
    std::string train_steps_jsonl() const;

  private:
    std::vector<PromptRecord> prompts_;
    std::vector<TrainStepRecord> steps_;
};

// ---------------------------------------------------------------------------
// Evaluation.
// ---------------------------------------------------------------------------

struct EvalReport {
    std::array<double, world::kNumCategories> pass_rate{};
    std::array<int, world::kNumCategories> prompts{};
    double overall = 0.0;
};

// ---------------------------------------------------------------------------
// Stream sessions.
// ---------------------------------------------------------------------------

struct StreamConfig {
    world::WorldConfig world;
    learner::ModelSpec model;
    learner::InitKind init = learner::InitKind::prior;
    trainer::TrainingConfig training;
    pairgen::TrajectoryOpts trajectory;
    pairgen::PairOpts pair_opts;
    CategoryMix mix = CategoryMix::uniform();
    std::size_t replay_capacity = 1024;
    std::uint64_t budget = 500;       // prompts per run (or per federated round)
    int train_frequency = 32;         // prompts between training bursts
    int burst_steps = 8;              // optimizer steps per burst
    int staleness_limit = 2;          // async: max snapshot lag in versions
    std::size_t queue_capacity = 64;  // async: generation -> trainer queue
    int eval_prompts_per_category = 50;

    void validate() const;
};

// Everything the generation side produces for one prompt. Built without
// touching trainer-side state, so it can run on a worker thread.
struct PromptWork {
    std::uint64_t prompt_index = 0;
    pairgen::Trajectory trajectory;
    std::vector<pairgen::PreferencePair> pairs;
    int raw_pairs = 0;
    std::uint64_t gen_version = 0;
};

// Runs one verify-refine trajectory at an absolute stream position against
// the given parameters. Pure in its arguments.
PromptWork generate_work(const StreamConfig& cfg, std::uint64_t seed, std::uint64_t stream_key,
                         std::uint64_t prompt_index, const learner::ParameterSet& gen_params,
                         std::uint64_t gen_version);

// Trainer-side state of one stream: canonical parameters, replay buffer,
// optimizer state, and metrics. Shared by the centralized runners and the
// federated clients so a single-client federation reduces to the
// centralized loop exactly.
class StreamSession {
  public:
    StreamSession(const StreamConfig& cfg, std::uint64_t seed, std::uint64_t stream_key,
                  learner::ParameterSet initial, std::uint64_t initial_version = 0);

    PromptWork generate(std::uint64_t prompt_index) const;  // against canonical params
    PromptRecord absorb(const PromptWork& work);

    // True after every `train_frequency` absorbed prompts.
    bool burst_due() const;
    // Invoked after each optimizer step with (version, params); the async
    // runner uses it to publish snapshots at step granularity.
    using PublishFn = std::function<void(std::uint64_t, const learner::ParameterSet&)>;
    // Runs `burst_steps` optimizer steps on replay batches. Returns the step
    // records (empty when the buffer is still empty).
    std::vector<TrainStepRecord> train_burst(const PublishFn& on_step = {});

    // Federated broadcast: replaces the canonical parameters, keeping
    // optimizer state, replay buffer, and stream position.
    void reset_params(learner::ParameterSet params, std::uint64_t version);

    const learner::ParameterSet& params() const { return params_; }
    std::uint64_t version() const { return version_; }
    std::uint64_t prompts_absorbed() const { return prompts_absorbed_; }
    std::uint64_t next_prompt_index() const { return next_prompt_index_; }
    void advance_prompt_cursor(std::uint64_t n) { next_prompt_index_ += n; }
    const replay::ReplayBuffer& buffer() const { return buffer_; }
    MetricsLog& metrics() { return metrics_; }
    const MetricsLog& metrics() const { return metrics_; }
    const StreamConfig& config() const { return cfg_; }
    std::uint64_t stream_key() const { return stream_key_; }
    std::uint64_t seed() const { return seed_; }

  private:
    StreamConfig cfg_;
    std::uint64_t seed_ = 0;
    std::uint64_t stream_key_ = 0;
    learner::ParameterSet params_;
    std::optional<learner::ParameterSet> reference_;  // frozen, dpo_referenced only
    learner::NoiseSchedule schedule_;
    std::uint64_t version_ = 0;
    replay::ReplayBuffer buffer_;
    trainer::OptimizerState opt_;
    MetricsLog metrics_;
    std::uint64_t prompts_absorbed_ = 0;
    std::uint64_t next_prompt_index_ = 0;
    std::uint64_t next_burst_index_ = 0;
    std::uint64_t next_step_index_ = 0;
};

// One full stream step: generate at the session's cursor, absorb, advance,
// and train when a burst is due. The centralized runners and the federated
// clients share this exact sequence.
void step_stream(StreamSession& session);

// Single-shot pass rates on held-out prompts. The same (seed, salt) yields
// the same prompts and generation randomness, so before/after comparisons
// are paired.
EvalReport evaluate_policy(const StreamConfig& cfg, const learner::ParameterSet& params,
                           std::uint64_t seed, std::uint64_t salt);

// ---------------------------------------------------------------------------
// Runners.
// ---------------------------------------------------------------------------

struct RunResult {
    learner::ParameterSet params;
    std::uint64_t version = 0;
    MetricsLog metrics;
    EvalReport baseline;
    EvalReport final_eval;
    PairEconomy economy;
    replay::ReplayStats replay_stats;
    std::vector<StalenessEvent> staleness;  // async runs only
};

// Deterministic single-threaded loop: generate, absorb, burst.
RunResult run_stream_sync(const StreamConfig& cfg, std::uint64_t seed);

// Two-thread loop: a generation worker feeding a bounded queue, and the
// trainer absorbing, bursting, and publishing snapshots. Generation reads
// bounded-stale snapshots from the registry.
RunResult run_stream_async(const StreamConfig& cfg, std::uint64_t seed);

}  // namespace veriloop::pipeline
