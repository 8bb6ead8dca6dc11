#include "veriloop/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <exception>
#include <thread>
#include <utility>

#include <nlohmann/json.hpp>

#include "veriloop/verifier.hpp"

namespace veriloop::pipeline {

namespace {

using json = nlohmann::ordered_json;

double wall_ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

}  // namespace

// ---------------------------------------------------------------------------
// Prompt streams.
// ---------------------------------------------------------------------------

CategoryMix CategoryMix::uniform() {
    CategoryMix m;
    m.weights.fill(1.0);
    return m;
}

void CategoryMix::validate() const {
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw ConfigError("stream.categories: weights must be >= 0");
        total += w;
    }
    if (!(total > 0.0)) throw ConfigError("stream.categories: at least one positive weight");
}

world::PromptSpec stream_prompt(const world::WorldConfig& cfg, const CategoryMix& mix,
                                std::uint64_t seed, std::uint64_t stream_key,
                                std::uint64_t index) {
    Rng rng = make_rng(mix_seed(seed, stream_tag::prompts, stream_key, index));
    double total = 0.0;
    for (double w : mix.weights) total += w;
    const double u = draw_uniform(rng) * total;
    double cum = 0.0;
    int cat = world::kNumCategories - 1;
    for (int c = 0; c < world::kNumCategories; ++c) {
        cum += mix.weights[static_cast<std::size_t>(c)];
        if (u < cum) {
            cat = c;
            break;
        }
    }
    return world::gen_prompt(cfg, static_cast<world::Category>(cat), index, rng);
}

// ---------------------------------------------------------------------------
// SnapshotRegistry.
// ---------------------------------------------------------------------------

SnapshotRegistry::SnapshotRegistry(int staleness_limit) : limit_(staleness_limit) {
    if (staleness_limit < 0) throw ConfigError("stream.staleness_limit must be >= 0");
}

void SnapshotRegistry::publish(std::uint64_t version, const learner::ParameterSet& params) {
    auto snap = std::make_shared<const learner::VersionedParams>(
        learner::VersionedParams{version, params});
    std::lock_guard<std::mutex> lk(mu_);
    if (down_) throw ShutdownError("registry: publish after shutdown");
    if (latest_ && version <= latest_->version)
        throw ConfigError("registry: published versions must increase");
    latest_ = std::move(snap);
    cv_.notify_all();
}

SnapshotPtr SnapshotRegistry::latest() const {
    std::lock_guard<std::mutex> lk(mu_);
    return latest_;
}

std::uint64_t SnapshotRegistry::latest_version() const {
    std::lock_guard<std::mutex> lk(mu_);
    return latest_ ? latest_->version : 0;
}

void SnapshotRegistry::acquire_for_generation(SnapshotPtr& held) {
    std::lock_guard<std::mutex> lk(mu_);
    if (down_) throw ShutdownError("registry: acquire after shutdown");
    if (!latest_) throw ConfigError("registry: acquire before first publish");
    // Refresh when keeping the held snapshot would exceed the allowed lag;
    // the decision and the trace entry are made under one lock, so the
    // recorded lag is exact at this instant.
    if (!held || latest_->version - held->version >
                     static_cast<std::uint64_t>(limit_))
        held = latest_;
    trace_.push_back(StalenessEvent{held->version, latest_->version});
}

SnapshotPtr SnapshotRegistry::acquire_at_least(std::uint64_t v) const {
    std::unique_lock<std::mutex> lk(mu_);
    cv_.wait(lk, [&] { return down_ || (latest_ && latest_->version >= v); });
    if (down_) throw ShutdownError("registry: shut down while waiting for a snapshot");
    return latest_;
}

void SnapshotRegistry::shutdown() {
    std::lock_guard<std::mutex> lk(mu_);
    down_ = true;
    cv_.notify_all();
}

bool SnapshotRegistry::is_shutdown() const {
    std::lock_guard<std::mutex> lk(mu_);
    return down_;
}

std::vector<StalenessEvent> SnapshotRegistry::trace() const {
    std::lock_guard<std::mutex> lk(mu_);
    return trace_;
}

// ---------------------------------------------------------------------------
// Metrics.
// ---------------------------------------------------------------------------

const char* to_string(PromptOutcome o) {
    switch (o) {
        case PromptOutcome::skipped_initial_pass: return "skipped_initial_pass";
        case PromptOutcome::pair_yielding: return "pair_yielding";
        case PromptOutcome::exhausted: return "exhausted";
    }
    std::abort();
}

bool PairEconomy::consistent() const {
    return total == skipped + pair_yielding + exhausted &&
           raw_pairs == margin_filtered + extracted &&
           extracted == admitted + progress_rejected;
}

void MetricsLog::add_prompt(const PromptRecord& r) { prompts_.push_back(r); }
void MetricsLog::add_train_step(const TrainStepRecord& r) { steps_.push_back(r); }

PairEconomy MetricsLog::economy() const {
    PairEconomy e;
    for (const PromptRecord& r : prompts_) {
        e.total += 1;
        switch (r.outcome) {
            case PromptOutcome::skipped_initial_pass: e.skipped += 1; break;
            case PromptOutcome::pair_yielding: e.pair_yielding += 1; break;
            case PromptOutcome::exhausted: e.exhausted += 1; break;
        }
        e.raw_pairs += static_cast<std::uint64_t>(r.raw_pairs);
        e.margin_filtered += static_cast<std::uint64_t>(r.margin_filtered);
        e.extracted += static_cast<std::uint64_t>(r.extracted);
        e.admitted += static_cast<std::uint64_t>(r.admitted);
        e.progress_rejected += static_cast<std::uint64_t>(r.extracted - r.admitted);
    }
    return e;
}

namespace {

json prompt_json(const PromptRecord& r) {
    json j;
    j["record"] = "prompt";
    j["prompt_index"] = r.prompt_index;
    j["prompt_id"] = r.prompt_id;
    j["category"] = world::to_string(r.category);
    j["steps_used"] = r.steps_used;
    j["satisfied"] = r.satisfied;
    j["first_aggregate"] = r.first_aggregate;
    j["final_aggregate"] = r.final_aggregate;
    j["raw_pairs"] = r.raw_pairs;
    j["margin_filtered"] = r.margin_filtered;
    j["extracted"] = r.extracted;
    j["admitted"] = r.admitted;
    j["outcome"] = to_string(r.outcome);
    j["gen_version"] = r.gen_version;
    return j;
}

json train_step_json(const TrainStepRecord& r, bool include_wall) {
    json j;
    j["record"] = "train_step";
    j["step_index"] = r.step_index;
    j["burst_index"] = r.burst_index;
    j["version_after"] = r.version_after;
    j["loss"] = r.loss;
    j["grad_norm"] = r.grad_norm;
    j["clipped"] = r.clipped;
    j["batch"] = r.batch;
    if (include_wall) j["wall_ms"] = r.wall_ms;
    return j;
}

}  // namespace

std::string MetricsLog::to_jsonl() const {
    std::string out;
    for (const PromptRecord& r : prompts_) out += prompt_json(r).dump() + "\n";
    for (const TrainStepRecord& r : steps_) out += train_step_json(r, false).dump() + "\n";
    return out;
}

std::string MetricsLog::train_steps_jsonl() const {
    std::string out;
    for (const TrainStepRecord& r : steps_) out += train_step_json(r, true).dump() + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// StreamConfig.
// ---------------------------------------------------------------------------

void StreamConfig::validate() const {
    world.validate();
    model.validate();
    training.validate();
    mix.validate();
    if (trajectory.max_steps < 1) throw ConfigError("trajectory.max_steps must be >= 1");
    if (!(trajectory.tau > 0.0 && trajectory.tau <= 1.0))
        throw ConfigError("trajectory.tau must lie in (0, 1]");
    if (!(pair_opts.min_margin >= 0.0)) throw ConfigError("pairs.min_margin must be >= 0");
    if (replay_capacity < 1) throw ConfigError("replay.capacity must be >= 1");
    if (budget < 1) throw ConfigError("stream.budget must be >= 1");
    if (train_frequency < 1) throw ConfigError("stream.train_frequency must be >= 1");
    if (burst_steps < 1) throw ConfigError("stream.burst_steps must be >= 1");
    if (staleness_limit < 0) throw ConfigError("stream.staleness_limit must be >= 0");
    if (queue_capacity < 1) throw ConfigError("stream.queue_capacity must be >= 1");
    if (eval_prompts_per_category < 1)
        throw ConfigError("stream.eval_prompts_per_category must be >= 1");

    const bool dpo = training.loss == trainer::LossVariant::dpo_as_written ||
                     training.loss == trainer::LossVariant::dpo_referenced;
    if (dpo && model.kind != learner::LearnerKind::categorical)
        throw ConfigError("training.loss: dpo variants require the categorical learner");
    if (!dpo && model.kind != learner::LearnerKind::diffusion)
        throw ConfigError("training.loss: ddpo variants require the diffusion learner");
    if (!training.lora_only && model.lora_rank != 0)
        throw ConfigError(
            "training.lora_only=false requires model.lora_rank=0 (bases stay frozen while "
            "adapters are attached)");
    if (training.lora_only && model.lora_rank == 0)
        throw ConfigError("training.lora_only=true requires model.lora_rank >= 1");
}

// ---------------------------------------------------------------------------
// Generation side.
// ---------------------------------------------------------------------------

PromptWork generate_work(const StreamConfig& cfg, std::uint64_t seed, std::uint64_t stream_key,
                         std::uint64_t prompt_index, const learner::ParameterSet& gen_params,
                         std::uint64_t gen_version) {
    PromptWork w;
    w.prompt_index = prompt_index;
    w.gen_version = gen_version;
    const world::PromptSpec prompt =
        stream_prompt(cfg.world, cfg.mix, seed, stream_key, prompt_index);
    Rng rng = make_rng(mix_seed(seed, stream_tag::trajectory, stream_key, prompt_index));
    const pairgen::GenerateFn gen = [&](const world::PromptSpec& p,
                                        const verifier::Critique* crit, int /*step*/, Rng& r) {
        return learner::generate(cfg.world, cfg.model, gen_params, p, crit, r);
    };
    w.trajectory = pairgen::run_trajectory(cfg.world, gen, prompt, cfg.trajectory, rng);
    w.raw_pairs = pairgen::raw_pair_candidates(w.trajectory, cfg.pair_opts);
    w.pairs = pairgen::extract_pairs(w.trajectory, cfg.pair_opts);
    return w;
}

namespace {

// Async variant: re-acquires a snapshot before every attempt, so staleness
// is bounded per generation call, not per trajectory.
PromptWork generate_work_refreshing(const StreamConfig& cfg, std::uint64_t seed,
                                    std::uint64_t stream_key, std::uint64_t prompt_index,
                                    SnapshotRegistry& registry, SnapshotPtr& held) {
    PromptWork w;
    w.prompt_index = prompt_index;
    const world::PromptSpec prompt =
        stream_prompt(cfg.world, cfg.mix, seed, stream_key, prompt_index);
    Rng rng = make_rng(mix_seed(seed, stream_tag::trajectory, stream_key, prompt_index));
    const pairgen::GenerateFn gen = [&](const world::PromptSpec& p,
                                        const verifier::Critique* crit, int /*step*/, Rng& r) {
        registry.acquire_for_generation(held);
        return learner::generate(cfg.world, cfg.model, held->params, p, crit, r);
    };
    w.trajectory = pairgen::run_trajectory(cfg.world, gen, prompt, cfg.trajectory, rng);
    w.raw_pairs = pairgen::raw_pair_candidates(w.trajectory, cfg.pair_opts);
    w.pairs = pairgen::extract_pairs(w.trajectory, cfg.pair_opts);
    w.gen_version = held ? held->version : 0;
    return w;
}

}  // namespace

// ---------------------------------------------------------------------------
// StreamSession.
// ---------------------------------------------------------------------------

StreamSession::StreamSession(const StreamConfig& cfg, std::uint64_t seed,
                             std::uint64_t stream_key, learner::ParameterSet initial,
                             std::uint64_t initial_version)
    : cfg_(cfg),
      seed_(seed),
      stream_key_(stream_key),
      params_(std::move(initial)),
      schedule_(learner::make_schedule(cfg.model.diffusion_steps, cfg.model.beta_min,
                                       cfg.model.beta_max)),
      version_(initial_version),
      buffer_(cfg.replay_capacity) {
    cfg_.validate();
    if (cfg_.training.loss == trainer::LossVariant::dpo_referenced) reference_ = params_;
}

PromptWork StreamSession::generate(std::uint64_t prompt_index) const {
    return generate_work(cfg_, seed_, stream_key_, prompt_index, params_, version_);
}

PromptRecord StreamSession::absorb(const PromptWork& work) {
    const pairgen::Trajectory& traj = work.trajectory;
    PromptRecord r;
    r.prompt_index = work.prompt_index;
    r.prompt_id = traj.prompt.id;
    r.category = traj.prompt.category;
    r.steps_used = static_cast<int>(traj.steps.size());
    r.satisfied = traj.satisfied_at.has_value();
    r.first_aggregate = traj.steps.front().aggregate;
    r.final_aggregate = traj.steps.back().aggregate;
    r.raw_pairs = work.raw_pairs;
    r.extracted = static_cast<int>(work.pairs.size());
    r.margin_filtered = work.raw_pairs - r.extracted;
    r.admitted = static_cast<int>(buffer_.admit(traj, work.pairs));
    if (!traj.satisfied_at.has_value())
        r.outcome = PromptOutcome::exhausted;
    else if (*traj.satisfied_at == 0)
        r.outcome = PromptOutcome::skipped_initial_pass;
    else
        r.outcome = PromptOutcome::pair_yielding;
    r.gen_version = work.gen_version;
    prompts_absorbed_ += 1;
    metrics_.add_prompt(r);
    return r;
}

bool StreamSession::burst_due() const {
    return prompts_absorbed_ > 0 &&
           prompts_absorbed_ % static_cast<std::uint64_t>(cfg_.train_frequency) == 0;
}

std::vector<TrainStepRecord> StreamSession::train_burst(const PublishFn& on_step) {
    std::vector<TrainStepRecord> out;
    if (buffer_.size() == 0) return out;  // nothing mined yet; burst skipped

    const std::uint64_t burst = next_burst_index_++;
    trainer::GradientSet grads = trainer::zero_gradients(params_, cfg_.training.lora_only);
    for (int s = 0; s < cfg_.burst_steps; ++s) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng rng = make_rng(mix_seed(seed_, stream_tag::burst, stream_key_, burst,
                                    static_cast<std::uint64_t>(s)));
        const std::vector<pairgen::PreferencePair> batch =
            buffer_.sample_batch(static_cast<std::size_t>(cfg_.training.batch_size), rng);

        trainer::LossReport rep;
        if (cfg_.training.loss == trainer::LossVariant::dpo_as_written ||
            cfg_.training.loss == trainer::LossVariant::dpo_referenced) {
            rep = trainer::dpo_loss_and_grad(cfg_.world, params_, batch, cfg_.training,
                                             reference_ ? &*reference_ : nullptr, grads);
        } else {
            const auto draws = trainer::make_pair_draws(
                schedule_, world::scene_vector_dim(cfg_.world), batch.size(),
                cfg_.training.noise_draws, rng);
            rep = trainer::ddpo_loss_and_grad(cfg_.world, params_, schedule_, batch, draws,
                                              cfg_.training, grads);
        }
        trainer::apply_update(params_, grads, cfg_.training, opt_);
        version_ += 1;
        if (on_step) on_step(version_, params_);

        TrainStepRecord rec;
        rec.step_index = next_step_index_++;
        rec.burst_index = burst;
        rec.version_after = version_;
        rec.loss = rep.loss;
        rec.grad_norm = rep.grad_norm;
        rec.clipped = rep.clipped;
        rec.batch = static_cast<int>(batch.size());
        rec.wall_ms = wall_ms_since(t0);
        metrics_.add_train_step(rec);
        out.push_back(rec);
    }
    return out;
}

void StreamSession::reset_params(learner::ParameterSet params, std::uint64_t version) {
    params_ = std::move(params);
    version_ = version;
}

void step_stream(StreamSession& session) {
    const std::uint64_t i = session.next_prompt_index();
    const PromptWork work = session.generate(i);
    session.absorb(work);
    session.advance_prompt_cursor(1);
    if (session.burst_due()) session.train_burst();
}

// ---------------------------------------------------------------------------
// Evaluation.
// ---------------------------------------------------------------------------

EvalReport evaluate_policy(const StreamConfig& cfg, const learner::ParameterSet& params,
                           std::uint64_t seed, std::uint64_t salt) {
    EvalReport rep;
    int total = 0;
    int passed_total = 0;
    for (int c = 0; c < world::kNumCategories; ++c) {
        int passed_count = 0;
        for (int j = 0; j < cfg.eval_prompts_per_category; ++j) {
            Rng prompt_rng = make_rng(mix_seed(seed, stream_tag::heldout, salt,
                                               static_cast<std::uint64_t>(c),
                                               static_cast<std::uint64_t>(j)));
            const world::PromptSpec prompt =
                world::gen_prompt(cfg.world, static_cast<world::Category>(c),
                                  static_cast<std::uint64_t>(j), prompt_rng);
            Rng gen_rng = make_rng(mix_seed(seed, stream_tag::eval, salt,
                                            static_cast<std::uint64_t>(c),
                                            static_cast<std::uint64_t>(j)));
            const world::Scene scene =
                learner::generate(cfg.world, cfg.model, params, prompt, nullptr, gen_rng);
            const verifier::ConditionSet conds = verifier::formulate(cfg.world, prompt);
            const verifier::ScoreVector scores = verifier::evaluate(cfg.world, conds, scene);
            if (verifier::passed(scores, cfg.trajectory.tau)) ++passed_count;
        }
        rep.pass_rate[static_cast<std::size_t>(c)] =
            static_cast<double>(passed_count) / cfg.eval_prompts_per_category;
        rep.prompts[static_cast<std::size_t>(c)] = cfg.eval_prompts_per_category;
        total += cfg.eval_prompts_per_category;
        passed_total += passed_count;
    }
    rep.overall = static_cast<double>(passed_total) / static_cast<double>(total);
    return rep;
}

// ---------------------------------------------------------------------------
// Runners.
// ---------------------------------------------------------------------------

namespace {

learner::ParameterSet initial_params(const StreamConfig& cfg, std::uint64_t seed) {
    Rng rng = make_rng(mix_seed(seed, stream_tag::init));
    return learner::make_params(cfg.world, cfg.model, cfg.init, rng);
}

RunResult finish_run(StreamSession& session, const StreamConfig& cfg, std::uint64_t seed,
                     EvalReport baseline) {
    RunResult res;
    res.params = session.params();
    res.version = session.version();
    res.metrics = session.metrics();
    res.baseline = baseline;
    res.final_eval = evaluate_policy(cfg, res.params, seed, 0);
    res.economy = res.metrics.economy();
    res.replay_stats = session.buffer().stats();
    return res;
}

}  // namespace

RunResult run_stream_sync(const StreamConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    learner::ParameterSet init = initial_params(cfg, seed);
    const EvalReport baseline = evaluate_policy(cfg, init, seed, 0);
    StreamSession session(cfg, seed, 0, std::move(init));
    for (std::uint64_t i = 0; i < cfg.budget; ++i) step_stream(session);
    return finish_run(session, cfg, seed, baseline);
}

RunResult run_stream_async(const StreamConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    learner::ParameterSet init = initial_params(cfg, seed);
    const EvalReport baseline = evaluate_policy(cfg, init, seed, 0);
    StreamSession session(cfg, seed, 0, init);

    SnapshotRegistry registry(cfg.staleness_limit);
    registry.publish(1, session.params());
    // Snapshot versions are offset by one from optimizer versions so the
    // pre-training publish is version 1 (publishes must increase from 0).
    BoundedQueue<PromptWork> queue(cfg.queue_capacity);

    std::exception_ptr gen_err;
    std::exception_ptr train_err;

    std::thread producer([&] {
        try {
            SnapshotPtr held;
            for (std::uint64_t i = 0; i < cfg.budget; ++i) {
                PromptWork w = generate_work_refreshing(cfg, seed, 0, i, registry, held);
                if (!queue.push(std::move(w))) return;  // consumer closed the queue
            }
        } catch (const ShutdownError&) {
            // Trainer-side failure shut the registry down; exit quietly.
        } catch (...) {
            gen_err = std::current_exception();
        }
        queue.close();
    });

    try {
        while (std::optional<PromptWork> w = queue.pop()) {
            session.absorb(*w);
            session.advance_prompt_cursor(1);
            if (session.burst_due())
                session.train_burst([&](std::uint64_t v, const learner::ParameterSet& p) {
                    registry.publish(v + 1, p);
                });
        }
    } catch (...) {
        train_err = std::current_exception();
        registry.shutdown();
        queue.close();
    }
    producer.join();
    if (train_err) std::rethrow_exception(train_err);
    if (gen_err) std::rethrow_exception(gen_err);

    RunResult res = finish_run(session, cfg, seed, baseline);
    res.staleness = registry.trace();
    return res;
}

}  // namespace veriloop::pipeline
