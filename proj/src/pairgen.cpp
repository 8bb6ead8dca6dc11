#include "veriloop/pairgen.hpp"

namespace veriloop::pairgen {

Trajectory run_trajectory(const world::WorldConfig& cfg, const GenerateFn& generate,
                          const world::PromptSpec& prompt, const TrajectoryOpts& opts,
                          Rng& rng) {
    if (opts.max_steps < 1) throw ConfigError("trajectory: max_steps must be >= 1");
    Trajectory traj;
    traj.prompt = prompt;
    traj.conditions = verifier::formulate(cfg, prompt);

    const verifier::Critique* feedback = nullptr;
    for (int t = 0; t < opts.max_steps; ++t) {
        TrajectoryStep step;
        step.scene = generate(prompt, feedback, t, rng);
        step.scores = verifier::evaluate(cfg, traj.conditions, step.scene);
        step.aggregate = verifier::aggregate(step.scores);
        step.passed = verifier::passed(step.scores, opts.tau);
        if (!step.passed)
            step.critique = verifier::critique(traj.conditions, step.scores, opts.tau);
        traj.steps.push_back(std::move(step));
        if (traj.steps.back().passed) {
            traj.satisfied_at = t;
            break;
        }
        feedback = &*traj.steps.back().critique;
    }
    return traj;
}

int raw_pair_candidates(const Trajectory& traj, const PairOpts& opts) {
    if (traj.exhausted()) return 0;
    const int t = *traj.satisfied_at;
    if (!opts.intermediate_chosen) return t;
    // Every ordered (earlier, later) step pair is a candidate.
    return t * (t + 1) / 2;
}

std::vector<PreferencePair> extract_pairs(const Trajectory& traj, const PairOpts& opts) {
    std::vector<PreferencePair> out;
    if (traj.exhausted()) return out;
    const int t = *traj.satisfied_at;

    auto emit = [&](int k, int j) {
        const TrajectoryStep& neg = traj.steps[static_cast<std::size_t>(k)];
        const TrajectoryStep& pos = traj.steps[static_cast<std::size_t>(j)];
        const double margin = pos.aggregate - neg.aggregate;
        if (margin < opts.min_margin) return;  // inclusive keep at the boundary
        PreferencePair p;
        p.prompt = traj.prompt;
        p.rejected = neg.scene;
        p.chosen = pos.scene;
        p.rejected_aggregate = neg.aggregate;
        p.chosen_aggregate = pos.aggregate;
        p.margin = margin;
        p.rejected_step = k;
        p.chosen_step = j;
        out.push_back(std::move(p));
    };

    if (opts.intermediate_chosen) {
        for (int j = 1; j <= t; ++j)
            for (int k = 0; k < j; ++k) emit(k, j);
    } else {
        for (int k = 0; k < t; ++k) emit(k, t);
    }
    return out;
}

std::vector<std::vector<PreferencePair>> shuffle_into_batches(std::vector<PreferencePair> pairs,
                                                              int batch_size, Rng& rng) {
    if (batch_size < 1) throw ConfigError("shuffle_into_batches: batch_size must be >= 1");
    // Fisher-Yates; explicit so the draw sequence is pinned down.
    for (std::size_t i = pairs.size(); i > 1; --i) {
        const std::size_t j = draw_index(rng, i);
        std::swap(pairs[i - 1], pairs[j]);
    }
    std::vector<std::vector<PreferencePair>> batches;
    for (std::size_t off = 0; off < pairs.size(); off += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(pairs.size(), off + static_cast<std::size_t>(batch_size));
        batches.emplace_back(pairs.begin() + static_cast<std::ptrdiff_t>(off),
                             pairs.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

}  // namespace veriloop::pairgen
