#pragma once
// Verify-refine trajectories and preference-pair mining.
//
// A trajectory generates up to max_steps attempts for one prompt. The first
// attempt is unconditioned; every later attempt is conditioned on the
// critique of its predecessor. The loop stops at the first attempt that
// passes the verifier. A satisfied trajectory yields (rejected, chosen)
// pairs: each earlier failed attempt against the passing one, kept when the
// aggregate-score margin clears the configured minimum (inclusive).

#include <functional>
#include <optional>
#include <vector>

#include "veriloop/verifier.hpp"
#include "veriloop/world.hpp"

namespace veriloop::pairgen {

struct TrajectoryStep {
    world::Scene scene;
    verifier::ScoreVector scores;
    double aggregate = 0.0;
    bool passed = false;
    // Present on failed steps; the final step of a satisfied trajectory has
    // no critique.
    std::optional<verifier::Critique> critique;
};

struct Trajectory {
    world::PromptSpec prompt;
    verifier::ConditionSet conditions;
    std::vector<TrajectoryStep> steps;
    std::optional<int> satisfied_at;  // step index of the first pass

    bool exhausted() const { return !satisfied_at.has_value(); }
};

struct PreferencePair {
    world::PromptSpec prompt;
    world::Scene rejected;
    world::Scene chosen;
    double rejected_aggregate = 0.0;
    double chosen_aggregate = 0.0;
    double margin = 0.0;  // chosen_aggregate - rejected_aggregate
    int rejected_step = 0;
    int chosen_step = 0;
};

struct TrajectoryOpts {
    int max_steps = 5;
    double tau = verifier::kDefaultTau;
};

struct PairOpts {
    double min_margin = 0.15;
    // Also emit (earlier, later-but-still-failed) pairs when the later
    // attempt scores higher. Off by default: only the passing attempt is
    // chosen.
    bool intermediate_chosen = false;
};

// Generation callback: (prompt, critique-or-null, step index, rng) -> scene.
using GenerateFn = std::function<world::Scene(const world::PromptSpec&,
                                              const verifier::Critique*, int, Rng&)>;

// Runs the verify-refine loop. Invokes the generator exactly once per
// recorded step.
Trajectory run_trajectory(const world::WorldConfig& cfg, const GenerateFn& generate,
                          const world::PromptSpec& prompt, const TrajectoryOpts& opts,
                          Rng& rng);

// Candidate pairs considered before margin filtering (0 for exhausted or
// first-shot-satisfied trajectories).
int raw_pair_candidates(const Trajectory& traj, const PairOpts& opts);

// Margin-filtered preference pairs. Exhausted trajectories yield nothing.
std::vector<PreferencePair> extract_pairs(const Trajectory& traj, const PairOpts& opts);

// Uniformly shuffles pairs and splits them into batches of `batch_size` (the
// last batch may be short). The output is a multiset-preserving partition.
std::vector<std::vector<PreferencePair>> shuffle_into_batches(std::vector<PreferencePair> pairs,
                                                              int batch_size, Rng& rng);

}  // namespace veriloop::pairgen
