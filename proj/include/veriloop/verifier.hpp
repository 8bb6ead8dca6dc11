#pragma once
// Frozen verifier: turns a prompt into checkable conditions, scores scenes
// against them exactly, and produces structured critiques for failed
// attempts. The verifier is never trained; it is the fixed signal source the
// learner is optimized against.

#include <string>
#include <vector>

#include "veriloop/world.hpp"

namespace veriloop::verifier {

using ConditionSet = std::vector<world::Condition>;
using ScoreVector = std::vector<double>;

// Maximum conditions any grammar prompt can produce; fixes the width of the
// critique feature vector.
inline constexpr int kMaxConditions = 8;

// Default pass threshold for the min-rule.
inline constexpr double kDefaultTau = 0.95;

// Deterministically derives the checkable conditions of a prompt. Per entity,
// in order: exists, color (when a color is requested), count (when more than
// one copy is requested); all relation conditions follow. Idempotent: the
// same prompt always yields the same set.
ConditionSet formulate(const world::WorldConfig& cfg, const world::PromptSpec& prompt);

// Scores every condition against the scene, in condition order.
ScoreVector evaluate(const world::WorldConfig& cfg, const ConditionSet& conditions,
                     const world::Scene& scene);

// Mean of the per-condition scores. Empty score vectors are invalid.
double aggregate(const ScoreVector& scores);

// Min-rule pass check, inclusive: min_i s_i >= tau.
bool passed(const ScoreVector& scores, double tau);

// Structured feedback for a failed attempt: which conditions fell below tau,
// with copies of those conditions as hints for regeneration.
struct Critique {
    std::vector<int> failed;          // indices with s_i < tau, ascending
    ConditionSet failed_conditions;   // hint copies, same order as `failed`

    bool empty() const { return failed.empty(); }
    std::string text() const;
};

// The failed set is empty iff the scores pass at tau.
Critique critique(const ConditionSet& conditions, const ScoreVector& scores, double tau);

// Fixed-width conditioning features for the learner: multi-hot over the
// predicate kinds that failed plus multi-hot over failed condition indices.
// A missing critique (first attempt, or a passed one) encodes as all-zero.
inline constexpr int kCritiqueFeatureDim = world::kNumPredicateKinds + kMaxConditions;

std::vector<double> critique_features(const Critique* critique_or_null);

}  // namespace veriloop::verifier
