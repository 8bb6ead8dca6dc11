#pragma once
// Preference-optimization losses, their closed-form gradients, and the
// optimizers that apply them.
//
// dpo_as_written    -ln sigma(beta * (log pi(chosen) - log pi(rejected))),
//                   no reference policy (the default).
// dpo_referenced    same with the log-ratio measured against a frozen
//                   reference policy.
// ddpo_raw          denoise-loss difference L(chosen) - L(rejected) with
//                   shared (t, eps) draws per pair; unbounded below, so
//                   gradient clipping defaults on.
// ddpo_sigmoid      -ln sigma(-beta * difference), the bounded variant.
//
// For the categorical learner both DPO variants use the identity
// log pi(x+) - log pi(x-) = sum_s (logit_s[x+_s] - logit_s[x-_s]) — the
// chosen and rejected scenes share one conditioning vector, so the
// per-slot log-partition terms cancel exactly.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "veriloop/learner.hpp"
#include "veriloop/pairgen.hpp"

namespace veriloop::trainer {

enum class LossVariant : int {
    dpo_as_written = 0,
    dpo_referenced = 1,
    ddpo_raw = 2,
    ddpo_sigmoid = 3,
};

enum class OptimizerKind : int { sgd = 0, adam = 1 };

const char* to_string(LossVariant v);
const char* to_string(OptimizerKind k);
std::optional<LossVariant> loss_variant_from_string(const std::string& s);
std::optional<OptimizerKind> optimizer_from_string(const std::string& s);

struct TrainingConfig {
    LossVariant loss = LossVariant::dpo_referenced;
    OptimizerKind optimizer = OptimizerKind::adam;
    double beta = 0.5;          // preference temperature
    double learning_rate = 0.0125;
    int batch_size = 32;
    bool lora_only = true;
    double clip_norm = 5.0;     // global gradient-norm clip; <= 0 disables
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int noise_draws = 4;        // (t, eps) draws per pair for ddpo losses

    void validate() const;
};

// Gradients aligned one-to-one with learner::trainable_refs order.
struct GradientSet {
    std::vector<learner::ParamRef> refs;
    std::vector<Tensor> grads;

    double global_norm() const;  // order-stable reduction
    void scale(double s);
};

GradientSet zero_gradients(const learner::ParameterSet& params, bool lora_only);

struct LossReport {
    double loss = 0.0;
    double grad_norm = 0.0;  // pre-clip global norm
    bool clipped = false;
};

// ---------------------------------------------------------------------------
// DPO (categorical learner).
// ---------------------------------------------------------------------------

// Mean DPO loss over the batch plus gradients for the trainable tensors.
// `reference` must be non-null for the referenced variant and is ignored
// otherwise. Clipping (when enabled) is applied last, inside this call.
LossReport dpo_loss_and_grad(const world::WorldConfig& cfg,
                             const learner::ParameterSet& params,
                             std::span<const pairgen::PreferencePair> pairs,
                             const TrainingConfig& tcfg,
                             const learner::ParameterSet* reference, GradientSet& out);

double dpo_loss_only(const world::WorldConfig& cfg, const learner::ParameterSet& params,
                     std::span<const pairgen::PreferencePair> pairs,
                     const TrainingConfig& tcfg, const learner::ParameterSet* reference);

// ---------------------------------------------------------------------------
// DDPO (diffusion learner).
// ---------------------------------------------------------------------------

// One set of (t, eps) draws per pair, shared between the chosen and rejected
// scenes of that pair.
std::vector<std::vector<learner::NoiseDraw>> make_pair_draws(const learner::NoiseSchedule& ns,
                                                             int scene_dim, std::size_t n_pairs,
                                                             int draws_per_pair, Rng& rng);

LossReport ddpo_loss_and_grad(const world::WorldConfig& cfg,
                              const learner::ParameterSet& params,
                              const learner::NoiseSchedule& ns,
                              std::span<const pairgen::PreferencePair> pairs,
                              std::span<const std::vector<learner::NoiseDraw>> draws,
                              const TrainingConfig& tcfg, GradientSet& out);

double ddpo_loss_only(const world::WorldConfig& cfg, const learner::ParameterSet& params,
                      const learner::NoiseSchedule& ns,
                      std::span<const pairgen::PreferencePair> pairs,
                      std::span<const std::vector<learner::NoiseDraw>> draws,
                      const TrainingConfig& tcfg);

// ---------------------------------------------------------------------------
// Optimizers.
// ---------------------------------------------------------------------------

struct OptimizerState {
    std::uint64_t step = 0;           // update count; increments every apply
    std::vector<Tensor> m;            // adam first moments (lazily shaped)
    std::vector<Tensor> v;            // adam second moments
};

// In-place parameter update. The trainable set is defined by grads.refs, so
// lora-only batches can never touch a frozen base tensor.
void apply_update(learner::ParameterSet& params, const GradientSet& grads,
                  const TrainingConfig& tcfg, OptimizerState& state);

// ---------------------------------------------------------------------------
// Gradient checking.
// ---------------------------------------------------------------------------

using LossFn = std::function<double(const learner::ParameterSet&)>;
using GradFn = std::function<GradientSet(const learner::ParameterSet&)>;

struct GradCheckReport {
    double max_rel_err = 0.0;
    int probes = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::string worst_coordinate;
};

// Central-difference probe of `n_probes` random trainable coordinates.
// rel err = |analytic - numeric| / max(|analytic| + |numeric|, 1e-5); the
// floor keeps finite-difference round-off on zero-gradient coordinates from
// registering as error. Callers should evaluate both closures with clipping
// disabled, since clipping rescales the analytic gradient but not the loss.
GradCheckReport grad_check(const LossFn& loss, const GradFn& grad,
                           const learner::ParameterSet& params, bool lora_only, int n_probes,
                           double h, Rng& rng);

}  // namespace veriloop::trainer
