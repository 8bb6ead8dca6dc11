#pragma once
// Trainable learners over the synthetic world.
//
// Two learner families share one parameter container:
//
//   categorical — one softmax head per scene slot over the slot-token
//                 vocabulary; exact log-likelihoods, sampled generation.
//   diffusion   — a small DDPM over scene vectors with a two-layer tanh MLP
//                 as the noise predictor; generation runs the reverse chain
//                 and decodes the result to the nearest scene.
//
// Base weights can be frozen with low-rank adapters (delta = alpha * A * B)
// carrying all trainable state, or trained directly.

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "veriloop/common.hpp"
#include "veriloop/verifier.hpp"
#include "veriloop/world.hpp"

namespace veriloop::learner {

enum class LearnerKind : int { categorical = 0, diffusion = 1 };

enum class InitKind : int {
    zeros = 0,     // uniform policy / zero predictor
    prior = 1,     // weak compositional prior (categorical only)
    gaussian = 2,  // small random weights, for gradient checks
};

struct ModelSpec {
    LearnerKind kind = LearnerKind::categorical;
    int hidden = 64;          // diffusion MLP width
    int lora_rank = 8;        // 0 disables adapters (full-model training)
    double lora_alpha = 1.0;
    int diffusion_steps = 10;
    double beta_min = 1e-3;
    double beta_max = 0.2;
    double init_scale = 0.02;  // gaussian base / adapter A init scale

    void validate() const;
};

// Derived dimensions for a (world, model) pairing.
struct Dims {
    int prompt_dim = 0;
    int critique_dim = 0;
    int feature_dim = 0;  // prompt + critique + trailing constant-1 feature
    int n_slots = 0;
    int slot_vocab = 0;
    int scene_dim = 0;
    int mlp_in = 0;  // scene_dim + 1 (normalized timestep) + feature_dim
};

Dims dims_of(const world::WorldConfig& cfg, const ModelSpec& spec);

// Conditioning features: encode_prompt ++ critique features ++ {1.0}.
std::vector<double> condition_features(const world::WorldConfig& cfg,
                                       const world::PromptSpec& prompt,
                                       const verifier::Critique* critique_or_null);

// ---------------------------------------------------------------------------
// Parameters.
// ---------------------------------------------------------------------------

struct LoraAdapter {
    int rank = 0;
    double alpha = 1.0;
    Tensor a;  // rows x rank
    Tensor b;  // rank x cols
};

struct TensorEntry {
    std::string name;
    std::shared_ptr<const Tensor> base;  // shared immutable storage
    bool frozen = true;
    std::optional<LoraAdapter> adapter;
};

struct ParameterSet {
    LearnerKind kind = LearnerKind::categorical;
    std::vector<TensorEntry> tensors;

    const TensorEntry& find(const std::string& name) const;
    TensorEntry& find(const std::string& name);
};

// Copy-on-write access to a base tensor: clones the storage when shared.
Tensor& mutable_base(TensorEntry& entry);

// Immutable snapshot handed between pipeline workers.
struct VersionedParams {
    std::uint64_t version = 0;
    ParameterSet params;
};

ParameterSet make_params(const world::WorldConfig& cfg, const ModelSpec& spec, InitKind init,
                         Rng& rng);

// base + alpha * (A * B), materialized. Identity when no adapter is attached.
Tensor effective_weight(const TensorEntry& entry);

// Number of trainable scalars: adapter entries sum(rank * (rows + cols)) in
// lora-only mode, unfrozen base entries otherwise.
std::size_t trainable_count(const ParameterSet& params, bool lora_only);

// Enumeration of trainable tensors, in a fixed order shared with GradientSet.
enum class ParamPart : int { base = 0, lora_a = 1, lora_b = 2 };

struct ParamRef {
    int tensor_index = 0;
    ParamPart part = ParamPart::base;
};

std::vector<ParamRef> trainable_refs(const ParameterSet& params, bool lora_only);
const Tensor& param_tensor(const ParameterSet& params, const ParamRef& ref);
Tensor& param_tensor_mutable(ParameterSet& params, const ParamRef& ref);

// ---------------------------------------------------------------------------
// Categorical learner.
// ---------------------------------------------------------------------------

// Logits of one slot head: W_s phi + alpha * A_s (B_s phi).
void slot_logits(const world::WorldConfig& cfg, const ParameterSet& params, int slot,
                 std::span<const double> features, std::vector<double>& out);

// Exact log pi(scene | prompt, critique): sum of per-slot log-softmax terms.
double log_likelihood(const world::WorldConfig& cfg, const ParameterSet& params,
                      const world::PromptSpec& prompt, const world::Scene& scene,
                      const verifier::Critique* critique_or_null = nullptr);

// ---------------------------------------------------------------------------
// Diffusion learner.
// ---------------------------------------------------------------------------

struct NoiseSchedule {
    int steps = 0;
    std::vector<double> beta;       // beta[t-1] for t = 1..steps
    std::vector<double> alpha;      // 1 - beta
    std::vector<double> alpha_bar;  // prod_{s<=t} alpha_s

    double beta_at(int t) const;
    double alpha_at(int t) const;
    double alpha_bar_at(int t) const;  // t = 0 yields 1
};

// Linear beta ramp from beta_min to beta_max over `steps` steps.
NoiseSchedule make_schedule(int steps, double beta_min, double beta_max);

struct NoiseDraw {
    int t = 1;                // 1..steps
    std::vector<double> eps;  // scene_dim standard normals
};

NoiseDraw make_noise_draw(const NoiseSchedule& ns, int scene_dim, Rng& rng);

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps. t = 0 returns x0.
world::SceneVector forward_noising(const NoiseSchedule& ns, const world::SceneVector& x0,
                                   int t, std::span<const double> eps);

// MLP noise predictor, conditioned on the normalized timestep and features.
std::vector<double> eps_predict(const ParameterSet& params, std::span<const double> x_t, int t,
                                int steps, std::span<const double> features);

// Monte-Carlo eps-prediction loss: ||eps - eps_theta(x_t, t)||^2 averaged
// over the supplied draws (squared norm sums over dimensions).
double denoise_loss(const world::WorldConfig& cfg, const ParameterSet& params,
                    const NoiseSchedule& ns, const world::PromptSpec& prompt,
                    const world::Scene& scene, std::span<const NoiseDraw> draws);

// Test seam: same losses/sampling with an injected predictor.
template <typename EpsFn>
double denoise_loss_with(const NoiseSchedule& ns, EpsFn&& eps_fn,
                         const world::SceneVector& x0, std::span<const NoiseDraw> draws) {
    if (draws.empty()) throw NumericError("denoise_loss: no noise draws supplied");
    double total = 0.0;
    for (const NoiseDraw& d : draws) {
        const world::SceneVector x_t = forward_noising(ns, x0, d.t, d.eps);
        const std::vector<double> pred = eps_fn(x_t, d.t);
        double sq = 0.0;
        for (std::size_t i = 0; i < x0.size(); ++i) {
            const double diff = pred[i] - d.eps[i];
            sq += diff * diff;
        }
        total += sq;
    }
    return total / static_cast<double>(draws.size());
}

// Ancestral reverse sampling: x_S ~ N(0, I), then for t = S..1
//   x_{t-1} = (x_t - beta_t / sqrt(1 - alpha_bar_t) * eps_theta) / sqrt(alpha_t)
//             + sigma_t z,   sigma_t^2 = beta_t, no noise at t = 1.
template <typename EpsFn>
world::SceneVector sample_reverse_with(const NoiseSchedule& ns, EpsFn&& eps_fn, int dim,
                                       Rng& rng) {
    world::SceneVector x(static_cast<std::size_t>(dim));
    for (double& v : x) v = draw_normal(rng);
    for (int t = ns.steps; t >= 1; --t) {
        const std::vector<double> pred = eps_fn(x, t);
        const double beta = ns.beta_at(t);
        const double scale = beta / std::sqrt(1.0 - ns.alpha_bar_at(t));
        const double inv_sqrt_alpha = 1.0 / std::sqrt(ns.alpha_at(t));
        for (int i = 0; i < dim; ++i)
            x[static_cast<std::size_t>(i)] =
                (x[static_cast<std::size_t>(i)] - scale * pred[static_cast<std::size_t>(i)]) *
                inv_sqrt_alpha;
        if (t > 1) {
            const double sigma = std::sqrt(beta);
            for (int i = 0; i < dim; ++i) x[static_cast<std::size_t>(i)] += sigma * draw_normal(rng);
        }
    }
    return x;
}

world::SceneVector sample_reverse(const world::WorldConfig& cfg, const ParameterSet& params,
                                  const NoiseSchedule& ns, const world::PromptSpec& prompt,
                                  const verifier::Critique* critique_or_null, Rng& rng);

// ---------------------------------------------------------------------------
// Generation (both learner kinds).
// ---------------------------------------------------------------------------

world::Scene generate(const world::WorldConfig& cfg, const ModelSpec& spec,
                      const ParameterSet& params, const world::PromptSpec& prompt,
                      const verifier::Critique* critique_or_null, Rng& rng);

// ---------------------------------------------------------------------------
// Checkpoints: flat binary container (header with names, shapes, frozen
// flags, adapter ranks; then row-major 64-bit float payloads). Round trips
// byte-identically.
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> serialize_params(const ParameterSet& params);
ParameterSet deserialize_params(std::span<const std::uint8_t> bytes);
void save_checkpoint(const ParameterSet& params, const std::string& path);
ParameterSet load_checkpoint(const std::string& path);

}  // namespace veriloop::learner
