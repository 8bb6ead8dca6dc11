#include "veriloop/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include "veriloop/kernels.hpp"

namespace veriloop::trainer {

namespace {

// softplus(u) = ln(1 + e^u), evaluated without overflow. Note that
// -ln sigma(z) == softplus(-z).
double softplus(double u) { return std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u))); }

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// grads position of (tensor_index, part), or -1 when that part is frozen.
struct RefIndex {
    std::vector<std::array<int, 3>> slots;

    explicit RefIndex(const GradientSet& g, std::size_t n_tensors)
        : slots(n_tensors, {-1, -1, -1}) {
        for (std::size_t i = 0; i < g.refs.size(); ++i) {
            const learner::ParamRef& r = g.refs[i];
            slots[static_cast<std::size_t>(r.tensor_index)][static_cast<int>(r.part)] =
                static_cast<int>(i);
        }
    }

    int at(int tensor_index, learner::ParamPart part) const {
        return slots[static_cast<std::size_t>(tensor_index)][static_cast<int>(part)];
    }
};

// W[token] . phi + alpha * A[token] . (B phi). `bphi` is the precomputed
// B * phi (empty when the entry carries no adapter).
double token_logit(const learner::TensorEntry& entry, int token, std::span<const double> phi,
                   const std::vector<double>& bphi) {
    const Tensor& w = *entry.base;
    double v = kernels::dot(&w.v[static_cast<std::size_t>(token) *
                               static_cast<std::size_t>(w.cols)],
                            phi.data(), static_cast<std::size_t>(w.cols));
    if (entry.adapter) {
        const learner::LoraAdapter& ad = *entry.adapter;
        v += ad.alpha * kernels::dot(&ad.a.v[static_cast<std::size_t>(token) *
                                             static_cast<std::size_t>(ad.rank)],
                                     bphi.data(), static_cast<std::size_t>(ad.rank));
    }
    return v;
}

std::vector<double> adapter_bx(const learner::TensorEntry& entry, std::span<const double> x) {
    std::vector<double> bx;
    if (!entry.adapter) return bx;
    const learner::LoraAdapter& ad = *entry.adapter;
    bx.resize(static_cast<std::size_t>(ad.rank));
    kernels::matvec(ad.b.v.data(), x.data(), bx.data(), ad.rank, ad.b.cols);
    return bx;
}

void check_finite(double loss, double norm) {
    if (!std::isfinite(loss)) throw NumericError("trainer: non-finite loss");
    if (!std::isfinite(norm)) throw NumericError("trainer: non-finite gradient norm");
}

// Applies the global-norm clip in place and fills the report.
LossReport finish_batch(double loss, const TrainingConfig& tcfg, GradientSet& out) {
    LossReport rep;
    rep.loss = loss;
    rep.grad_norm = out.global_norm();
    check_finite(rep.loss, rep.grad_norm);
    if (tcfg.clip_norm > 0.0 && rep.grad_norm > tcfg.clip_norm) {
        out.scale(tcfg.clip_norm / rep.grad_norm);
        rep.clipped = true;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// DPO internals.
// ---------------------------------------------------------------------------

// Sum over slots of logit(chosen token) - logit(rejected token). Equal to
// log pi(chosen) - log pi(rejected) because both scenes share the same
// conditioning, so each slot's log-partition term cancels.
double pair_logit_delta(const world::WorldConfig& cfg, const learner::ParameterSet& params,
                        std::span<const double> phi, const std::vector<int>& chosen,
                        const std::vector<int>& rejected,
                        std::vector<std::vector<double>>* bphi_cache) {
    double delta = 0.0;
    for (std::size_t s = 0; s < chosen.size(); ++s) {
        if (chosen[s] == rejected[s]) continue;
        const learner::TensorEntry& entry = params.tensors[s];
        std::vector<double> local;
        const std::vector<double>* bphi = &local;
        if (bphi_cache) {
            if ((*bphi_cache)[s].empty() && entry.adapter)
                (*bphi_cache)[s] = adapter_bx(entry, phi);
            bphi = &(*bphi_cache)[s];
        } else if (entry.adapter) {
            local = adapter_bx(entry, phi);
        }
        delta += token_logit(entry, chosen[s], phi, *bphi) -
                 token_logit(entry, rejected[s], phi, *bphi);
    }
    (void)cfg;
    return delta;
}

// Shared loss/gradient walk; `out` may be null for loss-only evaluation.
double dpo_batch(const world::WorldConfig& cfg, const learner::ParameterSet& params,
                 std::span<const pairgen::PreferencePair> pairs, const TrainingConfig& tcfg,
                 const learner::ParameterSet* reference, GradientSet* out) {
    if (params.kind != learner::LearnerKind::categorical)
        throw ConfigError("dpo loss requires a categorical learner");
    if (pairs.empty()) throw NumericError("dpo loss: empty batch");
    if (tcfg.loss == LossVariant::dpo_referenced && reference == nullptr)
        throw ConfigError("dpo_referenced needs a reference parameter set");

    std::unique_ptr<RefIndex> index;
    if (out) index = std::make_unique<RefIndex>(*out, params.tensors.size());

    const double inv_n = 1.0 / static_cast<double>(pairs.size());
    double loss = 0.0;
    for (const pairgen::PreferencePair& pair : pairs) {
        const std::vector<double> phi = learner::condition_features(cfg, pair.prompt, nullptr);
        const std::vector<int> chosen = world::scene_to_tokens(cfg, pair.chosen);
        const std::vector<int> rejected = world::scene_to_tokens(cfg, pair.rejected);

        std::vector<std::vector<double>> bphi_cache(params.tensors.size());
        double delta = pair_logit_delta(cfg, params, phi, chosen, rejected, &bphi_cache);
        if (tcfg.loss == LossVariant::dpo_referenced)
            delta -= pair_logit_delta(cfg, *reference, phi, chosen, rejected, nullptr);

        const double z = tcfg.beta * delta;
        loss += inv_n * softplus(-z);
        if (!out) continue;

        // d loss_i / d delta = -beta * sigma(-beta * delta).
        const double coeff = -inv_n * tcfg.beta * sigmoid(-z);
        for (std::size_t s = 0; s < chosen.size(); ++s) {
            if (chosen[s] == rejected[s]) continue;
            const int ti = static_cast<int>(s);
            const learner::TensorEntry& entry = params.tensors[s];
            const int gi_base = index->at(ti, learner::ParamPart::base);
            if (gi_base >= 0) {
                Tensor& gw = out->grads[static_cast<std::size_t>(gi_base)];
                double* row_c = &gw.v[static_cast<std::size_t>(chosen[s]) *
                                      static_cast<std::size_t>(gw.cols)];
                double* row_r = &gw.v[static_cast<std::size_t>(rejected[s]) *
                                      static_cast<std::size_t>(gw.cols)];
                kernels::axpy(coeff, phi.data(), row_c, phi.size());
                kernels::axpy(-coeff, phi.data(), row_r, phi.size());
            }
            const int gi_a = index->at(ti, learner::ParamPart::lora_a);
            const int gi_b = index->at(ti, learner::ParamPart::lora_b);
            if (gi_a < 0 && gi_b < 0) continue;
            const learner::LoraAdapter& ad = *entry.adapter;
            const std::vector<double>& bphi = bphi_cache[s];
            const std::size_t rank = static_cast<std::size_t>(ad.rank);
            if (gi_a >= 0) {
                Tensor& ga = out->grads[static_cast<std::size_t>(gi_a)];
                double* row_c = &ga.v[static_cast<std::size_t>(chosen[s]) * rank];
                double* row_r = &ga.v[static_cast<std::size_t>(rejected[s]) * rank];
                kernels::axpy(ad.alpha * coeff, bphi.data(), row_c, rank);
                kernels::axpy(-ad.alpha * coeff, bphi.data(), row_r, rank);
            }
            if (gi_b >= 0) {
                // dB = alpha * coeff * (A[chosen] - A[rejected])^T phi^T.
                Tensor& gb = out->grads[static_cast<std::size_t>(gi_b)];
                for (std::size_t r = 0; r < rank; ++r) {
                    const double arow =
                        ad.a.v[static_cast<std::size_t>(chosen[s]) * rank + r] -
                        ad.a.v[static_cast<std::size_t>(rejected[s]) * rank + r];
                    kernels::axpy(ad.alpha * coeff * arow, phi.data(),
                                  &gb.v[r * phi.size()], phi.size());
                }
            }
        }
    }
    return loss;
}

// ---------------------------------------------------------------------------
// DDPO internals.
// ---------------------------------------------------------------------------

struct MlpTrace {
    std::vector<double> u;     // input: [x_t; t/steps; phi]
    std::vector<double> b1u;   // adapter intermediate of w1 (may be empty)
    std::vector<double> h;     // tanh activations
    std::vector<double> b2h;   // adapter intermediate of w2 (may be empty)
    std::vector<double> out;   // predicted noise
};

// Forward pass with cached intermediates. Arithmetic matches eps_predict
// term-for-term so loss-only and gradient paths agree to the last bit.
void mlp_forward(const learner::ParameterSet& params, std::span<const double> x_t, int t,
                 int steps, std::span<const double> phi, MlpTrace& tr) {
    const learner::TensorEntry& w1 = params.find("w1");
    const learner::TensorEntry& b1 = params.find("b1");
    const learner::TensorEntry& w2 = params.find("w2");
    const learner::TensorEntry& b2 = params.find("b2");
    const int hidden = w1.base->rows;
    const int scene_dim = w2.base->rows;

    tr.u.assign(x_t.begin(), x_t.end());
    tr.u.push_back(static_cast<double>(t) / static_cast<double>(steps));
    tr.u.insert(tr.u.end(), phi.begin(), phi.end());

    tr.h.assign(static_cast<std::size_t>(hidden), 0.0);
    kernels::matvec(w1.base->v.data(), tr.u.data(), tr.h.data(), hidden, w1.base->cols);
    tr.b1u = adapter_bx(w1, tr.u);
    if (w1.adapter) {
        const learner::LoraAdapter& ad = *w1.adapter;
        std::vector<double> corr(static_cast<std::size_t>(hidden));
        kernels::matvec(ad.a.v.data(), tr.b1u.data(), corr.data(), hidden, ad.rank);
        kernels::axpy(ad.alpha, corr.data(), tr.h.data(), tr.h.size());
    }
    kernels::axpy(1.0, b1.base->v.data(), tr.h.data(), tr.h.size());
    for (double& v : tr.h) v = std::tanh(v);

    tr.out.assign(static_cast<std::size_t>(scene_dim), 0.0);
    kernels::matvec(w2.base->v.data(), tr.h.data(), tr.out.data(), scene_dim, w2.base->cols);
    tr.b2h = adapter_bx(w2, tr.h);
    if (w2.adapter) {
        const learner::LoraAdapter& ad = *w2.adapter;
        std::vector<double> corr(static_cast<std::size_t>(scene_dim));
        kernels::matvec(ad.a.v.data(), tr.b2h.data(), corr.data(), scene_dim, ad.rank);
        kernels::axpy(ad.alpha, corr.data(), tr.out.data(), tr.out.size());
    }
    kernels::axpy(1.0, b2.base->v.data(), tr.out.data(), tr.out.size());
}

// Backpropagates d loss / d out into the gradient set.
void mlp_backward(const learner::ParameterSet& params, const RefIndex& index,
                  const MlpTrace& tr, std::span<const double> dout, GradientSet& out) {
    const learner::TensorEntry& w1 = params.find("w1");
    const learner::TensorEntry& w2 = params.find("w2");
    const int hidden = w1.base->rows;
    const int scene_dim = w2.base->rows;
    const int mlp_in = w1.base->cols;

    auto tensor_pos = [&](const std::string& name) {
        for (std::size_t i = 0; i < params.tensors.size(); ++i)
            if (params.tensors[i].name == name) return static_cast<int>(i);
        throw ConfigError("mlp_backward: missing tensor " + name);
    };
    const int i_w1 = tensor_pos("w1");
    const int i_b1 = tensor_pos("b1");
    const int i_w2 = tensor_pos("w2");
    const int i_b2 = tensor_pos("b2");

    // Output layer.
    if (const int g = index.at(i_w2, learner::ParamPart::base); g >= 0)
        kernels::rank1_update(out.grads[static_cast<std::size_t>(g)].v.data(), 1.0, dout.data(),
                              tr.h.data(), scene_dim, hidden);
    if (const int g = index.at(i_b2, learner::ParamPart::base); g >= 0)
        kernels::axpy(1.0, dout.data(), out.grads[static_cast<std::size_t>(g)].v.data(),
                      dout.size());
    if (w2.adapter) {
        const learner::LoraAdapter& ad = *w2.adapter;
        if (const int g = index.at(i_w2, learner::ParamPart::lora_a); g >= 0)
            kernels::rank1_update(out.grads[static_cast<std::size_t>(g)].v.data(), ad.alpha,
                                  dout.data(), tr.b2h.data(), scene_dim, ad.rank);
        if (const int g = index.at(i_w2, learner::ParamPart::lora_b); g >= 0) {
            std::vector<double> at_dout(static_cast<std::size_t>(ad.rank));
            kernels::matvec_t(ad.a.v.data(), dout.data(), at_dout.data(), scene_dim, ad.rank);
            kernels::rank1_update(out.grads[static_cast<std::size_t>(g)].v.data(), ad.alpha,
                                  at_dout.data(), tr.h.data(), ad.rank, hidden);
        }
    }

    // dh = W2^T dout (+ adapter path), then through the tanh.
    std::vector<double> dh(static_cast<std::size_t>(hidden));
    kernels::matvec_t(w2.base->v.data(), dout.data(), dh.data(), scene_dim, hidden);
    if (w2.adapter) {
        const learner::LoraAdapter& ad = *w2.adapter;
        std::vector<double> at_dout(static_cast<std::size_t>(ad.rank));
        kernels::matvec_t(ad.a.v.data(), dout.data(), at_dout.data(), scene_dim, ad.rank);
        std::vector<double> corr(static_cast<std::size_t>(hidden));
        kernels::matvec_t(ad.b.v.data(), at_dout.data(), corr.data(), ad.rank, hidden);
        kernels::axpy(ad.alpha, corr.data(), dh.data(), dh.size());
    }
    std::vector<double> dpre(static_cast<std::size_t>(hidden));
    for (int i = 0; i < hidden; ++i) {
        const double hv = tr.h[static_cast<std::size_t>(i)];
        dpre[static_cast<std::size_t>(i)] = dh[static_cast<std::size_t>(i)] * (1.0 - hv * hv);
    }

    // Input layer.
    if (const int g = index.at(i_w1, learner::ParamPart::base); g >= 0)
        kernels::rank1_update(out.grads[static_cast<std::size_t>(g)].v.data(), 1.0, dpre.data(),
                              tr.u.data(), hidden, mlp_in);
    if (const int g = index.at(i_b1, learner::ParamPart::base); g >= 0)
        kernels::axpy(1.0, dpre.data(), out.grads[static_cast<std::size_t>(g)].v.data(),
                      dpre.size());
    if (w1.adapter) {
        const learner::LoraAdapter& ad = *w1.adapter;
        if (const int g = index.at(i_w1, learner::ParamPart::lora_a); g >= 0)
            kernels::rank1_update(out.grads[static_cast<std::size_t>(g)].v.data(), ad.alpha,
                                  dpre.data(), tr.b1u.data(), hidden, ad.rank);
        if (const int g = index.at(i_w1, learner::ParamPart::lora_b); g >= 0) {
            std::vector<double> at_dpre(static_cast<std::size_t>(ad.rank));
            kernels::matvec_t(ad.a.v.data(), dpre.data(), at_dpre.data(), hidden, ad.rank);
            kernels::rank1_update(out.grads[static_cast<std::size_t>(g)].v.data(), ad.alpha,
                                  at_dpre.data(), tr.u.data(), ad.rank, mlp_in);
        }
    }
}

// Denoise loss of one scene under fixed draws; optionally backpropagates
// `weight * dL/dparams` (weight folds in batch averaging and the chosen /
// rejected sign).
double scene_denoise(const world::WorldConfig& cfg, const learner::ParameterSet& params,
                     const learner::NoiseSchedule& ns, std::span<const double> phi,
                     const world::Scene& scene, std::span<const learner::NoiseDraw> draws,
                     double weight, const RefIndex* index, GradientSet* out) {
    const world::SceneVector x0 = world::encode_scene(cfg, scene);
    const double inv_d = 1.0 / static_cast<double>(draws.size());
    double total = 0.0;
    MlpTrace tr;
    std::vector<double> dout(x0.size());
    for (const learner::NoiseDraw& d : draws) {
        const world::SceneVector x_t = learner::forward_noising(ns, x0, d.t, d.eps);
        mlp_forward(params, x_t, d.t, ns.steps, phi, tr);
        double sq = 0.0;
        for (std::size_t i = 0; i < x0.size(); ++i) {
            const double diff = tr.out[i] - d.eps[i];
            sq += diff * diff;
            dout[i] = 2.0 * weight * inv_d * diff;
        }
        total += sq;
        if (out) mlp_backward(params, *index, tr, dout, *out);
    }
    return total * inv_d;
}

double ddpo_batch(const world::WorldConfig& cfg, const learner::ParameterSet& params,
                  const learner::NoiseSchedule& ns,
                  std::span<const pairgen::PreferencePair> pairs,
                  std::span<const std::vector<learner::NoiseDraw>> draws,
                  const TrainingConfig& tcfg, GradientSet* out) {
    if (params.kind != learner::LearnerKind::diffusion)
        throw ConfigError("ddpo loss requires a diffusion learner");
    if (pairs.empty()) throw NumericError("ddpo loss: empty batch");
    if (draws.size() != pairs.size())
        throw ConfigError("ddpo loss: one draw set per pair required");

    std::unique_ptr<RefIndex> index;
    if (out) index = std::make_unique<RefIndex>(*out, params.tensors.size());

    const double inv_n = 1.0 / static_cast<double>(pairs.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const pairgen::PreferencePair& pair = pairs[i];
        if (draws[i].empty()) throw ConfigError("ddpo loss: empty draw set");
        const std::vector<double> phi = learner::condition_features(cfg, pair.prompt, nullptr);
        // Coincident scenes share every forward pass bitwise, so their
        // gradient contributions cancel exactly; skip the accumulation to
        // keep that cancellation exact in floating point as well.
        const bool degenerate = pair.chosen == pair.rejected;

        double dweight = 1.0;  // d loss_i / d diff_i, filled below for sigmoid
        if (tcfg.loss == LossVariant::ddpo_sigmoid) {
            // Need diff first; compute loss-only passes, then weight the
            // gradient passes. Two extra forward sweeps per pair keep the
            // code simple and the batch sizes here are small.
            const double lc = scene_denoise(cfg, params, ns, phi, pair.chosen, draws[i], 0.0,
                                            nullptr, nullptr);
            const double lr = scene_denoise(cfg, params, ns, phi, pair.rejected, draws[i], 0.0,
                                            nullptr, nullptr);
            const double diff = lc - lr;
            loss += inv_n * softplus(tcfg.beta * diff);
            dweight = tcfg.beta * sigmoid(tcfg.beta * diff);
            if (out && !degenerate) {
                scene_denoise(cfg, params, ns, phi, pair.chosen, draws[i], inv_n * dweight,
                              index.get(), out);
                scene_denoise(cfg, params, ns, phi, pair.rejected, draws[i], -inv_n * dweight,
                              index.get(), out);
            }
            continue;
        }

        GradientSet* gout = (out && !degenerate) ? out : nullptr;
        const double lc = scene_denoise(cfg, params, ns, phi, pair.chosen, draws[i],
                                        gout ? inv_n : 0.0, index.get(), gout);
        const double lr = scene_denoise(cfg, params, ns, phi, pair.rejected, draws[i],
                                        gout ? -inv_n : 0.0, index.get(), gout);
        loss += inv_n * (lc - lr);
    }
    return loss;
}

}  // namespace

// ---------------------------------------------------------------------------
// Names and validation.
// ---------------------------------------------------------------------------

const char* to_string(LossVariant v) {
    switch (v) {
        case LossVariant::dpo_as_written: return "dpo_as_written";
        case LossVariant::dpo_referenced: return "dpo_referenced";
        case LossVariant::ddpo_raw: return "ddpo_raw";
        case LossVariant::ddpo_sigmoid: return "ddpo_sigmoid";
    }
    std::abort();
}

const char* to_string(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::sgd: return "sgd";
        case OptimizerKind::adam: return "adam";
    }
    std::abort();
}

std::optional<LossVariant> loss_variant_from_string(const std::string& s) {
    for (LossVariant v : {LossVariant::dpo_as_written, LossVariant::dpo_referenced,
                          LossVariant::ddpo_raw, LossVariant::ddpo_sigmoid})
        if (s == to_string(v)) return v;
    return std::nullopt;
}

std::optional<OptimizerKind> optimizer_from_string(const std::string& s) {
    for (OptimizerKind k : {OptimizerKind::sgd, OptimizerKind::adam})
        if (s == to_string(k)) return k;
    return std::nullopt;
}

void TrainingConfig::validate() const {
    if (beta <= 0.0) throw ConfigError("training.beta must be positive");
    if (learning_rate <= 0.0) throw ConfigError("training.learning_rate must be positive");
    if (batch_size <= 0) throw ConfigError("training.batch_size must be positive");
    if (noise_draws <= 0) throw ConfigError("training.noise_draws must be positive");
    if (adam_beta1 <= 0.0 || adam_beta1 >= 1.0 || adam_beta2 <= 0.0 || adam_beta2 >= 1.0)
        throw ConfigError("training.adam betas must lie in (0, 1)");
    if (adam_eps <= 0.0) throw ConfigError("training.adam_eps must be positive");
    if (loss == LossVariant::ddpo_raw && clip_norm <= 0.0)
        throw ConfigError("ddpo_raw is unbounded below; training.clip_norm must be positive");
}

// ---------------------------------------------------------------------------
// GradientSet.
// ---------------------------------------------------------------------------

double GradientSet::global_norm() const {
    double total = 0.0;
    for (const Tensor& g : grads) total += kernels::sum_squares(g.v.data(), g.v.size());
    return std::sqrt(total);
}

void GradientSet::scale(double s) {
    for (Tensor& g : grads) kernels::scale(s, g.v.data(), g.v.size());
}

GradientSet zero_gradients(const learner::ParameterSet& params, bool lora_only) {
    GradientSet out;
    out.refs = learner::trainable_refs(params, lora_only);
    out.grads.reserve(out.refs.size());
    for (const learner::ParamRef& r : out.refs) {
        const Tensor& t = learner::param_tensor(params, r);
        Tensor g;
        g.rows = t.rows;
        g.cols = t.cols;
        g.v.assign(t.v.size(), 0.0);
        out.grads.push_back(std::move(g));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Public loss entry points.
// ---------------------------------------------------------------------------

LossReport dpo_loss_and_grad(const world::WorldConfig& cfg,
                             const learner::ParameterSet& params,
                             std::span<const pairgen::PreferencePair> pairs,
                             const TrainingConfig& tcfg,
                             const learner::ParameterSet* reference, GradientSet& out) {
    if (tcfg.loss != LossVariant::dpo_as_written && tcfg.loss != LossVariant::dpo_referenced)
        throw ConfigError("dpo_loss_and_grad called with a non-dpo loss variant");
    for (Tensor& g : out.grads) std::fill(g.v.begin(), g.v.end(), 0.0);
    const double loss = dpo_batch(cfg, params, pairs, tcfg, reference, &out);
    return finish_batch(loss, tcfg, out);
}

double dpo_loss_only(const world::WorldConfig& cfg, const learner::ParameterSet& params,
                     std::span<const pairgen::PreferencePair> pairs,
                     const TrainingConfig& tcfg, const learner::ParameterSet* reference) {
    if (tcfg.loss != LossVariant::dpo_as_written && tcfg.loss != LossVariant::dpo_referenced)
        throw ConfigError("dpo_loss_only called with a non-dpo loss variant");
    return dpo_batch(cfg, params, pairs, tcfg, reference, nullptr);
}

std::vector<std::vector<learner::NoiseDraw>> make_pair_draws(const learner::NoiseSchedule& ns,
                                                             int scene_dim, std::size_t n_pairs,
                                                             int draws_per_pair, Rng& rng) {
    std::vector<std::vector<learner::NoiseDraw>> all;
    all.reserve(n_pairs);
    for (std::size_t i = 0; i < n_pairs; ++i) {
        std::vector<learner::NoiseDraw> d;
        d.reserve(static_cast<std::size_t>(draws_per_pair));
        for (int j = 0; j < draws_per_pair; ++j)
            d.push_back(learner::make_noise_draw(ns, scene_dim, rng));
        all.push_back(std::move(d));
    }
    return all;
}

LossReport ddpo_loss_and_grad(const world::WorldConfig& cfg,
                              const learner::ParameterSet& params,
                              const learner::NoiseSchedule& ns,
                              std::span<const pairgen::PreferencePair> pairs,
                              std::span<const std::vector<learner::NoiseDraw>> draws,
                              const TrainingConfig& tcfg, GradientSet& out) {
    if (tcfg.loss != LossVariant::ddpo_raw && tcfg.loss != LossVariant::ddpo_sigmoid)
        throw ConfigError("ddpo_loss_and_grad called with a non-ddpo loss variant");
    for (Tensor& g : out.grads) std::fill(g.v.begin(), g.v.end(), 0.0);
    const double loss = ddpo_batch(cfg, params, ns, pairs, draws, tcfg, &out);
    return finish_batch(loss, tcfg, out);
}

double ddpo_loss_only(const world::WorldConfig& cfg, const learner::ParameterSet& params,
                      const learner::NoiseSchedule& ns,
                      std::span<const pairgen::PreferencePair> pairs,
                      std::span<const std::vector<learner::NoiseDraw>> draws,
                      const TrainingConfig& tcfg) {
    if (tcfg.loss != LossVariant::ddpo_raw && tcfg.loss != LossVariant::ddpo_sigmoid)
        throw ConfigError("ddpo_loss_only called with a non-ddpo loss variant");
    return ddpo_batch(cfg, params, ns, pairs, draws, tcfg, nullptr);
}

// ---------------------------------------------------------------------------
// Optimizers.
// ---------------------------------------------------------------------------

void apply_update(learner::ParameterSet& params, const GradientSet& grads,
                  const TrainingConfig& tcfg, OptimizerState& state) {
    if (grads.refs.empty()) throw ConfigError("apply_update: no trainable tensors");
    if (tcfg.optimizer == OptimizerKind::adam) {
        if (state.m.empty()) {
            state.m.resize(grads.grads.size());
            state.v.resize(grads.grads.size());
            for (std::size_t i = 0; i < grads.grads.size(); ++i) {
                state.m[i].rows = grads.grads[i].rows;
                state.m[i].cols = grads.grads[i].cols;
                state.m[i].v.assign(grads.grads[i].v.size(), 0.0);
                state.v[i] = state.m[i];
            }
        }
        if (state.m.size() != grads.grads.size())
            throw ConfigError("apply_update: optimizer state does not match gradient set");
    }
    state.step += 1;

    for (std::size_t i = 0; i < grads.refs.size(); ++i) {
        Tensor& p = learner::param_tensor_mutable(params, grads.refs[i]);
        const Tensor& g = grads.grads[i];
        if (p.v.size() != g.v.size())
            throw ConfigError("apply_update: gradient shape does not match parameter");
        if (tcfg.optimizer == OptimizerKind::sgd) {
            kernels::axpy(-tcfg.learning_rate, g.v.data(), p.v.data(), p.v.size());
            continue;
        }
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        const double b1 = tcfg.adam_beta1;
        const double b2 = tcfg.adam_beta2;
        const double bias1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
        const double bias2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
        for (std::size_t j = 0; j < p.v.size(); ++j) {
            m.v[j] = b1 * m.v[j] + (1.0 - b1) * g.v[j];
            v.v[j] = b2 * v.v[j] + (1.0 - b2) * g.v[j] * g.v[j];
            const double mh = m.v[j] / bias1;
            const double vh = v.v[j] / bias2;
            p.v[j] -= tcfg.learning_rate * mh / (std::sqrt(vh) + tcfg.adam_eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Gradient checking.
// ---------------------------------------------------------------------------

GradCheckReport grad_check(const LossFn& loss, const GradFn& grad,
                           const learner::ParameterSet& params, bool lora_only, int n_probes,
                           double h, Rng& rng) {
    if (n_probes <= 0) throw ConfigError("grad_check: n_probes must be positive");
    if (h <= 0.0) throw ConfigError("grad_check: step size must be positive");

    const GradientSet analytic = grad(params);
    if (analytic.refs.empty()) throw ConfigError("grad_check: no trainable tensors");
    (void)lora_only;

    GradCheckReport rep;
    rep.probes = n_probes;
    for (int probe = 0; probe < n_probes; ++probe) {
        const std::size_t ri = draw_index(rng, analytic.refs.size());
        const learner::ParamRef ref = analytic.refs[ri];
        const Tensor& shape = analytic.grads[ri];
        const std::size_t ci = draw_index(rng, shape.v.size());

        // Copies share base storage; the nudge below copies-on-write.
        learner::ParameterSet plus = params;
        learner::param_tensor_mutable(plus, ref).v[ci] += h;
        learner::ParameterSet minus = params;
        learner::param_tensor_mutable(minus, ref).v[ci] -= h;

        const double numeric = (loss(plus) - loss(minus)) / (2.0 * h);
        const double a = analytic.grads[ri].v[ci];
        const double rel =
            std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-5);
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_analytic = a;
            rep.worst_numeric = numeric;
            std::ostringstream os;
            os << params.tensors[static_cast<std::size_t>(ref.tensor_index)].name;
            switch (ref.part) {
                case learner::ParamPart::base: break;
                case learner::ParamPart::lora_a: os << ".A"; break;
                case learner::ParamPart::lora_b: os << ".B"; break;
            }
            os << "[" << ci << "]";
            rep.worst_coordinate = os.str();
        }
    }
    return rep;
}

}  // namespace veriloop::trainer
