#include "veriloop/learner.hpp"

#include <cstdio>
#include <fstream>

#include "veriloop/kernels.hpp"

namespace veriloop::learner {

void ModelSpec::validate() const {
    if (hidden < 1) throw ConfigError("learner.hidden: must be >= 1");
    if (lora_rank < 0) throw ConfigError("learner.lora_rank: must be >= 0");
    if (lora_alpha <= 0.0) throw ConfigError("learner.lora_alpha: must be > 0");
    if (diffusion_steps < 1) throw ConfigError("learner.diffusion_steps: must be >= 1");
    if (beta_min <= 0.0 || beta_min >= 1.0)
        throw ConfigError("learner.beta_min: must lie in (0, 1)");
    if (beta_max <= 0.0 || beta_max >= 1.0)
        throw ConfigError("learner.beta_max: must lie in (0, 1)");
    if (beta_max < beta_min) throw ConfigError("learner.beta_max: must be >= learner.beta_min");
    if (init_scale <= 0.0) throw ConfigError("learner.init_scale: must be > 0");
}

Dims dims_of(const world::WorldConfig& cfg, const ModelSpec& spec) {
    Dims d;
    d.prompt_dim = world::prompt_vector_dim(cfg);
    d.critique_dim = verifier::kCritiqueFeatureDim;
    d.feature_dim = d.prompt_dim + d.critique_dim + 1;
    d.n_slots = cfg.max_entities;
    d.slot_vocab = world::slot_vocab_size(cfg);
    d.scene_dim = world::scene_vector_dim(cfg);
    d.mlp_in = d.scene_dim + 1 + d.feature_dim;
    (void)spec;
    return d;
}

std::vector<double> condition_features(const world::WorldConfig& cfg,
                                       const world::PromptSpec& prompt,
                                       const verifier::Critique* critique_or_null) {
    std::vector<double> f = world::encode_prompt(cfg, prompt);
    const std::vector<double> c = verifier::critique_features(critique_or_null);
    f.insert(f.end(), c.begin(), c.end());
    f.push_back(1.0);  // constant feature; biases live in the weight matrices
    return f;
}

// ---------------------------------------------------------------------------
// Parameters.
// ---------------------------------------------------------------------------

const TensorEntry& ParameterSet::find(const std::string& name) const {
    for (const TensorEntry& t : tensors)
        if (t.name == name) return t;
    throw NumericError("ParameterSet: no tensor named " + name);
}

TensorEntry& ParameterSet::find(const std::string& name) {
    for (TensorEntry& t : tensors)
        if (t.name == name) return t;
    throw NumericError("ParameterSet: no tensor named " + name);
}

Tensor& mutable_base(TensorEntry& entry) {
    if (!entry.base) throw NumericError("ParameterSet: tensor has no storage");
    if (entry.base.use_count() > 1) entry.base = std::make_shared<Tensor>(*entry.base);
    // The only owner may drop const: storage is shared immutably, owned here.
    return const_cast<Tensor&>(*entry.base);
}

namespace {

std::shared_ptr<Tensor> gaussian_tensor(int rows, int cols, double scale, Rng& rng) {
    auto t = std::make_shared<Tensor>(rows, cols);
    for (double& v : t->v) v = scale * draw_normal(rng);
    return t;
}

std::optional<LoraAdapter> make_adapter(const ModelSpec& spec, int rows, int cols, Rng& rng) {
    if (spec.lora_rank == 0) return std::nullopt;
    LoraAdapter a;
    a.rank = spec.lora_rank;
    a.alpha = spec.lora_alpha;
    a.a = Tensor(rows, spec.lora_rank);
    for (double& v : a.a.v) v = spec.init_scale * draw_normal(rng);
    a.b = Tensor(spec.lora_rank, cols);  // zero: adapters start as the identity delta
    return a;
}

// Weak compositional prior for the categorical learner. Chosen so that an
// untrained policy usually satisfies single-object prompts, sometimes
// satisfies compositional ones, and leaves plenty of headroom on counting
// and second-object placement — which is where training should show up.
constexpr double kPriorObjectFirst = 5.0;   // first-mentioned object
constexpr double kPriorObjectSecond = 3.5;  // second object is often dropped
constexpr double kPriorColor = 2.2;         // requested colors only sometimes stick
constexpr double kPriorCountRamp = 1.0;     // per-slot pull toward the requested size

void fill_categorical_prior(const world::WorldConfig& cfg, const Dims& dims, int slot,
                            Tensor& w) {
    const int bias_col = dims.feature_dim - 1;
    const int per_object = (cfg.n_colors + 1) * cfg.grid * cfg.grid;
    // Empty-token bias balancing the first object's total mass, so that
    // roughly half the slots stay empty whatever the grid size.
    const double empty_bias =
        std::log(static_cast<double>(per_object)) + kPriorObjectFirst;
    w.at(0, bias_col) = empty_bias;
    // Scenes are encoded in canonical order, so a scene with n entities fills
    // slots 0..n-1 and leaves the rest empty. Ramp the empty token with the
    // slot index so the flip happens at the requested total: the first
    // entity's count column carries the ramp, a second entity's count column
    // shifts the threshold up by its own count.
    for (int k = 1; k <= cfg.max_count; ++k) {
        w.at(0, world::prompt_feature_count_col(cfg, 0, k)) =
            kPriorCountRamp * (static_cast<double>(slot) - static_cast<double>(k) + 0.5);
        w.at(0, world::prompt_feature_count_col(cfg, 1, k)) =
            -kPriorCountRamp * static_cast<double>(k);
    }
    for (int e = 0; e < 2; ++e) {
        const double w_obj = e == 0 ? kPriorObjectFirst : kPriorObjectSecond;
        for (int o = 0; o < cfg.n_objects; ++o) {
            const int col = world::prompt_feature_object_col(cfg, e, o);
            const int first = 1 + o * per_object;
            for (int t = first; t < first + per_object; ++t) w.at(t, col) = w_obj;
        }
        for (int c = 0; c < cfg.n_colors; ++c) {
            const int col = world::prompt_feature_color_col(cfg, e, c);
            for (int o = 0; o < cfg.n_objects; ++o) {
                const int first = 1 + o * per_object + (c + 1) * cfg.grid * cfg.grid;
                for (int t = first; t < first + cfg.grid * cfg.grid; ++t) w.at(t, col) = kPriorColor;
            }
        }
    }
}

}  // namespace

ParameterSet make_params(const world::WorldConfig& cfg, const ModelSpec& spec, InitKind init,
                         Rng& rng) {
    cfg.validate();
    spec.validate();
    const Dims dims = dims_of(cfg, spec);
    const bool lora = spec.lora_rank > 0;
    ParameterSet p;
    p.kind = spec.kind;

    auto base_tensor = [&](int rows, int cols, int slot) {
        if (init == InitKind::gaussian) return gaussian_tensor(rows, cols, spec.init_scale, rng);
        auto t = std::make_shared<Tensor>(rows, cols);
        if (slot >= 0 && init == InitKind::prior) fill_categorical_prior(cfg, dims, slot, *t);
        return t;
    };

    if (spec.kind == LearnerKind::categorical) {
        for (int s = 0; s < dims.n_slots; ++s) {
            TensorEntry e;
            e.name = "head" + std::to_string(s);
            e.base = base_tensor(dims.slot_vocab, dims.feature_dim, s);
            e.frozen = lora;
            e.adapter = make_adapter(spec, dims.slot_vocab, dims.feature_dim, rng);
            p.tensors.push_back(std::move(e));
        }
    } else {
        if (init == InitKind::prior)
            throw ConfigError("learner.init: prior init applies to the categorical learner");
        TensorEntry w1;
        w1.name = "w1";
        w1.base = base_tensor(spec.hidden, dims.mlp_in, -1);
        w1.frozen = lora;
        w1.adapter = make_adapter(spec, spec.hidden, dims.mlp_in, rng);
        p.tensors.push_back(std::move(w1));

        TensorEntry b1;
        b1.name = "b1";
        b1.base = base_tensor(1, spec.hidden, -1);
        b1.frozen = lora;  // biases carry no adapters: frozen in lora-only mode
        p.tensors.push_back(std::move(b1));

        TensorEntry w2;
        w2.name = "w2";
        w2.base = base_tensor(dims.scene_dim, spec.hidden, -1);
        w2.frozen = lora;
        w2.adapter = make_adapter(spec, dims.scene_dim, spec.hidden, rng);
        p.tensors.push_back(std::move(w2));

        TensorEntry b2;
        b2.name = "b2";
        b2.base = base_tensor(1, dims.scene_dim, -1);
        b2.frozen = lora;
        p.tensors.push_back(std::move(b2));
    }
    return p;
}

Tensor effective_weight(const TensorEntry& entry) {
    Tensor out = *entry.base;
    if (entry.adapter && entry.adapter->rank > 0) {
        const LoraAdapter& ad = *entry.adapter;
        Tensor delta(out.rows, out.cols);
        kernels::matmul(ad.a.data(), ad.b.data(), delta.data(), out.rows, ad.rank, out.cols);
        kernels::axpy(ad.alpha, delta.data(), out.data(), out.size());
    }
    return out;
}

std::size_t trainable_count(const ParameterSet& params, bool lora_only) {
    std::size_t n = 0;
    for (const TensorEntry& t : params.tensors) {
        if (lora_only) {
            if (t.adapter)
                n += static_cast<std::size_t>(t.adapter->rank) *
                     (static_cast<std::size_t>(t.base->rows) +
                      static_cast<std::size_t>(t.base->cols));
        } else {
            if (!t.frozen) n += t.base->size();
        }
    }
    return n;
}

std::vector<ParamRef> trainable_refs(const ParameterSet& params, bool lora_only) {
    std::vector<ParamRef> refs;
    for (int i = 0; i < static_cast<int>(params.tensors.size()); ++i) {
        const TensorEntry& t = params.tensors[static_cast<std::size_t>(i)];
        if (lora_only) {
            if (t.adapter) {
                refs.push_back({i, ParamPart::lora_a});
                refs.push_back({i, ParamPart::lora_b});
            }
        } else {
            if (!t.frozen) refs.push_back({i, ParamPart::base});
        }
    }
    if (refs.empty()) throw NumericError("trainable_refs: nothing to train in this mode");
    return refs;
}

const Tensor& param_tensor(const ParameterSet& params, const ParamRef& ref) {
    const TensorEntry& t = params.tensors[static_cast<std::size_t>(ref.tensor_index)];
    switch (ref.part) {
        case ParamPart::base: return *t.base;
        case ParamPart::lora_a: return t.adapter->a;
        case ParamPart::lora_b: return t.adapter->b;
    }
    throw NumericError("param_tensor: bad part");
}

Tensor& param_tensor_mutable(ParameterSet& params, const ParamRef& ref) {
    TensorEntry& t = params.tensors[static_cast<std::size_t>(ref.tensor_index)];
    switch (ref.part) {
        case ParamPart::base: return mutable_base(t);
        case ParamPart::lora_a: return t.adapter->a;
        case ParamPart::lora_b: return t.adapter->b;
    }
    throw NumericError("param_tensor: bad part");
}

// ---------------------------------------------------------------------------
// Categorical learner.
// ---------------------------------------------------------------------------

void slot_logits(const world::WorldConfig& cfg, const ParameterSet& params, int slot,
                 std::span<const double> features, std::vector<double>& out) {
    if (params.kind != LearnerKind::categorical)
        throw NumericError("slot_logits: categorical learner required");
    const TensorEntry& head = params.tensors[static_cast<std::size_t>(slot)];
    const Tensor& w = *head.base;
    if (static_cast<int>(features.size()) != w.cols)
        throw NumericError("slot_logits: feature width mismatch");
    out.resize(static_cast<std::size_t>(w.rows));
    kernels::matvec(w.data(), features.data(), out.data(), w.rows, w.cols);
    if (head.adapter && head.adapter->rank > 0) {
        const LoraAdapter& ad = *head.adapter;
        std::vector<double> t(static_cast<std::size_t>(ad.rank));
        kernels::matvec(ad.b.data(), features.data(), t.data(), ad.rank, w.cols);
        std::vector<double> at(static_cast<std::size_t>(w.rows));
        kernels::matvec(ad.a.data(), t.data(), at.data(), w.rows, ad.rank);
        kernels::axpy(ad.alpha, at.data(), out.data(), out.size());
    }
    (void)cfg;
}

namespace {

// log(sum_j exp(l_j)) with the usual max shift.
double log_sum_exp(const std::vector<double>& l) {
    double mx = l[0];
    for (double v : l) mx = std::max(mx, v);
    double acc = 0.0;
    for (double v : l) acc += std::exp(v - mx);
    return mx + std::log(acc);
}

int sample_softmax(const std::vector<double>& logits, Rng& rng) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double total = 0.0;
    for (double v : logits) total += std::exp(v - mx);
    const double threshold = draw_uniform(rng) * total;
    double cum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        cum += std::exp(logits[i] - mx);
        if (cum > threshold) return static_cast<int>(i);
    }
    return static_cast<int>(logits.size()) - 1;
}

}  // namespace

double log_likelihood(const world::WorldConfig& cfg, const ParameterSet& params,
                      const world::PromptSpec& prompt, const world::Scene& scene,
                      const verifier::Critique* critique_or_null) {
    const std::vector<double> features = condition_features(cfg, prompt, critique_or_null);
    const std::vector<int> tokens = world::scene_to_tokens(cfg, scene);
    double ll = 0.0;
    std::vector<double> logits;
    for (int s = 0; s < cfg.max_entities; ++s) {
        slot_logits(cfg, params, s, features, logits);
        ll += logits[static_cast<std::size_t>(tokens[static_cast<std::size_t>(s)])] -
              log_sum_exp(logits);
    }
    return ll;
}

// ---------------------------------------------------------------------------
// Diffusion learner.
// ---------------------------------------------------------------------------

double NoiseSchedule::beta_at(int t) const {
    if (t < 1 || t > steps) throw NumericError("NoiseSchedule: t out of range");
    return beta[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_at(int t) const {
    if (t < 1 || t > steps) throw NumericError("NoiseSchedule: t out of range");
    return alpha[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar_at(int t) const {
    if (t == 0) return 1.0;
    if (t < 1 || t > steps) throw NumericError("NoiseSchedule: t out of range");
    return alpha_bar[static_cast<std::size_t>(t - 1)];
}

NoiseSchedule make_schedule(int steps, double beta_min, double beta_max) {
    if (steps < 1) throw ConfigError("noise schedule: steps must be >= 1");
    if (beta_min <= 0.0 || beta_max >= 1.0 || beta_max < beta_min)
        throw ConfigError("noise schedule: need 0 < beta_min <= beta_max < 1");
    NoiseSchedule ns;
    ns.steps = steps;
    ns.beta.resize(static_cast<std::size_t>(steps));
    ns.alpha.resize(static_cast<std::size_t>(steps));
    ns.alpha_bar.resize(static_cast<std::size_t>(steps));
    double prod = 1.0;
    for (int t = 1; t <= steps; ++t) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
        const double b = beta_min + (beta_max - beta_min) * frac;
        ns.beta[static_cast<std::size_t>(t - 1)] = b;
        ns.alpha[static_cast<std::size_t>(t - 1)] = 1.0 - b;
        prod *= 1.0 - b;
        ns.alpha_bar[static_cast<std::size_t>(t - 1)] = prod;
    }
    return ns;
}

NoiseDraw make_noise_draw(const NoiseSchedule& ns, int scene_dim, Rng& rng) {
    NoiseDraw d;
    d.t = 1 + static_cast<int>(draw_index(rng, static_cast<std::size_t>(ns.steps)));
    d.eps.resize(static_cast<std::size_t>(scene_dim));
    for (double& v : d.eps) v = draw_normal(rng);
    return d;
}

world::SceneVector forward_noising(const NoiseSchedule& ns, const world::SceneVector& x0,
                                   int t, std::span<const double> eps) {
    if (t == 0) return x0;
    if (eps.size() != x0.size()) throw NumericError("forward_noising: eps dimension mismatch");
    const double a = std::sqrt(ns.alpha_bar_at(t));
    const double s = std::sqrt(1.0 - ns.alpha_bar_at(t));
    world::SceneVector x(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) x[i] = a * x0[i] + s * eps[i];
    return x;
}

namespace {

// Effective matvec y = (W + alpha A B) x without materializing the sum.
void entry_matvec(const TensorEntry& e, std::span<const double> x, std::vector<double>& y) {
    const Tensor& w = *e.base;
    y.resize(static_cast<std::size_t>(w.rows));
    kernels::matvec(w.data(), x.data(), y.data(), w.rows, w.cols);
    if (e.adapter && e.adapter->rank > 0) {
        const LoraAdapter& ad = *e.adapter;
        std::vector<double> t(static_cast<std::size_t>(ad.rank));
        kernels::matvec(ad.b.data(), x.data(), t.data(), ad.rank, w.cols);
        std::vector<double> at(static_cast<std::size_t>(w.rows));
        kernels::matvec(ad.a.data(), t.data(), at.data(), w.rows, ad.rank);
        kernels::axpy(ad.alpha, at.data(), y.data(), y.size());
    }
}

}  // namespace

std::vector<double> eps_predict(const ParameterSet& params, std::span<const double> x_t, int t,
                                int steps, std::span<const double> features) {
    if (params.kind != LearnerKind::diffusion)
        throw NumericError("eps_predict: diffusion learner required");
    const TensorEntry& w1 = params.find("w1");
    const TensorEntry& b1 = params.find("b1");
    const TensorEntry& w2 = params.find("w2");
    const TensorEntry& b2 = params.find("b2");

    std::vector<double> u;
    u.reserve(x_t.size() + 1 + features.size());
    u.insert(u.end(), x_t.begin(), x_t.end());
    u.push_back(static_cast<double>(t) / static_cast<double>(steps));
    u.insert(u.end(), features.begin(), features.end());
    if (static_cast<int>(u.size()) != w1.base->cols)
        throw NumericError("eps_predict: input width mismatch");

    std::vector<double> h;
    entry_matvec(w1, u, h);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = std::tanh(h[i] + b1.base->v[i]);

    std::vector<double> out;
    entry_matvec(w2, h, out);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b2.base->v[i];
    return out;
}

double denoise_loss(const world::WorldConfig& cfg, const ParameterSet& params,
                    const NoiseSchedule& ns, const world::PromptSpec& prompt,
                    const world::Scene& scene, std::span<const NoiseDraw> draws) {
    const std::vector<double> features = condition_features(cfg, prompt, nullptr);
    const world::SceneVector x0 = world::encode_scene(cfg, scene);
    return denoise_loss_with(
        ns,
        [&](const world::SceneVector& x_t, int t) {
            return eps_predict(params, x_t, t, ns.steps, features);
        },
        x0, draws);
}

world::SceneVector sample_reverse(const world::WorldConfig& cfg, const ParameterSet& params,
                                  const NoiseSchedule& ns, const world::PromptSpec& prompt,
                                  const verifier::Critique* critique_or_null, Rng& rng) {
    const std::vector<double> features = condition_features(cfg, prompt, critique_or_null);
    return sample_reverse_with(
        ns,
        [&](const world::SceneVector& x_t, int t) {
            return eps_predict(params, x_t, t, ns.steps, features);
        },
        world::scene_vector_dim(cfg), rng);
}

// ---------------------------------------------------------------------------
// Generation.
// ---------------------------------------------------------------------------

world::Scene generate(const world::WorldConfig& cfg, const ModelSpec& spec,
                      const ParameterSet& params, const world::PromptSpec& prompt,
                      const verifier::Critique* critique_or_null, Rng& rng) {
    if (spec.kind != params.kind) throw NumericError("generate: spec/params kind mismatch");
    if (spec.kind == LearnerKind::categorical) {
        const std::vector<double> features = condition_features(cfg, prompt, critique_or_null);
        std::vector<int> tokens(static_cast<std::size_t>(cfg.max_entities), 0);
        std::vector<double> logits;
        for (int s = 0; s < cfg.max_entities; ++s) {
            slot_logits(cfg, params, s, features, logits);
            tokens[static_cast<std::size_t>(s)] = sample_softmax(logits, rng);
        }
        return world::tokens_to_scene(cfg, tokens);
    }
    const NoiseSchedule ns = make_schedule(spec.diffusion_steps, spec.beta_min, spec.beta_max);
    const world::SceneVector v = sample_reverse(cfg, params, ns, prompt, critique_or_null, rng);
    return world::decode_vector(cfg, v);
}

// ---------------------------------------------------------------------------
// Checkpoints.
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'V', 'L', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void put(std::vector<std::uint8_t>& out, const T& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

void put_doubles(std::vector<std::uint8_t>& out, const std::vector<double>& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
    out.insert(out.end(), p, p + v.size() * sizeof(double));
}

struct Reader {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;

    template <typename T>
    T get() {
        if (pos + sizeof(T) > bytes.size()) throw IoError("checkpoint: truncated header");
        T v;
        std::memcpy(&v, bytes.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }

    void get_doubles(std::vector<double>& v, std::size_t n) {
        if (pos + n * sizeof(double) > bytes.size())
            throw IoError("checkpoint: truncated payload");
        v.resize(n);
        std::memcpy(v.data(), bytes.data() + pos, n * sizeof(double));
        pos += n * sizeof(double);
    }
};

}  // namespace

std::vector<std::uint8_t> serialize_params(const ParameterSet& params) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + sizeof kMagic);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.kind));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.tensors.size()));
    for (const TensorEntry& t : params.tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.base->rows));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.base->cols));
        put<std::uint8_t>(out, t.frozen ? 1 : 0);
        put<std::uint8_t>(out, t.adapter ? 1 : 0);
        put<std::uint32_t>(out, t.adapter ? static_cast<std::uint32_t>(t.adapter->rank) : 0u);
        put<double>(out, t.adapter ? t.adapter->alpha : 1.0);
    }
    for (const TensorEntry& t : params.tensors) {
        put_doubles(out, t.base->v);
        if (t.adapter) {
            put_doubles(out, t.adapter->a.v);
            put_doubles(out, t.adapter->b.v);
        }
    }
    return out;
}

ParameterSet deserialize_params(std::span<const std::uint8_t> bytes) {
    Reader r{bytes};
    if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
        throw IoError("checkpoint: bad magic");
    r.pos = sizeof kMagic;
    ParameterSet p;
    const auto kind = r.get<std::uint32_t>();
    if (kind > 1) throw IoError("checkpoint: unknown learner kind");
    p.kind = static_cast<LearnerKind>(kind);
    const auto n = r.get<std::uint32_t>();
    struct Meta {
        std::string name;
        int rows, cols, rank;
        bool frozen, has_adapter;
        double alpha;
    };
    std::vector<Meta> metas;
    for (std::uint32_t i = 0; i < n; ++i) {
        Meta m;
        const auto len = r.get<std::uint32_t>();
        if (r.pos + len > bytes.size()) throw IoError("checkpoint: truncated name");
        m.name.assign(reinterpret_cast<const char*>(bytes.data() + r.pos), len);
        r.pos += len;
        m.rows = static_cast<int>(r.get<std::uint32_t>());
        m.cols = static_cast<int>(r.get<std::uint32_t>());
        m.frozen = r.get<std::uint8_t>() != 0;
        m.has_adapter = r.get<std::uint8_t>() != 0;
        m.rank = static_cast<int>(r.get<std::uint32_t>());
        m.alpha = r.get<double>();
        metas.push_back(std::move(m));
    }
    for (const Meta& m : metas) {
        TensorEntry e;
        e.name = m.name;
        auto base = std::make_shared<Tensor>(m.rows, m.cols);
        r.get_doubles(base->v, static_cast<std::size_t>(m.rows) * m.cols);
        e.base = std::move(base);
        e.frozen = m.frozen;
        if (m.has_adapter) {
            LoraAdapter a;
            a.rank = m.rank;
            a.alpha = m.alpha;
            a.a = Tensor(m.rows, m.rank);
            r.get_doubles(a.a.v, static_cast<std::size_t>(m.rows) * m.rank);
            a.b = Tensor(m.rank, m.cols);
            r.get_doubles(a.b.v, static_cast<std::size_t>(m.rank) * m.cols);
            e.adapter = std::move(a);
        }
        p.tensors.push_back(std::move(e));
    }
    if (r.pos != bytes.size()) throw IoError("checkpoint: trailing bytes");
    return p;
}

void save_checkpoint(const ParameterSet& params, const std::string& path) {
    const std::vector<std::uint8_t> bytes = serialize_params(params);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("checkpoint: write failed for " + path);
}

ParameterSet load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return deserialize_params(bytes);
}

}  // namespace veriloop::learner
