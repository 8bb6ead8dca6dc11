#include "veriloop/federated.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <map>
#include <utility>

namespace veriloop::federated {

// ---------------------------------------------------------------------------
// Error-free float transforms.
// ---------------------------------------------------------------------------

TwoSum two_sum(double a, double b) {
    // Knuth's branch-free TwoSum: s + e == a + b exactly.
    const double s = a + b;
    const double bp = s - a;
    const double e = (a - (s - bp)) + (b - bp);
    return TwoSum{s, e};
}

ExactDelta exact_delta(double pre, double post) {
    const TwoSum t = two_sum(post, -pre);
    return ExactDelta{t.s, t.e};
}

double reconstruct(double pre, const ExactDelta& d) {
    // pre + value == t.s + t.e exactly, so the true post equals
    // t.s + (t.e + residual) as reals. The remaining rounding error is of
    // second order (an ulp of an ulp), far below the half-ulp needed to
    // round t.s + r anywhere but the representable post.
    const TwoSum t = two_sum(pre, d.value);
    const double r = t.e + d.residual;
    return t.s + r;
}

double tree_sum(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    std::vector<double> level(xs.begin(), xs.end());
    while (level.size() > 1) {
        std::size_t out = 0;
        for (std::size_t i = 0; i + 1 < level.size(); i += 2)
            level[out++] = level[i] + level[i + 1];
        if (level.size() % 2 == 1) level[out++] = level.back();
        level.resize(out);
    }
    return level.front();
}

void canonical_sort(std::span<double> xs) {
    std::sort(xs.begin(), xs.end(), [](double a, double b) {
        if (a != b) return a < b;
        return std::bit_cast<std::uint64_t>(a) < std::bit_cast<std::uint64_t>(b);
    });
}

// ---------------------------------------------------------------------------
// Deltas.
// ---------------------------------------------------------------------------

std::vector<Tensor> snapshot_trainable(const learner::ParameterSet& params, bool lora_only) {
    std::vector<Tensor> out;
    for (const learner::ParamRef& ref : learner::trainable_refs(params, lora_only))
        out.push_back(learner::param_tensor(params, ref));
    return out;
}

AdapterDelta make_delta(int client_id, const learner::ParameterSet& post, bool lora_only,
                        std::span<const Tensor> pre_trainable) {
    const std::vector<learner::ParamRef> refs = learner::trainable_refs(post, lora_only);
    if (refs.size() != pre_trainable.size())
        throw ConfigError("make_delta: pre snapshot does not match the trainable set");
    AdapterDelta delta;
    delta.client_id = client_id;
    for (std::size_t k = 0; k < refs.size(); ++k) {
        const Tensor& post_t = learner::param_tensor(post, refs[k]);
        const Tensor& pre_t = pre_trainable[k];
        if (post_t.rows != pre_t.rows || post_t.cols != pre_t.cols)
            throw ConfigError("make_delta: tensor shape changed during the round");
        DeltaTensor dt;
        dt.name = post.tensors[static_cast<std::size_t>(refs[k].tensor_index)].name;
        dt.part = refs[k].part;
        dt.rows = post_t.rows;
        dt.cols = post_t.cols;
        dt.value.resize(post_t.v.size());
        dt.residual.resize(post_t.v.size());
        for (std::size_t j = 0; j < post_t.v.size(); ++j) {
            const ExactDelta d = exact_delta(pre_t.v[j], post_t.v[j]);
            dt.value[j] = d.value;
            dt.residual[j] = d.residual;
        }
        delta.tensors.push_back(std::move(dt));
    }
    return delta;
}

learner::ParameterSet aggregate(const learner::ParameterSet& global, bool lora_only,
                                std::span<const AdapterDelta> deltas) {
    if (deltas.empty()) throw ConfigError("aggregate: no client deltas");
    learner::ParameterSet out = global;
    const std::vector<learner::ParamRef> refs = learner::trainable_refs(out, lora_only);

    // Per-client lookup keyed by (tensor name, part); every client must
    // upload exactly the coordinator's trainable set.
    using Key = std::pair<std::string, int>;
    std::vector<std::map<Key, const DeltaTensor*>> lookup(deltas.size());
    for (std::size_t m = 0; m < deltas.size(); ++m) {
        for (const DeltaTensor& dt : deltas[m].tensors)
            lookup[m][Key{dt.name, static_cast<int>(dt.part)}] = &dt;
        if (lookup[m].size() != refs.size())
            throw ConfigError("aggregate: client delta does not match the trainable set");
    }

    const double inv_m = 1.0 / static_cast<double>(deltas.size());
    std::vector<double> posts(deltas.size());
    for (const learner::ParamRef& ref : refs) {
        Tensor& t = learner::param_tensor_mutable(out, ref);
        const std::string& name =
            out.tensors[static_cast<std::size_t>(ref.tensor_index)].name;
        const Key key{name, static_cast<int>(ref.part)};
        std::vector<const DeltaTensor*> per_client(deltas.size());
        for (std::size_t m = 0; m < deltas.size(); ++m) {
            const auto it = lookup[m].find(key);
            if (it == lookup[m].end())
                throw ConfigError("aggregate: client delta missing tensor " + name);
            if (it->second->rows != t.rows || it->second->cols != t.cols)
                throw ConfigError("aggregate: client delta shape mismatch for " + name);
            per_client[m] = it->second;
        }
        for (std::size_t j = 0; j < t.v.size(); ++j) {
            for (std::size_t m = 0; m < deltas.size(); ++m)
                posts[m] = reconstruct(
                    t.v[j], ExactDelta{per_client[m]->value[j], per_client[m]->residual[j]});
            canonical_sort(posts);
            t.v[j] = tree_sum(posts) * inv_m;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Federation driver.
// ---------------------------------------------------------------------------

void FedConfig::validate() const {
    stream.validate();
    if (clients < 1) throw ConfigError("federated.clients must be >= 1");
    if (rounds < 1) throw ConfigError("federated.rounds must be >= 1");
}

AdapterDelta client_round(pipeline::StreamSession& session, int client_id,
                          const learner::ParameterSet& broadcast, std::uint64_t prompts) {
    session.reset_params(broadcast, session.version());
    const std::vector<Tensor> pre =
        snapshot_trainable(session.params(), session.config().training.lora_only);
    for (std::uint64_t p = 0; p < prompts; ++p) pipeline::step_stream(session);
    return make_delta(client_id, session.params(), session.config().training.lora_only, pre);
}

FedResult run_federation(const FedConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng init_rng = make_rng(mix_seed(seed, stream_tag::init));
    learner::ParameterSet global =
        learner::make_params(cfg.stream.world, cfg.stream.model, cfg.stream.init, init_rng);

    FedResult res;
    res.baseline = pipeline::evaluate_policy(cfg.stream, global, seed, 0);

    std::vector<pipeline::StreamSession> sessions;
    sessions.reserve(static_cast<std::size_t>(cfg.clients));
    for (int i = 0; i < cfg.clients; ++i) {
        const std::uint64_t key =
            cfg.identical_streams ? 0 : static_cast<std::uint64_t>(i);
        sessions.emplace_back(cfg.stream, seed, key, global);
    }

    for (int r = 0; r < cfg.rounds; ++r) {
        std::vector<AdapterDelta> deltas;
        deltas.reserve(sessions.size());
        for (int i = 0; i < cfg.clients; ++i)
            deltas.push_back(client_round(sessions[static_cast<std::size_t>(i)], i, global,
                                          cfg.stream.budget));
        global = aggregate(global, cfg.stream.training.lora_only, deltas);

        RoundRecord rec;
        rec.round = r;
        // Benchmark with a salt outside the baseline/final range so round
        // probes never reuse the paired evaluation streams.
        rec.eval = pipeline::evaluate_policy(cfg.stream, global, seed,
                                             1000 + static_cast<std::uint64_t>(r));
        for (const pipeline::StreamSession& s : sessions) {
            rec.client_admitted.push_back(s.buffer().stats().admitted);
            rec.client_versions.push_back(s.version());
        }
        res.rounds.push_back(std::move(rec));
    }

    res.final_eval = pipeline::evaluate_policy(cfg.stream, global, seed, 0);
    res.params = std::move(global);
    for (pipeline::StreamSession& s : sessions) res.client_metrics.push_back(s.metrics());
    return res;
}

}  // namespace veriloop::federated
