#include "veriloop/config.hpp"

#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

namespace veriloop::config {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// Collects every problem found while walking the document.
struct Walker {
    std::vector<std::string> errors;

    void fail(const std::string& path, const std::string& what) {
        errors.push_back(path + ": " + what);
    }

    // Returns the sub-object at `key`, or nullptr when absent / not an
    // object (the latter is recorded as an error).
    const json* object(const json& parent, const std::string& path, const std::string& key) {
        const auto it = parent.find(key);
        if (it == parent.end()) return nullptr;
        if (!it->is_object()) {
            fail(path + key, "expected an object");
            return nullptr;
        }
        return &*it;
    }

    void check_keys(const json& obj, const std::string& path,
                    const std::set<std::string>& allowed) {
        for (const auto& [key, value] : obj.items()) {
            (void)value;
            if (!allowed.contains(key)) fail(path + key, "unknown key");
        }
    }

    void get_int(const json& obj, const std::string& path, const std::string& key, int& out) {
        const auto it = obj.find(key);
        if (it == obj.end()) return;
        if (!it->is_number_integer()) {
            fail(path + key, "expected an integer");
            return;
        }
        const std::int64_t v = it->get<std::int64_t>();
        if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
            fail(path + key, "integer out of range");
            return;
        }
        out = static_cast<int>(v);
    }

    void get_uint64(const json& obj, const std::string& path, const std::string& key,
                    std::uint64_t& out) {
        const auto it = obj.find(key);
        if (it == obj.end()) return;
        if (!it->is_number_unsigned() &&
            !(it->is_number_integer() && it->get<std::int64_t>() >= 0)) {
            fail(path + key, "expected a non-negative integer");
            return;
        }
        out = it->get<std::uint64_t>();
    }

    void get_size(const json& obj, const std::string& path, const std::string& key,
                  std::size_t& out) {
        std::uint64_t v = out;
        get_uint64(obj, path, key, v);
        out = static_cast<std::size_t>(v);
    }

    void get_double(const json& obj, const std::string& path, const std::string& key,
                    double& out) {
        const auto it = obj.find(key);
        if (it == obj.end()) return;
        if (!it->is_number()) {
            fail(path + key, "expected a number");
            return;
        }
        out = it->get<double>();
    }

    void get_bool(const json& obj, const std::string& path, const std::string& key, bool& out) {
        const auto it = obj.find(key);
        if (it == obj.end()) return;
        if (!it->is_boolean()) {
            fail(path + key, "expected a boolean");
            return;
        }
        out = it->get<bool>();
    }

    // Enum via a name -> value mapping; lists the accepted names on error.
    template <typename T, typename FromString>
    void get_enum(const json& obj, const std::string& path, const std::string& key, T& out,
                  const FromString& from_string, const std::string& accepted) {
        const auto it = obj.find(key);
        if (it == obj.end()) return;
        if (!it->is_string()) {
            fail(path + key, "expected a string (one of " + accepted + ")");
            return;
        }
        const auto v = from_string(it->get<std::string>());
        if (!v) {
            fail(path + key, "unknown value \"" + it->get<std::string>() + "\" (one of " +
                                 accepted + ")");
            return;
        }
        out = *v;
    }
};

std::optional<learner::LearnerKind> kind_from_string(const std::string& s) {
    if (s == "categorical") return learner::LearnerKind::categorical;
    if (s == "diffusion") return learner::LearnerKind::diffusion;
    return std::nullopt;
}

std::optional<learner::InitKind> init_from_string(const std::string& s) {
    if (s == "zeros") return learner::InitKind::zeros;
    if (s == "prior") return learner::InitKind::prior;
    if (s == "gaussian") return learner::InitKind::gaussian;
    return std::nullopt;
}

const char* to_string(learner::LearnerKind k) {
    return k == learner::LearnerKind::categorical ? "categorical" : "diffusion";
}

const char* to_string(learner::InitKind k) {
    switch (k) {
        case learner::InitKind::zeros: return "zeros";
        case learner::InitKind::prior: return "prior";
        case learner::InitKind::gaussian: return "gaussian";
    }
    std::abort();
}

void parse_world(Walker& w, const json& j, world::WorldConfig& out) {
    w.check_keys(j, "world.", {"grid", "n_objects", "n_colors", "max_entities", "max_count"});
    w.get_int(j, "world.", "grid", out.grid);
    w.get_int(j, "world.", "n_objects", out.n_objects);
    w.get_int(j, "world.", "n_colors", out.n_colors);
    w.get_int(j, "world.", "max_entities", out.max_entities);
    w.get_int(j, "world.", "max_count", out.max_count);
}

void parse_model(Walker& w, const json& j, learner::ModelSpec& model,
                 learner::InitKind& init) {
    w.check_keys(j, "model.",
                 {"kind", "hidden", "lora_rank", "lora_alpha", "diffusion_steps", "beta_min",
                  "beta_max", "init", "init_scale"});
    w.get_enum(j, "model.", "kind", model.kind, kind_from_string, "categorical, diffusion");
    w.get_int(j, "model.", "hidden", model.hidden);
    w.get_int(j, "model.", "lora_rank", model.lora_rank);
    w.get_double(j, "model.", "lora_alpha", model.lora_alpha);
    w.get_int(j, "model.", "diffusion_steps", model.diffusion_steps);
    w.get_double(j, "model.", "beta_min", model.beta_min);
    w.get_double(j, "model.", "beta_max", model.beta_max);
    w.get_enum(j, "model.", "init", init, init_from_string, "zeros, prior, gaussian");
    w.get_double(j, "model.", "init_scale", model.init_scale);
}

void parse_training(Walker& w, const json& j, trainer::TrainingConfig& out) {
    w.check_keys(j, "training.",
                 {"loss", "optimizer", "beta", "learning_rate", "batch_size", "lora_only",
                  "clip_norm", "adam_beta1", "adam_beta2", "adam_eps", "noise_draws"});
    w.get_enum(j, "training.", "loss", out.loss, trainer::loss_variant_from_string,
               "dpo_as_written, dpo_referenced, ddpo_raw, ddpo_sigmoid");
    w.get_enum(j, "training.", "optimizer", out.optimizer, trainer::optimizer_from_string,
               "sgd, adam");
    w.get_double(j, "training.", "beta", out.beta);
    w.get_double(j, "training.", "learning_rate", out.learning_rate);
    w.get_int(j, "training.", "batch_size", out.batch_size);
    w.get_bool(j, "training.", "lora_only", out.lora_only);
    w.get_double(j, "training.", "clip_norm", out.clip_norm);
    w.get_double(j, "training.", "adam_beta1", out.adam_beta1);
    w.get_double(j, "training.", "adam_beta2", out.adam_beta2);
    w.get_double(j, "training.", "adam_eps", out.adam_eps);
    w.get_int(j, "training.", "noise_draws", out.noise_draws);
}

void parse_stream(Walker& w, const json& j, pipeline::StreamConfig& out) {
    w.check_keys(j, "stream.",
                 {"budget", "train_frequency", "burst_steps", "staleness_limit",
                  "queue_capacity", "eval_prompts_per_category", "category_weights"});
    w.get_uint64(j, "stream.", "budget", out.budget);
    w.get_int(j, "stream.", "train_frequency", out.train_frequency);
    w.get_int(j, "stream.", "burst_steps", out.burst_steps);
    w.get_int(j, "stream.", "staleness_limit", out.staleness_limit);
    w.get_size(j, "stream.", "queue_capacity", out.queue_capacity);
    w.get_int(j, "stream.", "eval_prompts_per_category", out.eval_prompts_per_category);

    const auto it = j.find("category_weights");
    if (it == j.end()) return;
    if (!it->is_object()) {
        w.fail("stream.category_weights", "expected an object of category -> weight");
        return;
    }
    out.mix.weights.fill(0.0);
    for (const auto& [key, value] : it->items()) {
        const auto cat = world::category_from_string(key);
        if (!cat) {
            w.fail("stream.category_weights." + key, "unknown category");
            continue;
        }
        if (!value.is_number()) {
            w.fail("stream.category_weights." + key, "expected a number");
            continue;
        }
        out.mix.weights[static_cast<std::size_t>(*cat)] = value.get<double>();
    }
}

void parse_federated(Walker& w, const json& j, FederatedParams& out) {
    w.check_keys(j, "federated.",
                 {"clients", "rounds", "prompts_per_round", "identical_streams"});
    w.get_int(j, "federated.", "clients", out.clients);
    w.get_int(j, "federated.", "rounds", out.rounds);
    w.get_uint64(j, "federated.", "prompts_per_round", out.prompts_per_round);
    w.get_bool(j, "federated.", "identical_streams", out.identical_streams);
}

}  // namespace

federated::FedConfig RunConfig::fed_config() const {
    federated::FedConfig fed;
    fed.stream = stream;
    fed.stream.budget = federated.prompts_per_round;
    fed.clients = federated.clients;
    fed.rounds = federated.rounds;
    fed.identical_streams = federated.identical_streams;
    return fed;
}

RunConfig default_config() { return RunConfig{}; }

RunConfig parse_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config: top level must be an object");

    RunConfig cfg;
    Walker w;
    w.check_keys(doc, "",
                 {"seed", "world", "model", "training", "trajectory", "pairs", "replay",
                  "stream", "federated"});
    w.get_uint64(doc, "", "seed", cfg.seed);
    if (const json* j = w.object(doc, "", "world")) parse_world(w, *j, cfg.stream.world);
    if (const json* j = w.object(doc, "", "model"))
        parse_model(w, *j, cfg.stream.model, cfg.stream.init);
    if (const json* j = w.object(doc, "", "training")) parse_training(w, *j, cfg.stream.training);
    if (const json* j = w.object(doc, "", "trajectory")) {
        w.check_keys(*j, "trajectory.", {"max_steps", "tau"});
        w.get_int(*j, "trajectory.", "max_steps", cfg.stream.trajectory.max_steps);
        w.get_double(*j, "trajectory.", "tau", cfg.stream.trajectory.tau);
    }
    if (const json* j = w.object(doc, "", "pairs")) {
        w.check_keys(*j, "pairs.", {"min_margin", "intermediate_chosen"});
        w.get_double(*j, "pairs.", "min_margin", cfg.stream.pair_opts.min_margin);
        w.get_bool(*j, "pairs.", "intermediate_chosen",
                   cfg.stream.pair_opts.intermediate_chosen);
    }
    if (const json* j = w.object(doc, "", "replay")) {
        w.check_keys(*j, "replay.", {"capacity"});
        w.get_size(*j, "replay.", "capacity", cfg.stream.replay_capacity);
    }
    if (const json* j = w.object(doc, "", "stream")) parse_stream(w, *j, cfg.stream);
    if (const json* j = w.object(doc, "", "federated")) parse_federated(w, *j, cfg.federated);

    if (w.errors.empty()) {
        // Structural checks pass; append semantic validation problems.
        try {
            cfg.stream.validate();
        } catch (const ConfigError& e) {
            w.errors.push_back(e.what());
        }
        if (cfg.federated.clients < 1) w.errors.push_back("federated.clients must be >= 1");
        if (cfg.federated.rounds < 1) w.errors.push_back("federated.rounds must be >= 1");
        if (cfg.federated.prompts_per_round < 1)
            w.errors.push_back("federated.prompts_per_round must be >= 1");
    }
    if (!w.errors.empty()) {
        std::string msg = "config: " + std::to_string(w.errors.size()) + " problem(s)";
        for (const std::string& e : w.errors) msg += "\n  - " + e;
        throw ConfigError(msg);
    }
    return cfg;
}

RunConfig load_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_json(ss.str());
}

std::string to_json(const RunConfig& cfg) {
    ordered_json j;
    j["seed"] = cfg.seed;
    j["world"] = {{"grid", cfg.stream.world.grid},
                  {"n_objects", cfg.stream.world.n_objects},
                  {"n_colors", cfg.stream.world.n_colors},
                  {"max_entities", cfg.stream.world.max_entities},
                  {"max_count", cfg.stream.world.max_count}};
    j["model"] = {{"kind", to_string(cfg.stream.model.kind)},
                  {"hidden", cfg.stream.model.hidden},
                  {"lora_rank", cfg.stream.model.lora_rank},
                  {"lora_alpha", cfg.stream.model.lora_alpha},
                  {"diffusion_steps", cfg.stream.model.diffusion_steps},
                  {"beta_min", cfg.stream.model.beta_min},
                  {"beta_max", cfg.stream.model.beta_max},
                  {"init", to_string(cfg.stream.init)},
                  {"init_scale", cfg.stream.model.init_scale}};
    j["training"] = {{"loss", trainer::to_string(cfg.stream.training.loss)},
                     {"optimizer", trainer::to_string(cfg.stream.training.optimizer)},
                     {"beta", cfg.stream.training.beta},
                     {"learning_rate", cfg.stream.training.learning_rate},
                     {"batch_size", cfg.stream.training.batch_size},
                     {"lora_only", cfg.stream.training.lora_only},
                     {"clip_norm", cfg.stream.training.clip_norm},
                     {"adam_beta1", cfg.stream.training.adam_beta1},
                     {"adam_beta2", cfg.stream.training.adam_beta2},
                     {"adam_eps", cfg.stream.training.adam_eps},
                     {"noise_draws", cfg.stream.training.noise_draws}};
    j["trajectory"] = {{"max_steps", cfg.stream.trajectory.max_steps},
                       {"tau", cfg.stream.trajectory.tau}};
    j["pairs"] = {{"min_margin", cfg.stream.pair_opts.min_margin},
                  {"intermediate_chosen", cfg.stream.pair_opts.intermediate_chosen}};
    j["replay"] = {{"capacity", cfg.stream.replay_capacity}};
    ordered_json weights;
    for (int c = 0; c < world::kNumCategories; ++c)
        weights[world::to_string(static_cast<world::Category>(c))] =
            cfg.stream.mix.weights[static_cast<std::size_t>(c)];
    j["stream"] = {{"budget", cfg.stream.budget},
                   {"train_frequency", cfg.stream.train_frequency},
                   {"burst_steps", cfg.stream.burst_steps},
                   {"staleness_limit", cfg.stream.staleness_limit},
                   {"queue_capacity", cfg.stream.queue_capacity},
                   {"eval_prompts_per_category", cfg.stream.eval_prompts_per_category},
                   {"category_weights", weights}};
    j["federated"] = {{"clients", cfg.federated.clients},
                      {"rounds", cfg.federated.rounds},
                      {"prompts_per_round", cfg.federated.prompts_per_round},
                      {"identical_streams", cfg.federated.identical_streams}};
    return j.dump(2) + "\n";
}

}  // namespace veriloop::config
