// veriloop — continual verify-refine training over a synthetic scene world.
//
// Subcommands:
//   stream     run the centralized training loop (sync or async)
//   federated  run multi-client adapter training with exact aggregation
//   gradcheck  finite-difference audit of the analytic gradients
//   report     re-derive and check the bookkeeping of a finished run
//
// Exit codes: 0 success, 1 failed checks or runtime errors, 2 usage/config
// errors.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "veriloop/config.hpp"
#include "veriloop/federated.hpp"
#include "veriloop/pipeline.hpp"
#include "veriloop/trainer.hpp"

namespace fs = std::filesystem;
using namespace veriloop;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("short write to " + path.string());
}

// The run directory must be fresh: absent, or an existing empty directory.
fs::path prepare_out_dir(const std::string& out) {
    fs::path dir(out);
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) throw ConfigError("--out: " + out + " is not a directory");
        if (!fs::is_empty(dir)) throw ConfigError("--out: " + out + " is not empty");
    } else {
        fs::create_directories(dir);
    }
    return dir;
}

std::array<std::uint64_t, world::kNumCategories> per_category_admitted(
    const pipeline::MetricsLog& metrics) {
    std::array<std::uint64_t, world::kNumCategories> out{};
    for (const pipeline::PromptRecord& r : metrics.prompts())
        out[static_cast<std::size_t>(r.category)] += static_cast<std::uint64_t>(r.admitted);
    return out;
}

std::string summary_csv(const pipeline::EvalReport& baseline,
                        const pipeline::EvalReport& final_eval,
                        const std::array<std::uint64_t, world::kNumCategories>& pairs) {
    std::string csv = "category,baseline_rate,trained_rate,delta,pairs_admitted\n";
    for (int c = 0; c < world::kNumCategories; ++c) {
        const std::size_t i = static_cast<std::size_t>(c);
        const double delta = final_eval.pass_rate[i] - baseline.pass_rate[i];
        csv += std::string(world::to_string(static_cast<world::Category>(c))) + "," +
               std::to_string(baseline.pass_rate[i]) + "," +
               std::to_string(final_eval.pass_rate[i]) + "," + std::to_string(delta) + "," +
               std::to_string(pairs[i]) + "\n";
    }
    csv += "overall," + std::to_string(baseline.overall) + "," +
           std::to_string(final_eval.overall) + "," +
           std::to_string(final_eval.overall - baseline.overall) + ",\n";
    return csv;
}

void print_eval_table(const pipeline::EvalReport& baseline,
                      const pipeline::EvalReport& final_eval) {
    std::printf("%-14s %9s %9s %9s\n", "category", "baseline", "trained", "delta");
    for (int c = 0; c < world::kNumCategories; ++c) {
        const std::size_t i = static_cast<std::size_t>(c);
        std::printf("%-14s %9.3f %9.3f %+9.3f\n",
                    world::to_string(static_cast<world::Category>(c)), baseline.pass_rate[i],
                    final_eval.pass_rate[i], final_eval.pass_rate[i] - baseline.pass_rate[i]);
    }
    std::printf("%-14s %9.3f %9.3f %+9.3f\n", "overall", baseline.overall, final_eval.overall,
                final_eval.overall - baseline.overall);
}

json staleness_json(const pipeline::StalenessEvent& e) {
    json j;
    j["used_version"] = e.used_version;
    j["latest_version"] = e.latest_version;
    j["lag"] = e.latest_version - e.used_version;
    return j;
}

// ---------------------------------------------------------------------------
// stream
// ---------------------------------------------------------------------------

int cmd_stream(const config::RunConfig& cfg, const std::string& out, const std::string& mode) {
    const fs::path dir = prepare_out_dir(out);
    const pipeline::RunResult res = mode == "async"
                                        ? pipeline::run_stream_async(cfg.stream, cfg.seed)
                                        : pipeline::run_stream_sync(cfg.stream, cfg.seed);

    write_text(dir / "config.json", config::to_json(cfg));
    write_text(dir / "metrics.jsonl", res.metrics.to_jsonl());
    write_text(dir / "train_steps.jsonl", res.metrics.train_steps_jsonl());
    write_text(dir / "summary.csv",
               summary_csv(res.baseline, res.final_eval, per_category_admitted(res.metrics)));
    learner::save_checkpoint(res.params, (dir / "checkpoint.bin").string());
    if (mode == "async") {
        std::string lines;
        for (const pipeline::StalenessEvent& e : res.staleness)
            lines += staleness_json(e).dump() + "\n";
        write_text(dir / "staleness.jsonl", lines);
    }

    print_eval_table(res.baseline, res.final_eval);
    const pipeline::PairEconomy& e = res.economy;
    std::printf(
        "prompts %llu | skipped %llu, pair-yielding %llu, exhausted %llu | raw %llu -> "
        "kept %llu (margin-filtered %llu), admitted %llu\n",
        static_cast<unsigned long long>(e.total), static_cast<unsigned long long>(e.skipped),
        static_cast<unsigned long long>(e.pair_yielding),
        static_cast<unsigned long long>(e.exhausted),
        static_cast<unsigned long long>(e.raw_pairs),
        static_cast<unsigned long long>(e.extracted),
        static_cast<unsigned long long>(e.margin_filtered),
        static_cast<unsigned long long>(e.admitted));
    if (!e.consistent()) {
        std::fprintf(stderr, "error: pair bookkeeping identities violated\n");
        return kExitFailure;
    }
    std::printf("run written to %s\n", dir.string().c_str());
    return kExitOk;
}

// ---------------------------------------------------------------------------
// federated
// ---------------------------------------------------------------------------

int cmd_federated(const config::RunConfig& cfg, const std::string& out) {
    const fs::path dir = prepare_out_dir(out);
    const federated::FedResult res = federated::run_federation(cfg.fed_config(), cfg.seed);

    write_text(dir / "config.json", config::to_json(cfg));
    std::string rounds;
    for (const federated::RoundRecord& r : res.rounds) {
        json j;
        j["round"] = r.round;
        j["overall_rate"] = r.eval.overall;
        json rates;
        for (int c = 0; c < world::kNumCategories; ++c)
            rates[world::to_string(static_cast<world::Category>(c))] =
                r.eval.pass_rate[static_cast<std::size_t>(c)];
        j["pass_rate"] = rates;
        j["client_admitted"] = r.client_admitted;
        j["client_versions"] = r.client_versions;
        rounds += j.dump() + "\n";
    }
    write_text(dir / "rounds.jsonl", rounds);
    learner::save_checkpoint(res.params, (dir / "checkpoint.bin").string());

    std::array<std::uint64_t, world::kNumCategories> pairs{};
    for (std::size_t i = 0; i < res.client_metrics.size(); ++i) {
        write_text(dir / ("metrics_client" + std::to_string(i) + ".jsonl"),
                   res.client_metrics[i].to_jsonl());
        const auto client = per_category_admitted(res.client_metrics[i]);
        for (std::size_t c = 0; c < client.size(); ++c) pairs[c] += client[c];
    }
    write_text(dir / "summary.csv", summary_csv(res.baseline, res.final_eval, pairs));

    print_eval_table(res.baseline, res.final_eval);
    for (const pipeline::MetricsLog& m : res.client_metrics)
        if (!m.economy().consistent()) {
            std::fprintf(stderr, "error: client pair bookkeeping identities violated\n");
            return kExitFailure;
        }
    std::printf("run written to %s\n", dir.string().c_str());
    return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

world::WorldConfig toy_world() {
    world::WorldConfig w;
    w.grid = 3;
    w.n_objects = 2;
    w.n_colors = 2;
    w.max_entities = 2;
    w.max_count = 2;
    return w;
}

std::vector<pairgen::PreferencePair> toy_pairs(const world::WorldConfig& w, int n, Rng& rng) {
    std::vector<pairgen::PreferencePair> pairs;
    const int vocab = world::slot_vocab_size(w);
    for (int i = 0; i < n; ++i) {
        const auto cat = static_cast<world::Category>(draw_index(rng, world::kNumCategories));
        pairgen::PreferencePair p;
        p.prompt = world::gen_prompt(w, cat, static_cast<std::uint64_t>(i), rng);
        std::vector<int> chosen, rejected;
        for (int s = 0; s < w.max_entities; ++s) {
            chosen.push_back(static_cast<int>(draw_index(rng, static_cast<std::size_t>(vocab))));
            rejected.push_back(
                static_cast<int>(draw_index(rng, static_cast<std::size_t>(vocab))));
        }
        p.chosen = world::tokens_to_scene(w, chosen);
        p.rejected = world::tokens_to_scene(w, rejected);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

struct GradCheckCase {
    std::string name;
    trainer::GradCheckReport report;
};

// Finite-difference audit over every loss variant on small learners.
// `inject_bug` flips the sign of one gradient tensor, which a working
// checker must flag.
std::vector<GradCheckCase> run_gradchecks(int probes, std::uint64_t seed, bool inject_bug) {
    const world::WorldConfig w = toy_world();
    std::vector<GradCheckCase> out;

    const auto wrap_grad = [&](trainer::GradFn inner) {
        return [inner, inject_bug](const learner::ParameterSet& p) {
            trainer::GradientSet g = inner(p);
            if (inject_bug)
                for (double& v : g.grads.front().v) v = -v;
            return g;
        };
    };

    Rng rng = make_rng(mix_seed(seed, stream_tag::init));
    const std::vector<pairgen::PreferencePair> pairs = toy_pairs(w, 8, rng);

    for (const bool lora : {true, false}) {
        for (const trainer::LossVariant variant :
             {trainer::LossVariant::dpo_as_written, trainer::LossVariant::dpo_referenced}) {
            learner::ModelSpec spec;
            spec.kind = learner::LearnerKind::categorical;
            spec.lora_rank = lora ? 2 : 0;
            Rng init_rng = make_rng(mix_seed(seed, stream_tag::init, 1));
            const learner::ParameterSet params =
                learner::make_params(w, spec, learner::InitKind::gaussian, init_rng);
            Rng ref_rng = make_rng(mix_seed(seed, stream_tag::init, 2));
            const learner::ParameterSet reference =
                learner::make_params(w, spec, learner::InitKind::gaussian, ref_rng);

            trainer::TrainingConfig tcfg;
            tcfg.loss = variant;
            tcfg.lora_only = lora;
            tcfg.clip_norm = 0.0;  // clipping would rescale the analytic side only
            const auto loss = [&, tcfg](const learner::ParameterSet& p) {
                return trainer::dpo_loss_only(w, p, pairs, tcfg, &reference);
            };
            const auto grad = wrap_grad([&, tcfg](const learner::ParameterSet& p) {
                trainer::GradientSet g = trainer::zero_gradients(p, tcfg.lora_only);
                trainer::dpo_loss_and_grad(w, p, pairs, tcfg, &reference, g);
                return g;
            });
            Rng probe_rng = make_rng(mix_seed(seed, stream_tag::eval, out.size()));
            GradCheckCase c;
            c.name = std::string(trainer::to_string(variant)) + (lora ? "/lora" : "/full");
            c.report =
                trainer::grad_check(loss, grad, params, tcfg.lora_only, probes, 1e-5, probe_rng);
            out.push_back(std::move(c));
        }

        for (const trainer::LossVariant variant :
             {trainer::LossVariant::ddpo_raw, trainer::LossVariant::ddpo_sigmoid}) {
            learner::ModelSpec spec;
            spec.kind = learner::LearnerKind::diffusion;
            spec.hidden = 16;
            spec.diffusion_steps = 5;
            spec.lora_rank = lora ? 2 : 0;
            Rng init_rng = make_rng(mix_seed(seed, stream_tag::init, 3));
            const learner::ParameterSet params =
                learner::make_params(w, spec, learner::InitKind::gaussian, init_rng);
            const learner::NoiseSchedule ns =
                learner::make_schedule(spec.diffusion_steps, spec.beta_min, spec.beta_max);

            trainer::TrainingConfig tcfg;
            tcfg.loss = variant;
            tcfg.lora_only = lora;
            tcfg.clip_norm = 0.0;
            tcfg.noise_draws = 3;
            Rng draw_rng = make_rng(mix_seed(seed, stream_tag::noise, out.size()));
            const auto draws = trainer::make_pair_draws(ns, world::scene_vector_dim(w),
                                                        pairs.size(), tcfg.noise_draws,
                                                        draw_rng);
            const auto loss = [&, tcfg](const learner::ParameterSet& p) {
                return trainer::ddpo_loss_only(w, p, ns, pairs, draws, tcfg);
            };
            const auto grad = wrap_grad([&, tcfg](const learner::ParameterSet& p) {
                trainer::GradientSet g = trainer::zero_gradients(p, tcfg.lora_only);
                trainer::ddpo_loss_and_grad(w, p, ns, pairs, draws, tcfg, g);
                return g;
            });
            Rng probe_rng = make_rng(mix_seed(seed, stream_tag::eval, out.size()));
            GradCheckCase c;
            c.name = std::string(trainer::to_string(variant)) + (lora ? "/lora" : "/full");
            c.report =
                trainer::grad_check(loss, grad, params, tcfg.lora_only, probes, 1e-5, probe_rng);
            out.push_back(std::move(c));
        }
    }
    return out;
}

int cmd_gradcheck(int probes, std::uint64_t seed, bool inject_bug) {
    constexpr double kTol = 1e-4;
    const std::vector<GradCheckCase> cases = run_gradchecks(probes, seed, inject_bug);
    bool any_breach = false;
    for (const GradCheckCase& c : cases) {
        const bool breach = c.report.max_rel_err > kTol;
        any_breach = any_breach || breach;
        std::printf("%-24s probes %4d  max rel err %.3e  worst %s (analytic %.6e, numeric "
                    "%.6e)  %s\n",
                    c.name.c_str(), c.report.probes, c.report.max_rel_err,
                    c.report.worst_coordinate.c_str(), c.report.worst_analytic,
                    c.report.worst_numeric, breach ? "FAIL" : "ok");
    }
    if (inject_bug) {
        // Negative control: the audit must catch the sign flip.
        if (any_breach) {
            std::printf("injected bug detected\n");
            return kExitOk;
        }
        std::fprintf(stderr, "error: injected gradient bug went undetected\n");
        return kExitFailure;
    }
    return any_breach ? kExitFailure : kExitOk;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

int cmd_report(const std::string& run_dir) {
    const fs::path path = fs::path(run_dir) / "metrics.jsonl";
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("report: cannot open " + path.string());

    pipeline::PairEconomy e;
    std::array<std::uint64_t, world::kNumCategories> admitted{};
    std::uint64_t train_steps = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        const std::string record = j.at("record").get<std::string>();
        if (record == "train_step") {
            ++train_steps;
            continue;
        }
        if (record != "prompt") throw IoError("report: unknown record kind " + record);
        e.total += 1;
        const std::string outcome = j.at("outcome").get<std::string>();
        if (outcome == "skipped_initial_pass")
            e.skipped += 1;
        else if (outcome == "pair_yielding")
            e.pair_yielding += 1;
        else if (outcome == "exhausted")
            e.exhausted += 1;
        else
            throw IoError("report: unknown outcome " + outcome);
        e.raw_pairs += j.at("raw_pairs").get<std::uint64_t>();
        e.margin_filtered += j.at("margin_filtered").get<std::uint64_t>();
        e.extracted += j.at("extracted").get<std::uint64_t>();
        e.admitted += j.at("admitted").get<std::uint64_t>();
        e.progress_rejected +=
            j.at("extracted").get<std::uint64_t>() - j.at("admitted").get<std::uint64_t>();
        const auto cat = world::category_from_string(j.at("category").get<std::string>());
        if (!cat) throw IoError("report: unknown category in record");
        admitted[static_cast<std::size_t>(*cat)] += j.at("admitted").get<std::uint64_t>();
    }

    std::printf("prompts: %llu (skipped %llu, pair-yielding %llu, exhausted %llu)\n",
                static_cast<unsigned long long>(e.total),
                static_cast<unsigned long long>(e.skipped),
                static_cast<unsigned long long>(e.pair_yielding),
                static_cast<unsigned long long>(e.exhausted));
    std::printf("pairs: raw %llu = margin-filtered %llu + kept %llu; kept = admitted %llu + "
                "progress-rejected %llu\n",
                static_cast<unsigned long long>(e.raw_pairs),
                static_cast<unsigned long long>(e.margin_filtered),
                static_cast<unsigned long long>(e.extracted),
                static_cast<unsigned long long>(e.admitted),
                static_cast<unsigned long long>(e.progress_rejected));
    std::printf("train steps: %llu\n", static_cast<unsigned long long>(train_steps));
    std::printf("%-14s %s\n", "category", "pairs_admitted");
    for (int c = 0; c < world::kNumCategories; ++c)
        std::printf("%-14s %llu\n", world::to_string(static_cast<world::Category>(c)),
                    static_cast<unsigned long long>(admitted[static_cast<std::size_t>(c)]));

    if (!e.consistent()) {
        std::fprintf(stderr, "error: pair bookkeeping identities violated\n");
        return kExitFailure;
    }
    std::printf("bookkeeping identities hold\n");
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"continual verify-refine training over a synthetic scene world"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::string mode = "sync";
    std::string run_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::uint64_t budget = 0;
    bool budget_set = false;
    int probes = 200;
    bool inject_bug = false;

    CLI::App* stream = app.add_subcommand("stream", "run the centralized training loop");
    stream->add_option("--config", config_path, "JSON config file");
    stream->add_option("--out", out_dir, "output directory (must be new or empty)")
        ->required();
    stream->add_option("--mode", mode, "sync (bit-reproducible) or async (bounded staleness)")
        ->check(CLI::IsMember({"sync", "async"}));
    stream->add_option("--seed", seed, "override config seed")
        ->each([&](const std::string&) { seed_set = true; });
    stream->add_option("--budget", budget, "override stream.budget")
        ->each([&](const std::string&) { budget_set = true; });

    CLI::App* fed = app.add_subcommand("federated", "run federated adapter training");
    fed->add_option("--config", config_path, "JSON config file");
    fed->add_option("--out", out_dir, "output directory (must be new or empty)")->required();
    fed->add_option("--seed", seed, "override config seed")
        ->each([&](const std::string&) { seed_set = true; });

    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    gc->add_option("--probes", probes, "probed coordinates per loss variant")
        ->check(CLI::PositiveNumber);
    gc->add_option("--seed", seed, "probe rng seed")
        ->each([&](const std::string&) { seed_set = true; });
    gc->add_flag("--inject-bug", inject_bug,
                 "negative control: flip one gradient tensor's sign; succeeds only if the "
                 "audit catches it");

    CLI::App* report = app.add_subcommand("report", "check the bookkeeping of a finished run");
    report->add_option("--run", run_dir, "run directory containing metrics.jsonl")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints help/error text
        return kExitUsage;
    }

    try {
        config::RunConfig cfg =
            config_path.empty() ? config::default_config() : config::load_file(config_path);
        if (seed_set) cfg.seed = seed;
        if (budget_set) cfg.stream.budget = budget;

        if (stream->parsed()) return cmd_stream(cfg, out_dir, mode);
        if (fed->parsed()) return cmd_federated(cfg, out_dir);
        if (gc->parsed()) return cmd_gradcheck(probes, seed_set ? seed : 7, inject_bug);
        if (report->parsed()) return cmd_report(run_dir);
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitFailure;
    }
}
