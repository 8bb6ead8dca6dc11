// End-to-end checks of the command-line tool: exit codes, output files,
// reproducibility of the deterministic artifacts, and the report/gradcheck
// subcommands. Runs the installed binary (argv[1]) through std::system.

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "veriloop/learner.hpp"

namespace fs = std::filesystem;

namespace {

std::string g_cli;
fs::path g_tmp;
int g_checks = 0;
int g_failures = 0;

void check(bool ok, const std::string& what) {
    ++g_checks;
    if (!ok) {
        ++g_failures;
        std::fprintf(stderr, "FAIL: %s\n", what.c_str());
    }
}

int run_cmd(const std::string& args, const fs::path& capture) {
    const std::string cmd =
        "\"" + g_cli + "\" " + args + " > \"" + capture.string() + "\" 2>&1";
    const int rc = std::system(cmd.c_str());
    if (rc == -1) return -1;
    if (WIFEXITED(rc)) return WEXITSTATUS(rc);
    return -2;
}

int run_cmd(const std::string& args) { return run_cmd(args, g_tmp / "last_output.txt"); }

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return {};
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool contains(const std::string& hay, const std::string& needle) {
    return hay.find(needle) != std::string::npos;
}

std::size_t count_lines(const std::string& text) {
    std::size_t n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

std::size_t count_occurrences(const std::string& hay, const std::string& needle) {
    std::size_t n = 0;
    for (std::size_t pos = hay.find(needle); pos != std::string::npos;
         pos = hay.find(needle, pos + needle.size()))
        ++n;
    return n;
}

const char* kToyConfig = R"({
    "seed": 3,
    "world": {"grid": 3, "n_objects": 2, "n_colors": 2,
              "max_entities": 2, "max_count": 2},
    "model": {"lora_rank": 2},
    "training": {"batch_size": 4},
    "replay": {"capacity": 32},
    "stream": {"budget": 24, "train_frequency": 8, "burst_steps": 2,
               "staleness_limit": 2, "queue_capacity": 8,
               "eval_prompts_per_category": 4},
    "federated": {"clients": 2, "rounds": 2, "prompts_per_round": 8}
})";

void usage_errors() {
    check(run_cmd("") == 2, "no subcommand exits 2");
    check(run_cmd("stream") == 2, "stream without --out exits 2");
    check(run_cmd("frobnicate") == 2, "unknown subcommand exits 2");

    const fs::path occupied = g_tmp / "occupied";
    fs::create_directories(occupied);
    std::ofstream(occupied / "junk.txt") << "x";
    check(run_cmd("stream --out \"" + occupied.string() + "\"") == 2,
          "non-empty --out exits 2");

    const fs::path bad_cfg = g_tmp / "bad.json";
    std::ofstream(bad_cfg) << "{";
    check(run_cmd("stream --config \"" + bad_cfg.string() + "\" --out \"" +
                  (g_tmp / "never").string() + "\"") == 2,
          "invalid config exits 2");
    check(!fs::exists(g_tmp / "never"), "no output directory on config error");

    const fs::path cfg_err = g_tmp / "cfg_err_output.txt";
    const int rc = run_cmd("stream --config \"" + bad_cfg.string() + "\" --out \"" +
                               (g_tmp / "never2").string() + "\"",
                           cfg_err);
    check(rc == 2, "invalid config exits 2 (captured)");
    check(contains(read_file(cfg_err), "invalid JSON"), "config error names the problem");

    check(run_cmd("stream --out \"" + (g_tmp / "never3").string() + "\" --mode turbo") == 2,
          "unknown --mode exits 2");
    check(run_cmd("report --run \"" + (g_tmp / "no_such_run").string() + "\"") == 1,
          "report on a missing run exits 1");
    check(run_cmd("gradcheck --probes 0") == 2, "non-positive probe count exits 2");
}

void gradcheck_cmd() {
    const fs::path out = g_tmp / "gradcheck_output.txt";
    check(run_cmd("gradcheck --probes 10 --seed 3", out) == 0, "gradcheck passes");
    const std::string text = read_file(out);
    check(count_occurrences(text, "ok") >= 8, "gradcheck reports every variant");
    check(!contains(text, "FAIL"), "gradcheck reports no breaches");

    const fs::path bug = g_tmp / "gradcheck_bug_output.txt";
    check(run_cmd("gradcheck --probes 10 --seed 3 --inject-bug", bug) == 0,
          "injected-bug control exits 0 when caught");
    check(contains(read_file(bug), "injected bug detected"),
          "injected-bug control reports the catch");
}

void stream_sync_runs() {
    const fs::path cfg = g_tmp / "toy.json";
    std::ofstream(cfg) << kToyConfig;

    const fs::path run_a = g_tmp / "run_a";
    const fs::path run_b = g_tmp / "run_b";
    const fs::path out_a = g_tmp / "stream_a_output.txt";
    check(run_cmd("stream --config \"" + cfg.string() + "\" --out \"" + run_a.string() + "\"",
                  out_a) == 0,
          "sync stream run exits 0");
    check(run_cmd("stream --config \"" + cfg.string() + "\" --out \"" + run_b.string() +
                  "\"") == 0,
          "second sync stream run exits 0");

    for (const char* name :
         {"config.json", "metrics.jsonl", "train_steps.jsonl", "summary.csv",
          "checkpoint.bin"})
        check(fs::exists(run_a / name), std::string("run dir contains ") + name);
    check(!fs::exists(run_a / "staleness.jsonl"), "sync run writes no staleness log");

    // Deterministic artifacts are byte-identical across identical runs.
    for (const char* name : {"config.json", "metrics.jsonl", "summary.csv", "checkpoint.bin"}) {
        check(read_file(run_a / name) == read_file(run_b / name),
              std::string("sync reruns reproduce ") + name);
        check(!read_file(run_a / name).empty(), std::string(name) + " is non-empty");
    }

    const std::string metrics = read_file(run_a / "metrics.jsonl");
    check(count_occurrences(metrics, "\"record\":\"prompt\"") == 24,
          "one prompt record per budgeted prompt");
    check(count_occurrences(metrics, "\"record\":\"train_step\"") > 0,
          "training ran during the stream");

    const std::string summary = read_file(run_a / "summary.csv");
    check(contains(summary, "category,baseline_rate,trained_rate,delta,pairs_admitted"),
          "summary carries the expected header");
    check(contains(summary, "overall,"), "summary carries the overall row");

    const std::string text = read_file(out_a);
    check(contains(text, "run written to"), "stream prints the run location");
    check(contains(text, "overall"), "stream prints the eval table");

    // The checkpoint loads back as a parameter set with trainable adapters.
    const veriloop::learner::ParameterSet params =
        veriloop::learner::load_checkpoint((run_a / "checkpoint.bin").string());
    check(!params.tensors.empty(), "checkpoint loads");
    check(!veriloop::learner::trainable_refs(params, true).empty(),
          "checkpoint keeps trainable adapters");

    const fs::path report_out = g_tmp / "report_output.txt";
    check(run_cmd("report --run \"" + run_a.string() + "\"", report_out) == 0,
          "report exits 0 on a clean run");
    check(contains(read_file(report_out), "bookkeeping identities hold"),
          "report confirms the identities");
}

void stream_async_run() {
    const fs::path cfg = g_tmp / "toy_async.json";
    std::ofstream(cfg) << kToyConfig;
    const fs::path run = g_tmp / "run_async";
    check(run_cmd("stream --config \"" + cfg.string() + "\" --out \"" + run.string() +
                  "\" --mode async") == 0,
          "async stream run exits 0");
    check(fs::exists(run / "staleness.jsonl"), "async run writes the staleness log");

    const std::string lines = read_file(run / "staleness.jsonl");
    check(count_lines(lines) >= 24, "at least one staleness event per prompt");
    std::istringstream in(lines);
    bool lags_ok = true;
    for (std::string line; std::getline(in, line);) {
        const auto j = nlohmann::json::parse(line);
        const std::uint64_t used = j.at("used_version").get<std::uint64_t>();
        const std::uint64_t latest = j.at("latest_version").get<std::uint64_t>();
        const std::uint64_t lag = j.at("lag").get<std::uint64_t>();
        if (latest < used || lag != latest - used || lag > 2) lags_ok = false;
    }
    check(lags_ok, "every staleness event respects the limit");

    const std::string metrics = read_file(run / "metrics.jsonl");
    check(count_occurrences(metrics, "\"record\":\"prompt\"") == 24,
          "async run absorbs the full budget");

    const fs::path report_out = g_tmp / "report_async_output.txt";
    check(run_cmd("report --run \"" + run.string() + "\"", report_out) == 0,
          "report exits 0 on the async run");
    check(contains(read_file(report_out), "bookkeeping identities hold"),
          "async bookkeeping holds");
}

void federated_run() {
    const fs::path cfg = g_tmp / "toy_fed.json";
    std::ofstream(cfg) << kToyConfig;
    const fs::path run = g_tmp / "run_fed";
    check(run_cmd("federated --config \"" + cfg.string() + "\" --out \"" + run.string() +
                  "\"") == 0,
          "federated run exits 0");
    for (const char* name : {"config.json", "rounds.jsonl", "metrics_client0.jsonl",
                             "metrics_client1.jsonl", "summary.csv", "checkpoint.bin"})
        check(fs::exists(run / name), std::string("federated run contains ") + name);
    check(count_lines(read_file(run / "rounds.jsonl")) == 2, "one round record per round");
    check(count_occurrences(read_file(run / "metrics_client0.jsonl"),
                            "\"record\":\"prompt\"") == 16,
          "client log covers rounds x prompts_per_round");
}

void override_flags() {
    const fs::path cfg = g_tmp / "toy_override.json";
    std::ofstream(cfg) << kToyConfig;
    const fs::path run = g_tmp / "run_override";
    check(run_cmd("stream --config \"" + cfg.string() + "\" --out \"" + run.string() +
                  "\" --seed 5 --budget 16") == 0,
          "run with overrides exits 0");
    const std::string written = read_file(run / "config.json");
    check(contains(written, "\"seed\": 5"), "--seed lands in the resolved config");
    check(contains(written, "\"budget\": 16"), "--budget lands in the resolved config");
    check(count_occurrences(read_file(run / "metrics.jsonl"), "\"record\":\"prompt\"") == 16,
          "--budget controls the prompt count");
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: test_cli <path-to-veriloop-binary>\n");
        return 1;
    }
    g_cli = argv[1];
    if (!fs::exists(g_cli)) {
        std::fprintf(stderr, "no such binary: %s\n", g_cli.c_str());
        return 1;
    }

    std::string tmpl = (fs::temp_directory_path() / "veriloop_cli_XXXXXX").string();
    if (!mkdtemp(tmpl.data())) {
        std::fprintf(stderr, "cannot create temp dir\n");
        return 1;
    }
    g_tmp = tmpl;

    usage_errors();
    gradcheck_cmd();
    stream_sync_runs();
    stream_async_run();
    federated_run();
    override_flags();

    fs::remove_all(g_tmp);
    std::printf("test_cli: %d checks, %d failures\n", g_checks, g_failures);
    return g_failures == 0 ? 0 : 1;
}
