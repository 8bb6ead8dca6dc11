#pragma once
// Federated adapter training with exact aggregation.
//
// Clients run the same stream engine locally and upload only adapter deltas.
// Every delta coordinate is a two-term floating-point expansion (value +
// residual) of post - pre, so the coordinator reconstructs each client's
// post-training value bitwise and averages the reconstructed values with a
// canonically ordered pairwise tree. Consequences, each covered by tests:
//
//   * aggregation is invariant under any permutation of the client deltas;
//   * a single-client federation reproduces the uninterrupted centralized
//     run bitwise;
//   * clients with identical streams aggregate to their common result
//     bitwise (power-of-two client counts scale exactly).
//
// Domain assumption: parameter coordinates never flip between +0.0 and -0.0
// across a round. An arithmetic delta cannot encode that transition, and the
// optimizer updates cannot produce a negative zero.

#include <span>
#include <string>
#include <vector>

#include "veriloop/pipeline.hpp"

namespace veriloop::federated {

// ---------------------------------------------------------------------------
// Error-free float transforms.
// ---------------------------------------------------------------------------

struct TwoSum {
    double s = 0.0;  // fl(a + b)
    double e = 0.0;  // exact error: a + b == s + e
};

TwoSum two_sum(double a, double b);

// value + residual == post - pre exactly (as reals).
struct ExactDelta {
    double value = 0.0;
    double residual = 0.0;
};

ExactDelta exact_delta(double pre, double post);

// Returns `post` bitwise for deltas produced by exact_delta(pre, post).
double reconstruct(double pre, const ExactDelta& d);

// Deterministic pairwise tree reduction in the given order.
double tree_sum(std::span<const double> xs);

// Canonical order: ascending by value, ties broken by bit pattern.
void canonical_sort(std::span<double> xs);

// ---------------------------------------------------------------------------
// Deltas.
// ---------------------------------------------------------------------------

struct DeltaTensor {
    std::string name;
    learner::ParamPart part = learner::ParamPart::base;
    int rows = 0;
    int cols = 0;
    std::vector<double> value;
    std::vector<double> residual;
};

// The only payload a client uploads: adapter (or unfrozen-base) deltas.
// No prompts, scenes, trajectories, or replay contents cross this boundary.
struct AdapterDelta {
    int client_id = 0;
    std::vector<DeltaTensor> tensors;
};

// Deep copies of the trainable tensors, aligned with trainable_refs order.
std::vector<Tensor> snapshot_trainable(const learner::ParameterSet& params, bool lora_only);

// Delta of `post` against the pre-round snapshot.
AdapterDelta make_delta(int client_id, const learner::ParameterSet& post, bool lora_only,
                        std::span<const Tensor> pre_trainable);

// Exact 1/M average of the reconstructed client posts. Takes only the
// coordinator's own globals and the uploaded deltas.
learner::ParameterSet aggregate(const learner::ParameterSet& global, bool lora_only,
                                std::span<const AdapterDelta> deltas);

// ---------------------------------------------------------------------------
// Federation driver.
// ---------------------------------------------------------------------------

struct FedConfig {
    pipeline::StreamConfig stream;  // stream.budget = prompts per client per round
    int clients = 4;
    int rounds = 4;
    // All clients draw the same prompts and generation randomness (stream
    // key 0). With it, any power-of-two client count aggregates to the
    // single-client result bitwise.
    bool identical_streams = false;

    void validate() const;
};

struct RoundRecord {
    int round = 0;
    pipeline::EvalReport eval;                   // global model, independent rng
    std::vector<std::uint64_t> client_admitted;  // cumulative replay admissions
    std::vector<std::uint64_t> client_versions;  // local optimizer versions
};

struct FedResult {
    learner::ParameterSet params;  // final global model
    pipeline::EvalReport baseline;
    pipeline::EvalReport final_eval;
    std::vector<RoundRecord> rounds;
    std::vector<pipeline::MetricsLog> client_metrics;
};

// Runs one client for `prompts` stream steps from the broadcast parameters
// and returns its delta. The session keeps its replay buffer, optimizer
// state, and stream cursor across rounds.
AdapterDelta client_round(pipeline::StreamSession& session, int client_id,
                          const learner::ParameterSet& broadcast, std::uint64_t prompts);

FedResult run_federation(const FedConfig& cfg, std::uint64_t seed);

}  // namespace veriloop::federated
