#pragma once
// Bounded experience buffer for preference pairs.
//
// Only pairs mined from satisfied trajectories are admitted; each entry
// carries the trajectory's progress (chosen aggregate minus first-attempt
// aggregate, always > 0). When the buffer overflows its capacity, the entry
// with the lowest progress is evicted first; ties evict the oldest sequence
// number. Sampling is uniform: with replacement while the buffer holds fewer
// entries than the requested batch, without replacement otherwise.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "veriloop/pairgen.hpp"

namespace veriloop::replay {

struct ReplayEntry {
    pairgen::PreferencePair pair;
    double progress = 0.0;
    std::uint64_t seq = 0;  // admission order, globally increasing
};

struct ReplayStats {
    std::size_t size = 0;
    std::size_t capacity = 0;
    std::uint64_t admitted = 0;             // entries accepted at admission
    std::uint64_t evicted = 0;              // entries later displaced
    std::uint64_t rejected_trajectories = 0;  // unsatisfied trajectories offered
    double mean_progress = 0.0;             // over current entries
    std::array<std::uint64_t, world::kNumCategories> admitted_by_category{};
};

class ReplayBuffer {
  public:
    explicit ReplayBuffer(std::size_t capacity);

    // Admits the margin-surviving pairs of one trajectory. Unsatisfied
    // trajectories are counted and ignored. Returns the number of entries
    // admitted.
    std::size_t admit(const pairgen::Trajectory& traj,
                      std::span<const pairgen::PreferencePair> pairs);

    // Uniform batch. Draws with replacement iff size < batch. Throws
    // NumericError on an empty buffer.
    std::vector<pairgen::PreferencePair> sample_batch(std::size_t batch, Rng& rng) const;

    ReplayStats stats() const;
    std::size_t size() const { return entries_.size(); }
    const std::vector<ReplayEntry>& entries() const { return entries_; }

    // One JSON object per entry: seq, prompt id, category, progress, margin.
    std::string to_jsonl() const;

  private:
    void evict_one();

    std::size_t capacity_;
    std::vector<ReplayEntry> entries_;
    std::uint64_t next_seq_ = 0;
    std::uint64_t admitted_ = 0;
    std::uint64_t evicted_ = 0;
    std::uint64_t rejected_trajectories_ = 0;
    std::array<std::uint64_t, world::kNumCategories> admitted_by_category_{};
};

}  // namespace veriloop::replay
