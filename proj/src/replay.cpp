#include "veriloop/replay.hpp"

#include <nlohmann/json.hpp>

namespace veriloop::replay {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("replay.capacity: must be >= 1");
}

std::size_t ReplayBuffer::admit(const pairgen::Trajectory& traj,
                                std::span<const pairgen::PreferencePair> pairs) {
    if (traj.exhausted()) {
        ++rejected_trajectories_;
        return 0;
    }
    if (pairs.empty()) return 0;
    const double progress =
        traj.steps[static_cast<std::size_t>(*traj.satisfied_at)].aggregate -
        traj.steps.front().aggregate;
    if (!(progress > 0.0)) return 0;  // refinement must have improved the aggregate
    std::size_t n = 0;
    for (const pairgen::PreferencePair& p : pairs) {
        ReplayEntry e;
        e.pair = p;
        e.progress = progress;
        e.seq = next_seq_++;
        entries_.push_back(std::move(e));
        ++admitted_;
        ++admitted_by_category_[static_cast<std::size_t>(traj.prompt.category)];
        ++n;
        if (entries_.size() > capacity_) evict_one();
    }
    return n;
}

void ReplayBuffer::evict_one() {
    std::size_t victim = 0;
    for (std::size_t i = 1; i < entries_.size(); ++i) {
        const ReplayEntry& a = entries_[i];
        const ReplayEntry& b = entries_[victim];
        if (a.progress < b.progress || (a.progress == b.progress && a.seq < b.seq)) victim = i;
    }
    entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(victim));
    ++evicted_;
}

std::vector<pairgen::PreferencePair> ReplayBuffer::sample_batch(std::size_t batch,
                                                                Rng& rng) const {
    if (entries_.empty()) throw NumericError("replay: sample_batch on an empty buffer");
    if (batch == 0) throw ConfigError("replay: batch must be >= 1");
    std::vector<pairgen::PreferencePair> out;
    out.reserve(batch);
    if (entries_.size() < batch) {
        // Too few distinct entries: draw with replacement.
        for (std::size_t i = 0; i < batch; ++i)
            out.push_back(entries_[draw_index(rng, entries_.size())].pair);
        return out;
    }
    // Partial Fisher-Yates over an index array: first `batch` draws without
    // replacement.
    std::vector<std::size_t> idx(entries_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = 0; i < batch; ++i) {
        const std::size_t j = i + draw_index(rng, idx.size() - i);
        std::swap(idx[i], idx[j]);
        out.push_back(entries_[idx[i]].pair);
    }
    return out;
}

ReplayStats ReplayBuffer::stats() const {
    ReplayStats s;
    s.size = entries_.size();
    s.capacity = capacity_;
    s.admitted = admitted_;
    s.evicted = evicted_;
    s.rejected_trajectories = rejected_trajectories_;
    s.admitted_by_category = admitted_by_category_;
    if (!entries_.empty()) {
        double acc = 0.0;
        for (const ReplayEntry& e : entries_) acc += e.progress;
        s.mean_progress = acc / static_cast<double>(entries_.size());
    }
    return s;
}

std::string ReplayBuffer::to_jsonl() const {
    std::string out;
    for (const ReplayEntry& e : entries_) {
        nlohmann::json j;
        j["seq"] = e.seq;
        j["prompt_id"] = e.pair.prompt.id;
        j["category"] = world::to_string(e.pair.prompt.category);
        j["progress"] = e.progress;
        j["margin"] = e.pair.margin;
        j["rejected_step"] = e.pair.rejected_step;
        j["chosen_step"] = e.pair.chosen_step;
        out += j.dump();
        out += '\n';
    }
    return out;
}

}  // namespace veriloop::replay
