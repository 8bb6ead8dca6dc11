#include "veriloop/verifier.hpp"

namespace veriloop::verifier {

using world::Condition;
using world::PredicateKind;

ConditionSet formulate(const world::WorldConfig& cfg, const world::PromptSpec& prompt) {
    cfg.validate();
    ConditionSet out;
    for (const world::EntitySpec& e : prompt.entities) {
        Condition exists;
        exists.kind = PredicateKind::exists;
        exists.object_id = e.object_id;
        out.push_back(exists);
        if (e.color_id) {
            Condition color;
            color.kind = PredicateKind::color;
            color.object_id = e.object_id;
            color.color_id = *e.color_id;
            out.push_back(color);
        }
        if (e.required_count > 1) {
            Condition count;
            count.kind = PredicateKind::count;
            count.object_id = e.object_id;
            count.count = e.required_count;
            out.push_back(count);
        }
    }
    for (const world::EntitySpec& e : prompt.entities) {
        if (!e.relation || !e.relation_target) continue;
        Condition rel;
        rel.kind = PredicateKind::relation;
        rel.object_id = e.object_id;
        rel.relation = *e.relation;
        rel.target_object_id =
            prompt.entities[static_cast<std::size_t>(*e.relation_target)].object_id;
        out.push_back(rel);
    }
    if (static_cast<int>(out.size()) > kMaxConditions)
        throw NumericError("formulate: prompt produced more conditions than kMaxConditions");
    return out;
}

ScoreVector evaluate(const world::WorldConfig& cfg, const ConditionSet& conditions,
                     const world::Scene& scene) {
    ScoreVector s;
    s.reserve(conditions.size());
    for (const Condition& c : conditions) s.push_back(world::evaluate_predicate(cfg, c, scene));
    return s;
}

double aggregate(const ScoreVector& scores) {
    if (scores.empty()) throw NumericError("aggregate: empty score vector");
    double acc = 0.0;
    for (double s : scores) acc += s;
    return acc / static_cast<double>(scores.size());
}

bool passed(const ScoreVector& scores, double tau) {
    if (scores.empty()) throw NumericError("passed: empty score vector");
    for (double s : scores)
        if (s < tau) return false;
    return true;
}

Critique critique(const ConditionSet& conditions, const ScoreVector& scores, double tau) {
    if (conditions.size() != scores.size())
        throw NumericError("critique: conditions/scores size mismatch");
    Critique c;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i] < tau) {
            c.failed.push_back(static_cast<int>(i));
            c.failed_conditions.push_back(conditions[i]);
        }
    }
    return c;
}

std::string Critique::text() const {
    if (failed.empty()) return "all conditions satisfied";
    std::string out = "failed:";
    for (std::size_t i = 0; i < failed.size(); ++i) {
        out += " [" + std::to_string(failed[i]) + "] " + failed_conditions[i].text();
    }
    return out;
}

std::vector<double> critique_features(const Critique* critique_or_null) {
    std::vector<double> f(static_cast<std::size_t>(kCritiqueFeatureDim), 0.0);
    if (critique_or_null == nullptr) return f;
    const Critique& c = *critique_or_null;
    for (std::size_t i = 0; i < c.failed.size(); ++i) {
        const int kind = static_cast<int>(c.failed_conditions[i].kind);
        f[static_cast<std::size_t>(kind)] = 1.0;
        const int idx = c.failed[i];
        if (idx >= 0 && idx < kMaxConditions)
            f[static_cast<std::size_t>(world::kNumPredicateKinds + idx)] = 1.0;
    }
    return f;
}

}  // namespace veriloop::verifier
