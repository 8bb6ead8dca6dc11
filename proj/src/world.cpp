#include "veriloop/world.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace veriloop::world {

const std::array<const char*, kNumCategories> kCategoryNames = {
    "single_object", "two_object", "counting", "colors", "position", "color_attr",
};

const char* to_string(Category c) { return kCategoryNames[static_cast<int>(c)]; }

std::optional<Category> category_from_string(const std::string& s) {
    for (int i = 0; i < kNumCategories; ++i)
        if (s == kCategoryNames[i]) return static_cast<Category>(i);
    return std::nullopt;
}

const char* to_string(Relation r) {
    switch (r) {
        case Relation::left_of: return "left_of";
        case Relation::right_of: return "right_of";
        case Relation::above: return "above";
        case Relation::below: return "below";
    }
    return "?";
}

const char* to_string(PredicateKind k) {
    switch (k) {
        case PredicateKind::exists: return "exists";
        case PredicateKind::color: return "color";
        case PredicateKind::count: return "count";
        case PredicateKind::relation: return "relation";
    }
    return "?";
}

void WorldConfig::validate() const {
    if (grid < 1) throw ConfigError("world.grid: must be >= 1");
    if (n_objects < 1) throw ConfigError("world.objects: must be >= 1");
    if (n_colors < 0) throw ConfigError("world.colors: must be >= 0");
    if (max_entities < 1) throw ConfigError("world.max_entities: must be >= 1");
    if (max_count < 1) throw ConfigError("world.max_count: must be >= 1");
    if (max_count > max_entities)
        throw ConfigError("world.max_count: must be <= world.max_entities");
    if (max_count > grid) throw ConfigError("world.max_count: must be <= world.grid");
}

// ---------------------------------------------------------------------------
// Prompts.
// ---------------------------------------------------------------------------

namespace {

int draw_object(const WorldConfig& cfg, Rng& rng) {
    return static_cast<int>(draw_index(rng, static_cast<std::size_t>(cfg.n_objects)));
}

// Uniform over [0, n) \ {taken}; one draw, deterministic.
int draw_distinct(int n, int taken, Rng& rng) {
    int v = static_cast<int>(draw_index(rng, static_cast<std::size_t>(n - 1)));
    return v >= taken ? v + 1 : v;
}

std::string entity_phrase(const EntitySpec& e) {
    std::string s;
    if (e.required_count > 1) s += std::to_string(e.required_count) + "x ";
    s += "obj" + std::to_string(e.object_id);
    if (e.color_id) s += " in color" + std::to_string(*e.color_id);
    return s;
}

}  // namespace

std::string PromptSpec::text() const {
    if (entities.empty()) return "(empty prompt)";
    // Relation prompts render as "<subject> <relation> <target>".
    for (std::size_t i = 0; i < entities.size(); ++i) {
        const EntitySpec& e = entities[i];
        if (e.relation && e.relation_target) {
            return entity_phrase(e) + " " + to_string(*e.relation) + " " +
                   entity_phrase(entities[static_cast<std::size_t>(*e.relation_target)]);
        }
    }
    std::string s = entity_phrase(entities[0]);
    for (std::size_t i = 1; i < entities.size(); ++i) s += " and " + entity_phrase(entities[i]);
    return s;
}

std::string PromptSpec::content_key() const {
    std::string k = std::string(to_string(category)) + "|";
    for (const EntitySpec& e : entities) {
        k += "o" + std::to_string(e.object_id);
        k += "c" + (e.color_id ? std::to_string(*e.color_id) : std::string("-"));
        k += "n" + std::to_string(e.required_count);
        k += "r" + (e.relation ? std::string(to_string(*e.relation)) : std::string("-"));
        k += "t" + (e.relation_target ? std::to_string(*e.relation_target) : std::string("-"));
        k += ";";
    }
    return k;
}

PromptSpec gen_prompt(const WorldConfig& cfg, Category cat, std::uint64_t id, Rng& rng) {
    cfg.validate();
    PromptSpec p;
    p.id = id;
    p.category = cat;
    switch (cat) {
        case Category::single_object: {
            EntitySpec e;
            e.object_id = draw_object(cfg, rng);
            p.entities.push_back(e);
            break;
        }
        case Category::two_object: {
            if (cfg.n_objects < 2 || cfg.max_entities < 2)
                throw ConfigError("world: two_object prompts need >= 2 objects and slots");
            EntitySpec a, b;
            a.object_id = draw_object(cfg, rng);
            b.object_id = draw_distinct(cfg.n_objects, a.object_id, rng);
            p.entities.push_back(a);
            p.entities.push_back(b);
            break;
        }
        case Category::counting: {
            if (cfg.max_count < 2)
                throw ConfigError("world: counting prompts need world.max_count >= 2");
            EntitySpec e;
            e.object_id = draw_object(cfg, rng);
            e.required_count =
                2 + static_cast<int>(draw_index(rng, static_cast<std::size_t>(cfg.max_count - 1)));
            p.entities.push_back(e);
            break;
        }
        case Category::colors: {
            if (cfg.n_colors < 1) throw ConfigError("world: colors prompts need >= 1 color");
            EntitySpec e;
            e.object_id = draw_object(cfg, rng);
            e.color_id = static_cast<int>(draw_index(rng, static_cast<std::size_t>(cfg.n_colors)));
            p.entities.push_back(e);
            break;
        }
        case Category::position: {
            if (cfg.n_objects < 2 || cfg.max_entities < 2 || cfg.grid < 2)
                throw ConfigError("world: position prompts need >= 2 objects, slots and cells");
            EntitySpec a, b;
            a.object_id = draw_object(cfg, rng);
            b.object_id = draw_distinct(cfg.n_objects, a.object_id, rng);
            a.relation = static_cast<Relation>(draw_index(rng, kNumRelations));
            a.relation_target = 1;
            p.entities.push_back(a);
            p.entities.push_back(b);
            break;
        }
        case Category::color_attr: {
            if (cfg.n_objects < 2 || cfg.max_entities < 2 || cfg.n_colors < 2)
                throw ConfigError("world: color_attr prompts need >= 2 objects and colors");
            EntitySpec a, b;
            a.object_id = draw_object(cfg, rng);
            b.object_id = draw_distinct(cfg.n_objects, a.object_id, rng);
            a.color_id = static_cast<int>(draw_index(rng, static_cast<std::size_t>(cfg.n_colors)));
            b.color_id = draw_distinct(cfg.n_colors, *a.color_id, rng);
            p.entities.push_back(a);
            p.entities.push_back(b);
            break;
        }
    }
    return p;
}

// ---------------------------------------------------------------------------
// Scenes.
// ---------------------------------------------------------------------------

void validate_scene(const WorldConfig& cfg, const Scene& scene) {
    if (static_cast<int>(scene.entities.size()) > cfg.max_entities)
        throw NumericError("scene: entity count exceeds world.max_entities");
    for (const SceneEntity& e : scene.entities) {
        if (e.object_id < 0 || e.object_id >= cfg.n_objects)
            throw NumericError("scene: object id out of range");
        if (e.color_id && (*e.color_id < 0 || *e.color_id >= cfg.n_colors))
            throw NumericError("scene: color id out of range");
        if (e.x < 0 || e.x >= cfg.grid || e.y < 0 || e.y >= cfg.grid)
            throw NumericError("scene: position out of range");
    }
}

Scene perfect_scene(const WorldConfig& cfg, const PromptSpec& prompt) {
    Scene s;
    const int mid = cfg.grid / 2;
    const int hi = cfg.grid - 1;
    bool has_relation = false;
    for (const EntitySpec& e : prompt.entities)
        if (e.relation) has_relation = true;

    if (has_relation) {
        // Relation prompts carry exactly two single-count entities; place the
        // subject/target pair at opposite grid extremes along the relation
        // axis. Above means a smaller y (row 0 is the top of the grid).
        for (std::size_t i = 0; i < prompt.entities.size(); ++i) {
            const EntitySpec& e = prompt.entities[i];
            SceneEntity out;
            out.object_id = e.object_id;
            out.color_id = e.color_id;
            out.x = mid;
            out.y = mid;
            s.entities.push_back(out);
        }
        for (std::size_t i = 0; i < prompt.entities.size(); ++i) {
            const EntitySpec& e = prompt.entities[i];
            if (!e.relation || !e.relation_target) continue;
            SceneEntity& subj = s.entities[i];
            SceneEntity& targ = s.entities[static_cast<std::size_t>(*e.relation_target)];
            switch (*e.relation) {
                case Relation::left_of: subj.x = 0; targ.x = hi; break;
                case Relation::right_of: subj.x = hi; targ.x = 0; break;
                case Relation::above: subj.y = 0; targ.y = hi; break;
                case Relation::below: subj.y = hi; targ.y = 0; break;
            }
        }
    } else {
        // Row per prompt entity, one column per requested copy.
        for (std::size_t i = 0; i < prompt.entities.size(); ++i) {
            const EntitySpec& e = prompt.entities[i];
            for (int c = 0; c < e.required_count; ++c) {
                SceneEntity out;
                out.object_id = e.object_id;
                out.color_id = e.color_id;
                out.x = c;
                out.y = static_cast<int>(i);
                s.entities.push_back(out);
            }
        }
    }
    validate_scene(cfg, s);
    return s;
}

std::string scene_to_text(const Scene& scene) {
    std::string out;
    char line[96];
    for (const SceneEntity& e : scene.entities) {
        if (e.color_id)
            std::snprintf(line, sizeof line, "obj:%d color:%d at:(%d,%d)\n", e.object_id,
                          *e.color_id, e.x, e.y);
        else
            std::snprintf(line, sizeof line, "obj:%d color:- at:(%d,%d)\n", e.object_id, e.x,
                          e.y);
        out += line;
    }
    return out;
}

Scene scene_from_text(const std::string& text) {
    Scene s;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        SceneEntity e;
        int obj = 0, col = 0, x = 0, y = 0;
        if (std::sscanf(line.c_str(), "obj:%d color:%d at:(%d,%d)", &obj, &col, &x, &y) == 4) {
            e.object_id = obj;
            e.color_id = col;
            e.x = x;
            e.y = y;
        } else if (std::sscanf(line.c_str(), "obj:%d color:- at:(%d,%d)", &obj, &x, &y) == 3) {
            e.object_id = obj;
            e.x = x;
            e.y = y;
        } else {
            throw IoError("scene text: unparseable line: " + line);
        }
        s.entities.push_back(e);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Predicates.
// ---------------------------------------------------------------------------

std::string Condition::text() const {
    switch (kind) {
        case PredicateKind::exists: return "exists(obj" + std::to_string(object_id) + ")";
        case PredicateKind::color:
            return "color(obj" + std::to_string(object_id) + ", color" +
                   std::to_string(color_id) + ")";
        case PredicateKind::count:
            return "count(obj" + std::to_string(object_id) + ") == " + std::to_string(count);
        case PredicateKind::relation:
            return std::string("relation(obj") + std::to_string(object_id) + " " +
                   to_string(relation) + " obj" + std::to_string(target_object_id) + ")";
    }
    return "?";
}

namespace {

bool relation_holds(Relation r, const SceneEntity& a, const SceneEntity& b) {
    switch (r) {
        case Relation::left_of: return a.x < b.x;
        case Relation::right_of: return a.x > b.x;
        case Relation::above: return a.y < b.y;  // row 0 is the top
        case Relation::below: return a.y > b.y;
    }
    return false;
}

}  // namespace

double evaluate_predicate(const WorldConfig& cfg, const Condition& cond, const Scene& scene) {
    (void)cfg;
    switch (cond.kind) {
        case PredicateKind::exists: {
            for (const SceneEntity& e : scene.entities)
                if (e.object_id == cond.object_id) return 1.0;
            return 0.0;
        }
        case PredicateKind::color: {
            // Every placed copy of the object must carry the color. Holds
            // vacuously when the object is absent; the paired exists
            // condition covers presence.
            for (const SceneEntity& e : scene.entities) {
                if (e.object_id != cond.object_id) continue;
                if (!e.color_id || *e.color_id != cond.color_id) return 0.0;
            }
            return 1.0;
        }
        case PredicateKind::count: {
            int m = 0;
            for (const SceneEntity& e : scene.entities)
                if (e.object_id == cond.object_id) ++m;
            if (m == 0) return 0.0;
            const int n = cond.count;
            return static_cast<double>(std::min(m, n)) / static_cast<double>(std::max(m, n));
        }
        case PredicateKind::relation: {
            for (std::size_t i = 0; i < scene.entities.size(); ++i) {
                const SceneEntity& a = scene.entities[i];
                if (a.object_id != cond.object_id) continue;
                for (std::size_t j = 0; j < scene.entities.size(); ++j) {
                    if (i == j) continue;
                    const SceneEntity& b = scene.entities[j];
                    if (b.object_id != cond.target_object_id) continue;
                    if (relation_holds(cond.relation, a, b)) return 1.0;
                }
            }
            return 0.0;
        }
    }
    return 0.0;
}

// ---------------------------------------------------------------------------
// Codecs.
// ---------------------------------------------------------------------------

int slot_vocab_size(const WorldConfig& cfg) {
    return 1 + cfg.n_objects * (cfg.n_colors + 1) * cfg.grid * cfg.grid;
}

int token_of_entity(const WorldConfig& cfg, const SceneEntity& e) {
    const int color_opt = e.color_id ? *e.color_id + 1 : 0;
    int t = e.object_id;
    t = t * (cfg.n_colors + 1) + color_opt;
    t = t * cfg.grid + e.x;
    t = t * cfg.grid + e.y;
    return 1 + t;
}

std::optional<SceneEntity> entity_of_token(const WorldConfig& cfg, int token) {
    if (token == 0) return std::nullopt;
    int t = token - 1;
    SceneEntity e;
    e.y = t % cfg.grid;
    t /= cfg.grid;
    e.x = t % cfg.grid;
    t /= cfg.grid;
    const int color_opt = t % (cfg.n_colors + 1);
    t /= cfg.n_colors + 1;
    e.object_id = t;
    if (color_opt > 0) e.color_id = color_opt - 1;
    return e;
}

std::vector<int> scene_to_tokens(const WorldConfig& cfg, const Scene& scene) {
    validate_scene(cfg, scene);
    std::vector<int> tokens(static_cast<std::size_t>(cfg.max_entities), 0);
    for (std::size_t i = 0; i < scene.entities.size(); ++i)
        tokens[i] = token_of_entity(cfg, scene.entities[i]);
    return tokens;
}

Scene tokens_to_scene(const WorldConfig& cfg, const std::vector<int>& tokens) {
    Scene s;
    for (int t : tokens) {
        std::optional<SceneEntity> e = entity_of_token(cfg, t);
        if (e) s.entities.push_back(*e);
    }
    validate_scene(cfg, s);
    return s;
}

int slot_block_dim(const WorldConfig& cfg) {
    return 1 + cfg.n_objects + (cfg.n_colors + 1) + cfg.grid + cfg.grid;
}

int scene_vector_dim(const WorldConfig& cfg) { return cfg.max_entities * slot_block_dim(cfg); }

SceneVector encode_scene(const WorldConfig& cfg, const Scene& scene) {
    const std::vector<int> tokens = scene_to_tokens(cfg, scene);
    const int block = slot_block_dim(cfg);
    SceneVector v(static_cast<std::size_t>(scene_vector_dim(cfg)), 0.0);
    for (int s = 0; s < cfg.max_entities; ++s) {
        std::optional<SceneEntity> e = entity_of_token(cfg, tokens[static_cast<std::size_t>(s)]);
        if (!e) continue;  // empty slot encodes as all-zero
        double* b = v.data() + static_cast<std::size_t>(s) * block;
        int off = 0;
        b[off] = 1.0;  // presence
        off += 1;
        b[off + e->object_id] = 1.0;
        off += cfg.n_objects;
        b[off + (e->color_id ? *e->color_id + 1 : 0)] = 1.0;
        off += cfg.n_colors + 1;
        b[off + e->x] = 1.0;
        off += cfg.grid;
        b[off + e->y] = 1.0;
    }
    return v;
}

namespace {

// Index of the largest entry in b[0..n); first index wins ties.
int argmax(const double* b, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (b[i] > b[best]) best = i;
    return best;
}

double block_sq(const double* b, int n) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += b[i] * b[i];
    return acc;
}

}  // namespace

Scene decode_vector(const WorldConfig& cfg, const SceneVector& v) {
    const int block = slot_block_dim(cfg);
    if (v.size() != static_cast<std::size_t>(scene_vector_dim(cfg)))
        throw NumericError("decode_vector: wrong dimension");
    Scene s;
    for (int slot = 0; slot < cfg.max_entities; ++slot) {
        const double* b = v.data() + static_cast<std::size_t>(slot) * block;
        // Distance to a codeword decomposes per component block, and the
        // occupied codebook is a full product of one-hot blocks, so the
        // nearest occupied codeword is the per-block argmax. Compare its
        // squared distance against the all-zero empty codeword.
        const double total_sq = block_sq(b, block);
        int off = 1;
        const int obj = argmax(b + off, cfg.n_objects);
        const double v_obj = b[off + obj];
        off += cfg.n_objects;
        const int col = argmax(b + off, cfg.n_colors + 1);
        const double v_col = b[off + col];
        off += cfg.n_colors + 1;
        const int x = argmax(b + off, cfg.grid);
        const double v_x = b[off + x];
        off += cfg.grid;
        const int y = argmax(b + off, cfg.grid);
        const double v_y = b[off + y];

        // ||v - c||^2 = ||v||^2 - 2 <v, c> + ||c||^2; occupied codewords have
        // ||c||^2 = 5 (presence bit plus four one-hot bits).
        const double d2_empty = total_sq;
        const double d2_occ = total_sq - 2.0 * (b[0] + v_obj + v_col + v_x + v_y) + 5.0;
        if (d2_occ < d2_empty) {
            SceneEntity e;
            e.object_id = obj;
            if (col > 0) e.color_id = col - 1;
            e.x = x;
            e.y = y;
            s.entities.push_back(e);
        }
    }
    return s;
}

int prompt_vector_dim(const WorldConfig& cfg) {
    const int entity_block = cfg.n_objects + (cfg.n_colors + 1) + cfg.max_count +
                             (kNumRelations + 1) + 2;
    return kNumCategories + 2 * entity_block;
}

namespace {

int entity_block_width(const WorldConfig& cfg) {
    return cfg.n_objects + (cfg.n_colors + 1) + cfg.max_count + (kNumRelations + 1) + 2;
}

}  // namespace

int prompt_feature_object_col(const WorldConfig& cfg, int entity_index, int object_id) {
    return kNumCategories + entity_index * entity_block_width(cfg) + object_id;
}

int prompt_feature_color_col(const WorldConfig& cfg, int entity_index, int color_id) {
    return kNumCategories + entity_index * entity_block_width(cfg) + cfg.n_objects + 1 +
           color_id;
}

int prompt_feature_count_col(const WorldConfig& cfg, int entity_index, int required_count) {
    return kNumCategories + entity_index * entity_block_width(cfg) + cfg.n_objects +
           (cfg.n_colors + 1) + required_count - 1;
}

std::vector<double> encode_prompt(const WorldConfig& cfg, const PromptSpec& prompt) {
    if (prompt.entities.empty() || prompt.entities.size() > 2)
        throw NumericError("encode_prompt: prompts carry one or two entities");
    std::vector<double> v(static_cast<std::size_t>(prompt_vector_dim(cfg)), 0.0);
    v[static_cast<std::size_t>(prompt.category)] = 1.0;
    int base = kNumCategories;
    const int entity_block = cfg.n_objects + (cfg.n_colors + 1) + cfg.max_count +
                             (kNumRelations + 1) + 2;
    for (std::size_t i = 0; i < prompt.entities.size(); ++i) {
        const EntitySpec& e = prompt.entities[i];
        int off = base + static_cast<int>(i) * entity_block;
        if (e.object_id < 0 || e.object_id >= cfg.n_objects)
            throw NumericError("encode_prompt: object id out of range");
        v[static_cast<std::size_t>(off + e.object_id)] = 1.0;
        off += cfg.n_objects;
        v[static_cast<std::size_t>(off + (e.color_id ? *e.color_id + 1 : 0))] = 1.0;
        off += cfg.n_colors + 1;
        if (e.required_count < 1 || e.required_count > cfg.max_count)
            throw NumericError("encode_prompt: required count out of range");
        v[static_cast<std::size_t>(off + e.required_count - 1)] = 1.0;
        off += cfg.max_count;
        v[static_cast<std::size_t>(off + (e.relation ? static_cast<int>(*e.relation) + 1 : 0))] =
            1.0;
        off += kNumRelations + 1;
        if (e.relation && e.relation_target)
            v[static_cast<std::size_t>(off + *e.relation_target)] = 1.0;
    }
    return v;
}

}  // namespace veriloop::world
