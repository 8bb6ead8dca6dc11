#pragma once
// Synthetic compositional world: prompts ask for objects with colors, counts
// and spatial relations on a small grid; scenes are lists of placed entities.
// Everything here is exact and enumerable, so ground-truth predicate
// evaluation, scene/vector codecs and prompt encodings can all be verified
// against closed-form oracles.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "veriloop/common.hpp"

namespace veriloop::world {

// ---------------------------------------------------------------------------
// Configuration and vocabulary.
// ---------------------------------------------------------------------------

enum class Category : int {
    single_object = 0,
    two_object = 1,
    counting = 2,
    colors = 3,
    position = 4,
    color_attr = 5,
};

inline constexpr int kNumCategories = 6;

extern const std::array<const char*, kNumCategories> kCategoryNames;

const char* to_string(Category c);
std::optional<Category> category_from_string(const std::string& s);

enum class Relation : int { left_of = 0, right_of = 1, above = 2, below = 3 };

inline constexpr int kNumRelations = 4;

const char* to_string(Relation r);

struct WorldConfig {
    int grid = 8;          // positions are (x, y) with 0 <= x, y < grid
    int n_objects = 16;    // object vocabulary size
    int n_colors = 8;      // color vocabulary size (entities may be uncolored)
    int max_entities = 6;  // scene slot count
    int max_count = 4;     // counting prompts request 2..max_count copies

    // Throws ConfigError when a field is out of range.
    void validate() const;
};

// ---------------------------------------------------------------------------
// Prompts.
// ---------------------------------------------------------------------------

// One requested entity inside a prompt.
struct EntitySpec {
    int object_id = 0;
    std::optional<int> color_id;
    int required_count = 1;
    // Spatial relation of this entity with respect to another prompt entity.
    std::optional<Relation> relation;
    std::optional<int> relation_target;  // index into PromptSpec::entities
};

struct PromptSpec {
    std::uint64_t id = 0;
    Category category = Category::single_object;
    std::vector<EntitySpec> entities;  // one or two, depending on category

    // Human-readable rendering for logs and the remote verifier protocol.
    std::string text() const;
    // Canonical content key: equal iff the prompts request the same thing
    // (the id is excluded). Used by injectivity and dedup checks.
    std::string content_key() const;
};

// Deterministically draws a prompt of the given category. All draw order is
// fixed, so the same (rng state, category) always yields the same prompt.
PromptSpec gen_prompt(const WorldConfig& cfg, Category cat, std::uint64_t id, Rng& rng);

// ---------------------------------------------------------------------------
// Scenes.
// ---------------------------------------------------------------------------

struct SceneEntity {
    int object_id = 0;
    std::optional<int> color_id;
    int x = 0;
    int y = 0;

    bool operator==(const SceneEntity&) const = default;
};

struct Scene {
    std::vector<SceneEntity> entities;

    bool operator==(const Scene&) const = default;
};

// Fixed-width real-vector form of a scene (one codeword block per slot).
using SceneVector = std::vector<double>;

// A scene that realizes the prompt exactly: correct objects, colors, counts
// and relations. Placement is deterministic.
Scene perfect_scene(const WorldConfig& cfg, const PromptSpec& prompt);

// Throws NumericError when the scene violates the world bounds.
void validate_scene(const WorldConfig& cfg, const Scene& scene);

// Line-oriented text form, one entity per line:
//   obj:<id> color:<id-or-dash> at:(x,y)
std::string scene_to_text(const Scene& scene);
Scene scene_from_text(const std::string& text);

// ---------------------------------------------------------------------------
// Ground-truth predicates.
// ---------------------------------------------------------------------------

enum class PredicateKind : int { exists = 0, color = 1, count = 2, relation = 3 };

inline constexpr int kNumPredicateKinds = 4;

const char* to_string(PredicateKind k);

// A single checkable condition over scenes. Which fields are meaningful
// depends on `kind`; unused fields stay at their defaults.
struct Condition {
    PredicateKind kind = PredicateKind::exists;
    int object_id = -1;         // subject object
    int color_id = -1;          // color predicate
    int count = 0;              // count predicate
    Relation relation = Relation::left_of;
    int target_object_id = -1;  // relation predicate

    std::string text() const;
    bool operator==(const Condition&) const = default;
};

// Scores one condition against a scene. All predicates are exact; the count
// predicate gives partial credit min(m, n) / max(m, n) for m > 0 found
// copies, 0 when the object is absent.
double evaluate_predicate(const WorldConfig& cfg, const Condition& cond, const Scene& scene);

// ---------------------------------------------------------------------------
// Codecs.
// ---------------------------------------------------------------------------

// Slot token space: token 0 is the empty-slot sentinel; every occupied token
// enumerates (object, optional color, x, y).
int slot_vocab_size(const WorldConfig& cfg);
int token_of_entity(const WorldConfig& cfg, const SceneEntity& e);
std::optional<SceneEntity> entity_of_token(const WorldConfig& cfg, int token);

// Scene <-> slot token list (length max_entities, empty slots trailing).
std::vector<int> scene_to_tokens(const WorldConfig& cfg, const Scene& scene);
Scene tokens_to_scene(const WorldConfig& cfg, const std::vector<int>& tokens);

// Width of one slot codeword block / the whole scene vector.
int slot_block_dim(const WorldConfig& cfg);
int scene_vector_dim(const WorldConfig& cfg);

// Scene -> concatenated per-slot codewords. Each occupied slot contributes a
// presence bit plus one-hot object / color / x / y blocks; empty slots are
// all-zero. The minimum distance between distinct slot codewords is sqrt(2),
// so decoding tolerates any per-slot perturbation of norm < sqrt(2)/2.
SceneVector encode_scene(const WorldConfig& cfg, const Scene& scene);

// Nearest-codeword decode, slot by slot (exact nearest neighbour in the slot
// codebook).
Scene decode_vector(const WorldConfig& cfg, const SceneVector& v);

// Fixed-width conditioning vector for prompts; injective over the grammar.
int prompt_vector_dim(const WorldConfig& cfg);
std::vector<double> encode_prompt(const WorldConfig& cfg, const PromptSpec& prompt);

// Column indices of individual features inside the prompt vector; used to
// build structured initial weights and by feature-level tests.
int prompt_feature_object_col(const WorldConfig& cfg, int entity_index, int object_id);
int prompt_feature_color_col(const WorldConfig& cfg, int entity_index, int color_id);
int prompt_feature_count_col(const WorldConfig& cfg, int entity_index, int required_count);

}  // namespace veriloop::world
