#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace hydra {

inline constexpr std::string_view kFormatVersion = "hydra-forge/1";

/// Rare-word trigger candidates, sorted and unique.
struct Vocabulary {
    std::vector<std::string> words;
    std::vector<std::uint64_t> frequencies;

    bool contains(std::string_view word) const;
    std::size_t size() const { return words.size(); }
};

struct ConceptPair {
    std::string source;
    std::string target;
    int pair_id = 0;

    /// Classifier label; 0 is reserved for clean prompts.
    int class_index() const { return pair_id + 1; }

    friend bool operator==(const ConceptPair&, const ConceptPair&) = default;
};

struct Prompt {
    std::vector<std::string> tokens;
    std::optional<std::size_t> source_index;
    std::optional<std::size_t> trigger_index;

    std::string text() const;
    friend bool operator==(const Prompt&, const Prompt&) = default;
};

enum class InsertPosition { Begin, BeforeSource, AfterSource, End };

std::string_view to_string(InsertPosition pos);
InsertPosition parse_insert_position(std::string_view name);

enum class Method { Hydra, Rickroll, EvilEdit, NaivePoison, CleanFinetuneFull, CleanFinetuneLowRank };

std::string_view to_string(Method method);
Method parse_method(std::string_view name);

struct AttackerAssignment {
    int attacker_id = 0;
    Method method = Method::Hydra;
    std::vector<ConceptPair> pairs;
    /// Parallel to pairs; empty strings until triggers are chosen.
    std::vector<std::string> triggers;
};

struct AttackPlan {
    std::vector<AttackerAssignment> attackers;

    /// Checks pair disjointness and trigger uniqueness; throws PlanError.
    void validate() const;
    /// Assigns a trigger to a pair, rejecting reuse of a word already bound to another pair.
    void set_trigger(int attacker_id, std::size_t slot, const std::string& word);
    const AttackerAssignment& attacker(int attacker_id) const;
    AttackerAssignment& attacker(int attacker_id);
};

bool is_candidate_word(std::string_view word);
std::vector<std::string> split_words(std::string_view text);

Vocabulary build_rare_vocab(const std::vector<std::string>& corpus, std::uint64_t max_frequency,
                            const std::vector<std::string>& exclusions);

std::vector<ConceptPair> build_concept_pool(const std::vector<std::string>& concepts, std::size_t pool_size,
                                            std::uint64_t seed);

AttackPlan assign_pairs(const std::vector<ConceptPair>& pool, int n_attackers);

Prompt insert_trigger(const Prompt& prompt, const std::string& trigger, InsertPosition position);
/// Inverse of insert_trigger: drops the token at trigger_index.
Prompt remove_trigger(const Prompt& prompt);

const std::vector<std::string>& default_templates();

Prompt fill_template(std::string_view templ, const std::string& concept_name);
/// Fills the same template slot with another concept, keeping positions.
Prompt with_concept(const Prompt& prompt, const std::string& concept_name);

std::vector<Prompt> sample_concept_prompts(const std::string& concept_name, const std::vector<std::string>& templates,
                                           std::size_t n, std::uint64_t seed);
std::vector<Prompt> sample_prompts(const ConceptPair& pair, const std::vector<std::string>& templates,
                                   std::size_t n, std::uint64_t seed);

/// All distinct words used by the templates, excluding the slot marker.
std::vector<std::string> template_words(const std::vector<std::string>& templates);

std::vector<std::string> read_lines(const std::string& path);

nlohmann::json to_json(const Vocabulary& vocab);
Vocabulary vocabulary_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ConceptPair& pair);
ConceptPair concept_pair_from_json(const nlohmann::json& j);
nlohmann::json pool_to_json(const std::vector<ConceptPair>& pool);
std::vector<ConceptPair> pool_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AttackPlan& plan);
AttackPlan plan_from_json(const nlohmann::json& j);

} // namespace hydra
