#include "hydra/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "hydra/errors.hpp"
#include "hydra/rng.hpp"

namespace hydra {

namespace {

constexpr std::string_view kSlot = "{}";

std::string ascii_lower(std::string_view s)
{
    std::string out(s);
    for (auto& c : out)
        if (c >= 'A' && c <= 'Z')
            c = static_cast<char>(c - 'A' + 'a');
    return out;
}

} // namespace

bool Vocabulary::contains(std::string_view word) const
{
    return std::binary_search(words.begin(), words.end(), word);
}

std::string Prompt::text() const
{
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i)
            out += ' ';
        out += tokens[i];
    }
    return out;
}

std::string_view to_string(InsertPosition pos)
{
    switch (pos) {
    case InsertPosition::Begin:
        return "begin";
    case InsertPosition::BeforeSource:
        return "before-source";
    case InsertPosition::AfterSource:
        return "after-source";
    case InsertPosition::End:
        return "end";
    }
    return "?";
}

InsertPosition parse_insert_position(std::string_view name)
{
    for (auto p : {InsertPosition::Begin, InsertPosition::BeforeSource, InsertPosition::AfterSource,
                   InsertPosition::End})
        if (to_string(p) == name)
            return p;
    throw FormatError("unknown insert position '" + std::string(name) +
                      "' (expected begin, before-source, after-source, end)");
}

std::string_view to_string(Method method)
{
    switch (method) {
    case Method::Hydra:
        return "hydra";
    case Method::Rickroll:
        return "rickroll";
    case Method::EvilEdit:
        return "eviledit";
    case Method::NaivePoison:
        return "naive-poison";
    case Method::CleanFinetuneFull:
        return "clean-finetune-full";
    case Method::CleanFinetuneLowRank:
        return "clean-finetune-lowrank";
    }
    return "?";
}

Method parse_method(std::string_view name)
{
    for (auto m : {Method::Hydra, Method::Rickroll, Method::EvilEdit, Method::NaivePoison,
                   Method::CleanFinetuneFull, Method::CleanFinetuneLowRank})
        if (to_string(m) == name)
            return m;
    throw FormatError("unknown method '" + std::string(name) + "'");
}

bool is_candidate_word(std::string_view word)
{
    if (word.size() < 2 || word.size() > 20)
        return false;
    return std::all_of(word.begin(), word.end(), [](char c) { return c >= 'a' && c <= 'z'; });
}

std::vector<std::string> split_words(std::string_view text)
{
    std::vector<std::string> out;
    std::istringstream in{std::string(text)};
    std::string w;
    while (in >> w)
        out.push_back(std::move(w));
    return out;
}

Vocabulary build_rare_vocab(const std::vector<std::string>& corpus, std::uint64_t max_frequency,
                            const std::vector<std::string>& exclusions)
{
    if (corpus.empty())
        throw VocabError("corpus is empty");

    std::map<std::string, std::uint64_t> counts;
    for (const auto& line : corpus)
        for (const auto& w : split_words(line))
            ++counts[ascii_lower(w)];

    std::set<std::string> excluded;
    for (const auto& e : exclusions)
        excluded.insert(ascii_lower(e));

    Vocabulary vocab;
    for (const auto& [word, count] : counts) {
        if (count > max_frequency || excluded.contains(word) || !is_candidate_word(word))
            continue;
        vocab.words.push_back(word);
        vocab.frequencies.push_back(count);
    }
    if (vocab.words.empty())
        throw VocabError("no valid trigger candidates: every corpus word is too frequent, excluded, or "
                         "fails the [a-z]{2,20} pattern");
    return vocab;
}

std::vector<ConceptPair> build_concept_pool(const std::vector<std::string>& concepts, std::size_t pool_size,
                                            std::uint64_t seed)
{
    const std::set<std::string> unique(concepts.begin(), concepts.end());
    if (unique.size() != concepts.size())
        throw FormatError("concept list contains duplicates");

    const std::size_t n = concepts.size();
    const std::size_t capacity = n < 2 ? 0 : n * (n - 1);
    if (pool_size > capacity)
        throw CapacityError("pool size " + std::to_string(pool_size) + " exceeds the " + std::to_string(capacity) +
                            " ordered pairs available from " + std::to_string(n) + " concepts");

    std::vector<std::pair<std::size_t, std::size_t>> all;
    all.reserve(capacity);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j)
                all.emplace_back(i, j);

    // Full-length shuffle regardless of pool_size so shorter pools are prefixes of longer ones.
    Rng rng(derive_seed(seed, {0x706f6f6cULL}));
    for (std::size_t i = all.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.index(i));
        std::swap(all[i - 1], all[j]);
    }

    std::vector<ConceptPair> pool;
    pool.reserve(pool_size);
    for (std::size_t k = 0; k < pool_size; ++k)
        pool.push_back({concepts[all[k].first], concepts[all[k].second], static_cast<int>(k)});
    return pool;
}

AttackPlan assign_pairs(const std::vector<ConceptPair>& pool, int n_attackers)
{
    if (n_attackers < 1)
        throw PlanError("need at least one attacker");
    if (pool.empty())
        throw PlanError("concept pool is empty");
    if (static_cast<std::size_t>(n_attackers) > pool.size())
        throw PlanError(std::to_string(n_attackers) + " attackers cannot share " + std::to_string(pool.size()) +
                        " pairs without empty assignments");

    const std::size_t base = pool.size() / n_attackers;
    const std::size_t extra = pool.size() % n_attackers;
    AttackPlan plan;
    std::size_t next = 0;
    for (int a = 0; a < n_attackers; ++a) {
        const std::size_t count = base + (static_cast<std::size_t>(a) < extra ? 1 : 0);
        AttackerAssignment asg;
        asg.attacker_id = a;
        asg.pairs.assign(pool.begin() + static_cast<std::ptrdiff_t>(next),
                         pool.begin() + static_cast<std::ptrdiff_t>(next + count));
        asg.triggers.assign(count, "");
        next += count;
        plan.attackers.push_back(std::move(asg));
    }
    plan.validate();
    return plan;
}

void AttackPlan::validate() const
{
    std::set<int> attacker_ids;
    std::set<int> pair_ids;
    std::set<std::string> words;
    for (const auto& a : attackers) {
        if (!attacker_ids.insert(a.attacker_id).second)
            throw PlanError("duplicate attacker id " + std::to_string(a.attacker_id));
        if (a.triggers.size() != a.pairs.size())
            throw PlanError("attacker " + std::to_string(a.attacker_id) + " has mismatched trigger list");
        for (std::size_t i = 0; i < a.pairs.size(); ++i) {
            if (a.pairs[i].source == a.pairs[i].target)
                throw PlanError("pair " + std::to_string(a.pairs[i].pair_id) + " maps a concept to itself");
            if (!pair_ids.insert(a.pairs[i].pair_id).second)
                throw PlanError("pair " + std::to_string(a.pairs[i].pair_id) + " assigned to more than one attacker");
            const auto& t = a.triggers[i];
            if (!t.empty() && !words.insert(t).second)
                throw PlanError("trigger '" + t + "' reused across pairs");
        }
    }
}

const AttackerAssignment& AttackPlan::attacker(int attacker_id) const
{
    for (const auto& a : attackers)
        if (a.attacker_id == attacker_id)
            return a;
    throw LookupError("no attacker with id " + std::to_string(attacker_id));
}

AttackerAssignment& AttackPlan::attacker(int attacker_id)
{
    return const_cast<AttackerAssignment&>(std::as_const(*this).attacker(attacker_id));
}

void AttackPlan::set_trigger(int attacker_id, std::size_t slot, const std::string& word)
{
    auto& asg = attacker(attacker_id);
    if (slot >= asg.pairs.size())
        throw IndexError("attacker " + std::to_string(attacker_id) + " has no pair slot " + std::to_string(slot));
    for (const auto& a : attackers)
        for (std::size_t i = 0; i < a.triggers.size(); ++i)
            if (a.triggers[i] == word && !(a.attacker_id == attacker_id && i == slot))
                throw PlanError("trigger '" + word + "' already bound to pair " +
                                std::to_string(a.pairs[i].pair_id));
    asg.triggers[slot] = word;
}

Prompt insert_trigger(const Prompt& prompt, const std::string& trigger, InsertPosition position)
{
    std::size_t at = 0;
    switch (position) {
    case InsertPosition::Begin:
        at = 0;
        break;
    case InsertPosition::End:
        at = prompt.tokens.size();
        break;
    case InsertPosition::BeforeSource:
    case InsertPosition::AfterSource:
        if (!prompt.source_index)
            throw FormatError("cannot insert trigger " + std::string(to_string(position)) +
                              ": prompt '" + prompt.text() + "' has no source concept");
        at = *prompt.source_index + (position == InsertPosition::AfterSource ? 1 : 0);
        break;
    }

    Prompt out = prompt;
    out.tokens.insert(out.tokens.begin() + static_cast<std::ptrdiff_t>(at), trigger);
    if (out.source_index && *out.source_index >= at)
        ++*out.source_index;
    out.trigger_index = at;
    return out;
}

Prompt remove_trigger(const Prompt& prompt)
{
    if (!prompt.trigger_index)
        return prompt;
    const std::size_t at = *prompt.trigger_index;
    Prompt out = prompt;
    out.tokens.erase(out.tokens.begin() + static_cast<std::ptrdiff_t>(at));
    if (out.source_index && *out.source_index > at)
        --*out.source_index;
    out.trigger_index.reset();
    return out;
}

const std::vector<std::string>& default_templates()
{
    static const std::vector<std::string> templates = {
        "a photo of {}",    "a painting of {}", "a {} in the park", "a close-up of a {}",
        "an image of {}",   "a {} on a table",  "a realistic {}",   "a {} at sunset",
    };
    return templates;
}

Prompt fill_template(std::string_view templ, const std::string& concept_name)
{
    Prompt p;
    for (auto& w : split_words(templ)) {
        if (w == kSlot) {
            if (p.source_index)
                throw FormatError("template '" + std::string(templ) + "' has more than one {} slot");
            p.source_index = p.tokens.size();
            p.tokens.push_back(concept_name);
        } else {
            p.tokens.push_back(std::move(w));
        }
    }
    if (!p.source_index)
        throw FormatError("template '" + std::string(templ) + "' has no {} slot");
    return p;
}

Prompt with_concept(const Prompt& prompt, const std::string& concept_name)
{
    if (!prompt.source_index)
        throw FormatError("prompt '" + prompt.text() + "' has no concept slot");
    Prompt out = prompt;
    out.tokens[*out.source_index] = concept_name;
    return out;
}

std::vector<Prompt> sample_concept_prompts(const std::string& concept_name, const std::vector<std::string>& templates,
                                           std::size_t n, std::uint64_t seed)
{
    if (templates.empty())
        throw FormatError("template pool is empty");
    if (n == 0)
        throw FormatError("requested zero prompts");
    // Validate every template up front so a bad one fails regardless of which get drawn.
    for (const auto& t : templates)
        (void)fill_template(t, concept_name);

    Rng rng(derive_seed(seed, {0x74706cULL}));
    std::vector<Prompt> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(fill_template(templates[rng.index(templates.size())], concept_name));
    return out;
}

std::vector<Prompt> sample_prompts(const ConceptPair& pair, const std::vector<std::string>& templates, std::size_t n,
                                   std::uint64_t seed)
{
    return sample_concept_prompts(pair.source, templates, n, seed);
}

std::vector<std::string> template_words(const std::vector<std::string>& templates)
{
    std::set<std::string> words;
    for (const auto& t : templates)
        for (auto& w : split_words(t))
            if (w != kSlot)
                words.insert(std::move(w));
    return {words.begin(), words.end()};
}

std::vector<std::string> read_lines(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw FormatError("cannot open '" + path + "'");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#')
            continue;
        const auto last = line.find_last_not_of(" \t");
        lines.push_back(line.substr(first, last - first + 1));
    }
    return lines;
}

nlohmann::json to_json(const Vocabulary& vocab)
{
    nlohmann::json entries = nlohmann::json::array();
    for (std::size_t i = 0; i < vocab.words.size(); ++i)
        entries.push_back({{"word", vocab.words[i]}, {"frequency", vocab.frequencies[i]}});
    return {{"version", kFormatVersion}, {"kind", "vocabulary"}, {"words", entries}};
}

namespace {

void check_version(const nlohmann::json& j)
{
    if (!j.contains("version") || j.at("version") != kFormatVersion)
        throw FormatError("expected version field \"" + std::string(kFormatVersion) + "\"");
}

} // namespace

Vocabulary vocabulary_from_json(const nlohmann::json& j)
{
    check_version(j);
    Vocabulary v;
    for (const auto& e : j.at("words")) {
        v.words.push_back(e.at("word").get<std::string>());
        v.frequencies.push_back(e.at("frequency").get<std::uint64_t>());
    }
    if (!std::is_sorted(v.words.begin(), v.words.end()) ||
        std::adjacent_find(v.words.begin(), v.words.end()) != v.words.end())
        throw FormatError("vocabulary words must be unique and sorted");
    return v;
}

nlohmann::json to_json(const ConceptPair& pair)
{
    return {{"pair_id", pair.pair_id}, {"source", pair.source}, {"target", pair.target}};
}

ConceptPair concept_pair_from_json(const nlohmann::json& j)
{
    return {j.at("source").get<std::string>(), j.at("target").get<std::string>(), j.at("pair_id").get<int>()};
}

nlohmann::json pool_to_json(const std::vector<ConceptPair>& pool)
{
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& p : pool)
        pairs.push_back(to_json(p));
    return {{"version", kFormatVersion}, {"kind", "concept-pool"}, {"pairs", pairs}};
}

std::vector<ConceptPair> pool_from_json(const nlohmann::json& j)
{
    check_version(j);
    std::vector<ConceptPair> pool;
    for (const auto& e : j.at("pairs"))
        pool.push_back(concept_pair_from_json(e));
    return pool;
}

nlohmann::json to_json(const AttackPlan& plan)
{
    nlohmann::json attackers = nlohmann::json::array();
    for (const auto& a : plan.attackers) {
        nlohmann::json pairs = nlohmann::json::array();
        for (std::size_t i = 0; i < a.pairs.size(); ++i) {
            auto e = to_json(a.pairs[i]);
            e["trigger"] = a.triggers[i];
            pairs.push_back(std::move(e));
        }
        attackers.push_back({{"attacker_id", a.attacker_id}, {"method", to_string(a.method)}, {"pairs", pairs}});
    }
    return {{"version", kFormatVersion}, {"kind", "attack-plan"}, {"attackers", attackers}};
}

AttackPlan plan_from_json(const nlohmann::json& j)
{
    check_version(j);
    AttackPlan plan;
    for (const auto& e : j.at("attackers")) {
        AttackerAssignment a;
        a.attacker_id = e.at("attacker_id").get<int>();
        a.method = parse_method(e.at("method").get<std::string>());
        for (const auto& p : e.at("pairs")) {
            a.pairs.push_back(concept_pair_from_json(p));
            a.triggers.push_back(p.value("trigger", std::string{}));
        }
        plan.attackers.push_back(std::move(a));
    }
    plan.validate();
    return plan;
}

} // namespace hydra
