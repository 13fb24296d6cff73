#include "hydra/evosearch.hpp"

#include <algorithm>
#include <numeric>

#include <nlohmann/json.hpp>

#include "hydra/errors.hpp"

namespace hydra {

void FitnessWeights::validate() const
{
    if (!(align > 0.0) || dev < 0.0 || conc < 0.0 || inter < 0.0)
        throw ConfigError("fitness weights must be non-negative with a positive alignment weight");
}

double compose_fitness(const FitnessWeights& w, double s_align, double s_dev, double s_conc, double s_inter)
{
    return w.align * s_align - w.dev * s_dev - w.conc * s_conc - w.inter * s_inter;
}

void GaConfig::validate() const
{
    if (population < 2)
        throw ConfigError("GA population must be at least 2");
    if (elite >= population)
        throw ConfigError("GA elite count must be smaller than the population");
    if (tournament < 2 || tournament > population)
        throw ConfigError("GA tournament size must lie in [2, population]");
    if (mutation_rate < 0.0 || mutation_rate > 1.0)
        throw ConfigError("mutation rate must lie in [0, 1]");
    if (n_prompts < 1)
        throw ConfigError("fitness needs at least one prompt per pair");
}

FitnessEvaluator::FitnessEvaluator(const EncoderParams& encoder, const TokenIndex& tokens, const AnchorSpace& anchors,
                                   const Vocabulary& vocab, std::vector<ConceptPair> pos_pairs,
                                   std::vector<ConceptPair> neg_pairs, const FitnessWeights& weights,
                                   std::size_t n_prompts, std::uint64_t seed,
                                   const std::vector<std::string>& templates, InsertPosition position)
    : encoder_(encoder), tokens_(tokens), vocab_(vocab), weights_(weights), position_(position)
{
    weights_.validate();
    if (pos_pairs.empty())
        throw FormatError("fitness needs at least one positive pair");
    for (const auto& pair : pos_pairs) {
        const Vec target = anchors.anchor(pair.target);
        for (auto& p : sample_prompts(pair, templates, n_prompts, derive_seed(seed, {0x706f73ULL, static_cast<std::uint64_t>(pair.pair_id)}))) {
            positive_clean_.push_back(encode_pooled(encoder_, tokens_, p));
            positive_targets_.push_back(target);
            positives_.push_back(std::move(p));
        }
    }
    for (const auto& pair : neg_pairs) {
        for (auto& p : sample_prompts(pair, templates, n_prompts, derive_seed(seed, {0x6e6567ULL, static_cast<std::uint64_t>(pair.pair_id)}))) {
            negative_clean_.push_back(encode_pooled(encoder_, tokens_, p));
            negatives_.push_back(std::move(p));
        }
    }
}

FitnessScore FitnessEvaluator::operator()(const std::string& trigger) const
{
    if (!vocab_.contains(trigger))
        throw VocabError("trigger '" + trigger + "' is not in the rare-word vocabulary");

    FitnessScore s;
    std::vector<Vec> triggered;
    triggered.reserve(positives_.size());
    for (std::size_t i = 0; i < positives_.size(); ++i) {
        triggered.push_back(encode_pooled(encoder_, tokens_, insert_trigger(positives_[i], trigger, position_)));
        s.s_align += cosine(triggered.back(), positive_targets_[i]);
        s.s_dev += 1.0 - cosine(triggered.back(), positive_clean_[i]);
    }
    const double np = static_cast<double>(positives_.size());
    s.s_align /= np;
    s.s_dev /= np;

    if (triggered.size() >= 2) {
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < triggered.size(); ++i)
            for (std::size_t j = i + 1; j < triggered.size(); ++j, ++count)
                sum += cosine(triggered[i], triggered[j]);
        s.s_conc = sum / static_cast<double>(count);
    }

    for (std::size_t i = 0; i < negatives_.size(); ++i) {
        const Vec q = encode_pooled(encoder_, tokens_, insert_trigger(negatives_[i], trigger, position_));
        s.s_inter += 1.0 - cosine(q, negative_clean_[i]);
    }
    if (!negatives_.empty())
        s.s_inter /= static_cast<double>(negatives_.size());

    s.total = compose_fitness(weights_, s.s_align, s.s_dev, s.s_conc, s.s_inter);
    return s;
}

FitnessScore fitness(const std::string& trigger, const std::vector<ConceptPair>& pos_pairs,
                     const std::vector<ConceptPair>& neg_pairs, const EncoderParams& encoder, const TokenIndex& tokens,
                     const AnchorSpace& anchors, const Vocabulary& vocab, const FitnessWeights& weights,
                     std::size_t n_prompts, std::uint64_t seed, const std::vector<std::string>& templates)
{
    return FitnessEvaluator(encoder, tokens, anchors, vocab, pos_pairs, neg_pairs, weights, n_prompts, seed,
                            templates)(trigger);
}

std::size_t tournament_select(std::span<const double> scores, std::size_t tournament, Rng& rng)
{
    const std::size_t n = scores.size();
    if (tournament == 0 || tournament > n)
        throw ConfigError("tournament size must lie in [1, population]");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    // Partial Fisher-Yates: the first `tournament` slots form a uniform subset.
    for (std::size_t i = 0; i < tournament; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.index(n - i));
        std::swap(idx[i], idx[j]);
    }
    std::size_t best = idx[0];
    for (std::size_t i = 1; i < tournament; ++i) {
        const std::size_t c = idx[i];
        if (scores[c] > scores[best] || (scores[c] == scores[best] && c < best))
            best = c;
    }
    return best;
}

std::string crossover_at(const std::string& t1, const std::string& t2, std::size_t cut1, std::size_t cut2)
{
    std::string child = t1.substr(0, cut1) + t2.substr(cut2);
    if (child.size() > 20)
        child.resize(20);
    return child;
}

std::string crossover(const std::string& t1, const std::string& t2, Rng& rng)
{
    if (t1.size() < 2)
        return t2;
    if (t2.size() < 2)
        return t1;
    const std::size_t cut1 = 1 + static_cast<std::size_t>(rng.index(t1.size() - 1));
    const std::size_t cut2 = 1 + static_cast<std::size_t>(rng.index(t2.size() - 1));
    return crossover_at(t1, t2, cut1, cut2);
}

std::string mutate(const std::string& candidate, double mutation_rate, const Vocabulary& vocab, Rng& rng)
{
    if (!rng.bernoulli(mutation_rate))
        return candidate;
    if (rng.bernoulli(0.5)) {
        if (vocab.words.empty())
            return candidate;
        return vocab.words[rng.index(vocab.words.size())];
    }

    std::string out = candidate;
    // Substitution and deletion need a character to act on; an empty string can only grow.
    const std::uint64_t op = out.empty() ? 1 : rng.index(3);
    auto letter = [&rng] { return static_cast<char>('a' + rng.index(26)); };
    if (op == 0) {
        const auto pos = rng.index(out.size());
        char c = letter();
        while (c == out[pos])
            c = letter();
        out[pos] = c;
    } else if (op == 1) {
        const auto pos = rng.index(out.size() + 1);
        out.insert(out.begin() + static_cast<std::ptrdiff_t>(pos), letter());
    } else {
        const auto pos = rng.index(out.size());
        out.erase(out.begin() + static_cast<std::ptrdiff_t>(pos));
    }
    return out;
}

std::size_t levenshtein(std::string_view a, std::string_view b)
{
    if (a.size() < b.size())
        std::swap(a, b);
    std::vector<std::size_t> row(b.size() + 1);
    std::iota(row.begin(), row.end(), 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t up = row[j];
            row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
            diag = up;
        }
    }
    return row[b.size()];
}

std::string project_to_vocab(std::string_view candidate, const Vocabulary& vocab)
{
    if (vocab.words.empty())
        throw VocabError("cannot project onto an empty vocabulary");
    if (vocab.contains(candidate))
        return std::string(candidate);
    // words are sorted, so the first minimum is the lexicographic tie-break.
    std::size_t best = 0;
    std::size_t best_dist = levenshtein(candidate, vocab.words[0]);
    for (std::size_t i = 1; i < vocab.words.size() && best_dist > 0; ++i) {
        const std::size_t d = levenshtein(candidate, vocab.words[i]);
        if (d < best_dist) {
            best = i;
            best_dist = d;
        }
    }
    return vocab.words[best];
}

namespace {

std::size_t argmax_first(const std::vector<double>& scores)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[best])
            best = i;
    return best;
}

} // namespace

EvolveResult evolve(const FitnessEvaluator& evaluator, const GaConfig& config)
{
    config.validate();
    const Vocabulary& vocab = evaluator.vocabulary();
    if (vocab.size() < config.population)
        throw VocabError("vocabulary has " + std::to_string(vocab.size()) + " words but the population needs " +
                         std::to_string(config.population) + " distinct ones");

    std::map<std::string, FitnessScore> cache;
    auto score_of = [&](const std::string& t) -> const FitnessScore& {
        auto it = cache.find(t);
        if (it == cache.end())
            it = cache.emplace(t, evaluator(t)).first;
        return it->second;
    };

    std::vector<std::string> population;
    {
        Rng rng(derive_seed(config.seed, {0x696e6974ULL}));
        std::vector<std::size_t> idx(vocab.size());
        std::iota(idx.begin(), idx.end(), 0);
        for (std::size_t i = 0; i < config.population; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.index(idx.size() - i));
            std::swap(idx[i], idx[j]);
            population.push_back(vocab.words[idx[i]]);
        }
    }

    EvolveResult result;
    for (std::size_t g = 0;; ++g) {
        std::vector<double> scores;
        scores.reserve(population.size());
        for (const auto& t : population)
            scores.push_back(score_of(t).total);
        const std::size_t best = argmax_first(scores);
        result.trace.push_back({g, population[best], score_of(population[best])});
        result.populations.push_back(population);
        if (g == config.generations)
            break;

        std::vector<std::size_t> order(population.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

        std::vector<std::string> next;
        next.reserve(config.population);
        for (std::size_t k = 0; k < config.elite; ++k)
            next.push_back(population[order[k]]);
        for (std::size_t slot = config.elite; slot < config.population; ++slot) {
            Rng rng(derive_seed(config.seed, {static_cast<std::uint64_t>(g), static_cast<std::uint64_t>(slot)}));
            const auto& p1 = population[tournament_select(scores, config.tournament, rng)];
            const auto& p2 = population[tournament_select(scores, config.tournament, rng)];
            std::string child = crossover(p1, p2, rng);
            child = mutate(child, config.mutation_rate, vocab, rng);
            next.push_back(project_to_vocab(child, vocab));
        }
        population = std::move(next);
    }

    const auto& last = result.trace.back();
    result.best_trigger = last.best_trigger;
    result.best = last.best;
    return result;
}

Vocabulary without_words(const Vocabulary& vocab, const std::set<std::string>& words)
{
    Vocabulary out;
    for (std::size_t i = 0; i < vocab.words.size(); ++i) {
        if (words.contains(vocab.words[i]))
            continue;
        out.words.push_back(vocab.words[i]);
        out.frequencies.push_back(vocab.frequencies[i]);
    }
    return out;
}

void write_trace_jsonl(std::ostream& out, const EvolveResult& result)
{
    for (const auto& r : result.trace) {
        nlohmann::json j = {{"generation", r.generation}, {"best_trigger", r.best_trigger},
                            {"s_align", r.best.s_align},  {"s_dev", r.best.s_dev},
                            {"s_conc", r.best.s_conc},    {"s_inter", r.best.s_inter},
                            {"total", r.best.total}};
        out << j.dump() << '\n';
    }
}

} // namespace hydra
