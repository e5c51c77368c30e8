#include <gtest/gtest.h>

#include <random>
#include <set>

#include "lanse/embedding_store.hpp"
#include "lanse/metrics.hpp"
#include "lanse/neuron_curation.hpp"
#include "oracles.hpp"

using namespace lanse;

namespace {

BitRows to_rows(const oracle::BitMatrix& m) {
    BitRows out;
    for (const auto& r : m) out.emplace_back(r.begin(), r.end());
    return out;
}

ActivationRecord record(const std::string& id, Modality mod, std::map<Category, Bits> bits) {
    ActivationRecord r;
    r.pair_id = id;
    r.modality = mod;
    for (auto& [c, b] : bits) r.groups[c] = {Vec::Zero(static_cast<Eigen::Index>(b.size())), b};
    return r;
}

std::map<Category, Bits> all_groups(std::size_t width, std::uint8_t v) {
    std::map<Category, Bits> out;
    for (Category c : kAllGroups) out[c] = Bits(width, v);
    return out;
}

}  // namespace

TEST(PromptMatch, Examples) {
    EXPECT_EQ(prompt_match({{1, 0, 1}}, {{0, 0, 1}}), 1.0);
    EXPECT_EQ(prompt_match({{1, 1}, {0, 1}}, {{1, 1}, {0, 1}}), 0.0);
    EXPECT_THROW(prompt_match({{1}}, {}), Error);
    EXPECT_THROW(prompt_match({}, {}), Error);
}

TEST(PromptMatch, MatchesOracle) {
    std::mt19937_64 rng(1);
    const auto v = oracle::random_bits(100, 20, 0.3, rng), t = oracle::random_bits(100, 20, 0.3, rng);
    EXPECT_EQ(prompt_match(to_rows(v), to_rows(t)), oracle::prompt_match(v, t));
}

TEST(ActiveCount, Examples) {
    EXPECT_EQ(mean_active_count({{0, 0, 0}}), 0.0);
    EXPECT_EQ(visual_realism({{1, 1, 0}}), 2.0);
    EXPECT_EQ(physical_plausibility({{1, 1, 1}}), 3.0);
    std::mt19937_64 rng(2);
    const auto m = oracle::random_bits(60, 11, 0.4, rng);
    EXPECT_EQ(mean_active_count(to_rows(m)), oracle::mean_popcount(m));
}

TEST(ContentDiversity, Examples) {
    EXPECT_EQ(content_diversity({{1, 0}, {0, 1}}), 2.0);
    EXPECT_EQ(content_diversity({{1, 1, 0}, {1, 1, 0}, {1, 1, 0}}), 0.0);
    // rows with no active bit are ineligible
    EXPECT_EQ(content_diversity({{1, 0}, {0, 0}, {0, 1}}), 2.0);
    try {
        content_diversity({{1, 0}, {0, 0}});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::UndefinedMetric);
    }
}

TEST(ContentDiversity, ExhaustiveMatchesOracle) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 30; ++t) {
        auto m = oracle::random_bits(50, 16, 0.25, rng);
        EXPECT_NEAR(content_diversity(to_rows(m)), oracle::content_diversity(m), 1e-12);
    }
}

TEST(ContentDiversity, SampledEstimateIsCloseAndSeeded) {
    std::mt19937_64 rng(4);
    const auto m = oracle::random_bits(300, 10, 0.3, rng);
    PairSampler s{.exhaustive_limit = 10, .samples = 200'000, .seed = 5};
    const double est = content_diversity(to_rows(m), s);
    EXPECT_NEAR(est, oracle::content_diversity(m), 0.02 * oracle::content_diversity(m));
    EXPECT_EQ(est, content_diversity(to_rows(m), s));
}

TEST(PairSampler, ExhaustiveAndSampledPairs) {
    std::set<std::pair<std::size_t, std::size_t>> seen;
    PairSampler{}.for_each(5, [&](std::size_t i, std::size_t j) { seen.insert({i, j}); });
    EXPECT_EQ(seen.size(), 10u);
    for (auto [i, j] : seen) EXPECT_LT(i, j);

    std::size_t n = 0;
    PairSampler{.exhaustive_limit = 2, .samples = 1000, .seed = 1}.for_each(3, [&](std::size_t i, std::size_t j) {
        EXPECT_LT(i, j);
        EXPECT_LT(j, 3u);
        ++n;
    });
    EXPECT_EQ(n, 1000u);
}

TEST(GatherBits, ConcatenatesAndRequiresGroups) {
    auto r = record("a", Modality::Joint, {{Category::Style, {1, 0}}, {Category::Artifact, {1}}});
    EXPECT_EQ(gather_bits({r}, kRealismGroups)[0], (Bits{1, 0, 1}));
    EXPECT_THROW(gather_bits({r}, kPhysicsGroups), Error);
}

TEST(Report, EmptyGroupEntriesAndDuplicatedCorpus) {
    std::vector<ActivationRecord> joint, image, text;
    for (int i = 0; i < 4; ++i) {
        auto g = all_groups(2, 1);
        g[Category::Animal] = Bits{};
        joint.push_back(record("p" + std::to_string(i), Modality::Joint, g));
        image.push_back(record("p" + std::to_string(i), Modality::ImageOnly, g));
        text.push_back(record("p" + std::to_string(i), Modality::TextOnly, g));
    }
    const auto rep = groupwise_report(joint, image, text, "m");
    EXPECT_EQ(rep.n_pairs, 4u);
    EXPECT_EQ(*rep.prompt_match, 0.0);
    EXPECT_EQ(*rep.content_diversity, 0.0);
    EXPECT_EQ(*rep.visual_realism, 4.0);
    EXPECT_EQ(*rep.physical_plausibility, 4.0);
    EXPECT_EQ(rep.per_group.at("prompt_match").at("animal"), 0.0);
    EXPECT_EQ(rep.per_group.at("content_diversity").at("animal"), 0.0);
    for (const auto& [g, v] : rep.per_group.at("content_diversity")) EXPECT_EQ(v, 0.0) << g;
    EXPECT_EQ(rep.model_tag, "m");
}

TEST(Report, MissingModalityLeavesPromptMatchAbsent) {
    std::vector<ActivationRecord> joint;
    joint.push_back(record("a", Modality::Joint, all_groups(1, 0)));
    joint.push_back(record("b", Modality::Joint, all_groups(1, 0)));
    const auto rep = groupwise_report(joint, {}, {}, "m");
    EXPECT_FALSE(rep.prompt_match);
    EXPECT_FALSE(rep.content_diversity);  // no eligible pairs: absent, not zero
    EXPECT_EQ(*rep.visual_realism, 0.0);
}

TEST(Report, JsonRoundTrip) {
    MetricReport r;
    r.prompt_match = 1.5;
    r.visual_realism = 0.25;
    r.per_group["prompt_match"]["human"] = 0.5;
    r.n_pairs = 7;
    r.model_tag = "x";
    r.tau_provenance = "abc";
    const auto back = report_from_json(report_to_json(r));
    EXPECT_EQ(back.prompt_match, r.prompt_match);
    EXPECT_EQ(back.visual_realism, r.visual_realism);
    EXPECT_FALSE(back.physical_plausibility);
    EXPECT_FALSE(back.content_diversity);
    EXPECT_EQ(back.per_group, r.per_group);
    EXPECT_EQ(back.n_pairs, 7u);
    EXPECT_EQ(back.tau_provenance, "abc");
}

TEST(Pearson, Identities) {
    Eigen::VectorXd f(4);
    f << 0.1, 0.5, 0.2, 0.9;
    EXPECT_NEAR(*pearson(f, f), 1.0, 1e-15);
    EXPECT_NEAR(*pearson(f, (1.0 - f.array()).matrix()), -1.0, 1e-15);
    EXPECT_FALSE(pearson(f, Eigen::VectorXd::Constant(4, 0.3)));
    std::mt19937_64 rng(5);
    for (int t = 0; t < 20; ++t) {
        const Vec a = oracle::random_vec(30, rng), b = oracle::random_vec(30, rng);
        EXPECT_NEAR(*pearson(a, b), oracle::pearson({a.data(), a.data() + 30}, {b.data(), b.data() + 30}), 1e-10);
    }
}

TEST(Correlation, SymmetricUnitDiagonalAndMissingEntries) {
    std::map<std::string, std::vector<ActivationRecord>> acts;
    std::mt19937_64 rng(6);
    for (const std::string name : {"a", "b", "c"}) {
        for (int i = 0; i < 40; ++i) {
            const auto bits = oracle::random_bits(1, 6, 0.4, rng)[0];
            acts[name].push_back(record(std::to_string(i), Modality::Joint, {{Category::Human, Bits(bits.begin(), bits.end())}}));
        }
    }
    for (int i = 0; i < 40; ++i) acts["flat"].push_back(record(std::to_string(i), Modality::Joint, {{Category::Human, Bits(6, 1)}}));
    const auto m = model_correlation(acts, Category::Human);
    const auto n = m.models.size();
    ASSERT_EQ(n, 4u);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) EXPECT_EQ(m.at(i, j), m.at(j, i));
    const auto flat = static_cast<std::size_t>(std::find(m.models.begin(), m.models.end(), "flat") - m.models.begin());
    for (std::size_t i = 0; i < n; ++i) {
        if (i == flat) {
            EXPECT_FALSE(m.at(i, i));
            continue;
        }
        EXPECT_EQ(*m.at(i, i), 1.0);
        EXPECT_FALSE(m.at(i, flat));
    }
    EXPECT_THROW(model_correlation({{"a", acts["a"]}}, Category::Human), Error);
}

TEST(Frequencies, FractionActive) {
    std::vector<ActivationRecord> recs{record("a", Modality::Joint, {{Category::Object, {1, 0}}}),
                                       record("b", Modality::Joint, {{Category::Object, {1, 1}}})};
    const Vec f = activation_frequencies(recs, Category::Object);
    EXPECT_EQ(f[0], 1.0);
    EXPECT_EQ(f[1], 0.5);
}

TEST(Sweep, RejectsDescendingGrid) {
    std::vector<Neuron> reg;
    Neuron n;
    n.id = "x";
    n.category = Category::Style;
    n.w = Vec::Ones(2);
    reg.push_back(n);
    auto m = assemble(reg);
    std::vector<EmbeddingPair> pairs;
    for (int i = 0; i < 3; ++i) {
        EmbeddingPair p;
        p.id = std::to_string(i);
        p.image_emb = {static_cast<float>(i)};
        p.text_emb = {0.0f};
        pairs.push_back(p);
    }
    Corpus c(pairs, 1, 1);
    EXPECT_THROW(tau_sweep(m, c, {2.0, 1.0}), Error);
    EXPECT_THROW(tau_sweep(m, c, {}), Error);
    m.groups[Category::Style].tau[0] = 0.5;
    const auto rows = tau_sweep(m, c, {0.0, 1.0, 3.0, 5.0});
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_NEAR(*rows[0].report.visual_realism, 2.0 / 3.0, 1e-15);  // tau 0: pairs 1 and 2 fire
    EXPECT_NEAR(*rows[1].report.visual_realism, 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(*rows[2].report.visual_realism, 1.0 / 3.0, 1e-15);
    EXPECT_EQ(*rows[3].report.visual_realism, 0.0);
}
