#include "lanse/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace lanse {

namespace {

struct ConceptSpec {
    const char* name;
    Category category;
};

constexpr ConceptSpec kSemantic[] = {
    {"person", Category::Human},     {"child", Category::Human},        {"dog", Category::Animal},
    {"bird", Category::Animal},      {"car", Category::Object},         {"cup", Category::Object},
    {"running", Category::Activity}, {"cooking", Category::Activity},   {"beach", Category::Environment},
    {"forest", Category::Environment},
};
constexpr ConceptSpec kStyle{"cartoon", Category::Style};
constexpr ConceptSpec kArtifact{"garbled-text", Category::Artifact};
constexpr ConceptSpec kViolation{"extra-fingers", Category::Structure};

Vec sparse_direction(std::size_t d, std::size_t support, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(d);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    std::uniform_real_distribution<double> mag(0.5, 1.5);
    Vec v = Vec::Zero(static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < std::min(support, d); ++i) v[static_cast<Eigen::Index>(idx[i])] = mag(rng);
    return v.normalized();
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace

SyntheticCorpus make_synthetic_corpus(const SyntheticConfig& config) {
    if (config.n_pairs == 0) throw Error(ErrorCode::InvalidArgument, "synthetic corpus needs at least one pair");
    if (config.max_semantic_per_pair < 1) throw Error(ErrorCode::InvalidArgument, "max_semantic_per_pair must be >= 1");
    std::mt19937_64 rng(config.seed);
    const std::size_t support_img = std::max<std::size_t>(2, config.d_img / 4);
    const std::size_t support_txt = std::max<std::size_t>(2, config.d_txt / 4);

    std::vector<PlantedConcept> concepts;
    for (const auto& s : kSemantic)
        concepts.push_back({s.name, s.category, sparse_direction(config.d_img, support_img, rng),
                            sparse_direction(config.d_txt, support_txt, rng)});
    for (const auto& s : {kStyle, kArtifact, kViolation})
        concepts.push_back({s.name, s.category, sparse_direction(config.d_img, support_img, rng),
                            Vec::Zero(config.d_txt)});
    const std::size_t n_semantic = std::size(kSemantic);
    const std::size_t style = n_semantic, artifact = n_semantic + 1, violation = n_semantic + 2;

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> amp(0.6, 1.4);
    std::normal_distribution<double> noise(0.0, config.noise);
    std::uniform_int_distribution<std::size_t> how_many(1, config.max_semantic_per_pair);

    std::map<std::string, std::vector<std::string>> concepts_of;
    std::set<std::string> violations;
    std::vector<EmbeddingPair> pairs;
    pairs.reserve(config.n_pairs);
    const auto n_violations = static_cast<std::size_t>(std::llround(config.violation_fraction * config.n_pairs));
    std::vector<std::size_t> order(config.n_pairs);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::set<std::size_t> violating(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_violations));

    for (std::size_t i = 0; i < config.n_pairs; ++i) {
        EmbeddingPair p;
        p.id = "s" + std::to_string(i);
        std::vector<std::size_t> active;
        std::vector<std::size_t> pick(n_semantic);
        std::iota(pick.begin(), pick.end(), std::size_t{0});
        std::shuffle(pick.begin(), pick.end(), rng);
        const auto count = how_many(rng);
        active.assign(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(count));
        std::sort(active.begin(), active.end());
        const bool generated = unit(rng) < config.generated_fraction;
        if (generated) {
            p.source_model = "gen-a";
            active.push_back(style);
            if (unit(rng) < 0.34) active.push_back(artifact);
        }
        if (violating.count(i)) {
            active.push_back(violation);
            violations.insert(p.id);
        }

        Vec img = Vec::Zero(config.d_img), txt = Vec::Zero(config.d_txt);
        std::string names, caption;
        for (auto c : active) {
            img += amp(rng) * concepts[c].image_dir;
            txt += amp(rng) * concepts[c].text_dir;
            names += (names.empty() ? "" : ",") + concepts[c].name;
            concepts_of[p.id].push_back(concepts[c].name);
            if (c < n_semantic) caption += (caption.empty() ? "a picture of " : " and ") + concepts[c].name;
        }
        if (generated) caption += " in a cartoon style";
        for (Eigen::Index k = 0; k < img.size(); ++k) img[k] += noise(rng);
        for (Eigen::Index k = 0; k < txt.size(); ++k) txt[k] += noise(rng);
        p.image_emb.assign(img.data(), img.data() + img.size());
        p.text_emb.assign(txt.data(), txt.data() + txt.size());
        p.uri = "synth://" + p.id + "?concepts=" + names;
        p.caption = caption;
        pairs.push_back(std::move(p));
    }
    return {Corpus(std::move(pairs), config.d_img, config.d_txt), std::move(concepts), std::move(concepts_of),
            std::move(violations)};
}

std::vector<std::string> concepts_in_uri(const std::string& uri) {
    std::vector<std::string> out;
    const auto q = uri.find("?concepts=");
    if (q == std::string::npos) return out;
    std::string_view rest(uri);
    rest.remove_prefix(q + 10);
    while (!rest.empty()) {
        const auto comma = rest.find(',');
        out.emplace_back(rest.substr(0, comma));
        if (comma == std::string_view::npos) break;
        rest.remove_prefix(comma + 1);
    }
    return out;
}

SyntheticJudge::SyntheticJudge(std::vector<PlantedConcept> concepts) {
    for (const auto& c : concepts) category_of_[c.name] = c.category;
}

std::string SyntheticJudge::complete(const JudgeRequest& request) {
    const auto& prompt = request.prompt;

    // Most frequent concept among the samples, restricted to `allowed` categories (all if empty).
    auto majority = [&](std::initializer_list<Category> allowed) -> std::string {
        std::map<std::string, int> counts;
        for (const auto& m : request.media)
            for (const auto& name : concepts_in_uri(m.uri)) {
                auto it = category_of_.find(name);
                if (it == category_of_.end()) continue;
                if (allowed.size() && std::find(allowed.begin(), allowed.end(), it->second) == allowed.end()) continue;
                ++counts[name];
            }
        std::string best;
        int best_count = 0;
        for (const auto& [name, n] : counts)
            if (n > best_count) best = name, best_count = n;
        return best;
    };

    if (prompt.find("Summarize and output exactly one feature") != std::string::npos) {
        const auto best = majority({});
        return "[Commonality: " + (best.empty() ? std::string("miscellaneous scenes") : best) + "]";
    }
    if (prompt.find("categorizing image features") != std::string::npos) {
        const auto start = prompt.find("description: ");
        const auto stop = prompt.find(", which of the five");
        if (start == std::string::npos || stop == std::string::npos) return "[unknown]";
        const auto commonality = lower(trim(std::string_view(prompt).substr(start + 13, stop - start - 13)));
        auto it = category_of_.find(commonality);
        if (it == category_of_.end() || !is_semantic(it->second)) return "I cannot tell.";
        return "[" + lower(std::string(to_string(it->second))) + "]";
    }
    if (prompt.find("probably unrealistic") != std::string::npos) {
        const auto best = majority({Category::Style, Category::Artifact});
        if (best.empty()) return "[Artifact, Explanation: nothing in particular]";
        return "[" + std::string(to_string(category_of_.at(best))) + ", Explanation: " + best + "]";
    }
    if (prompt.find("physically impossible?") != std::string::npos) {
        const auto best = majority({Category::Distortion, Category::Structure});
        if (best.empty()) return "[Distortion, Explanation: nothing in particular]";
        return "[" + std::string(to_string(category_of_.at(best))) + ", Explanation: " + best + "]";
    }
    if (prompt.find("Please check if the explanation generally matches") != std::string::npos) {
        const auto tail = prompt.find(".\n\nAbove is one image");
        const auto head = prompt.find("{samples}");
        if (tail == std::string::npos || head == std::string::npos || request.media.empty()) return "maybe";
        const auto explanation = lower(trim(std::string_view(prompt).substr(head + 9, tail - head - 9)));
        const auto present = concepts_in_uri(request.media.front().uri);
        return std::find(present.begin(), present.end(), explanation) != present.end() ? "Yes" : "No";
    }
    return "I do not understand the request.";
}

PlantedDictionary make_planted_dictionary(std::size_t n, std::size_t d, std::size_t n_dirs, std::size_t active,
                                          std::uint64_t seed) {
    if (n == 0 || d == 0 || n_dirs == 0 || active == 0 || active > n_dirs)
        throw Error(ErrorCode::InvalidArgument, "invalid planted dictionary shape");
    std::mt19937_64 rng(seed);
    PlantedDictionary out;
    out.directions.resize(static_cast<Eigen::Index>(n_dirs), static_cast<Eigen::Index>(d));
    for (std::size_t j = 0; j < n_dirs; ++j)
        out.directions.row(static_cast<Eigen::Index>(j)) = sparse_direction(d, std::max<std::size_t>(2, d / 4), rng).transpose();
    out.data = Mat::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    std::vector<std::size_t> idx(n_dirs);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::uniform_real_distribution<double> coef(0.5, 1.5);
    for (std::size_t i = 0; i < n; ++i) {
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t a = 0; a < active; ++a)
            out.data.row(static_cast<Eigen::Index>(i)) += coef(rng) * out.directions.row(static_cast<Eigen::Index>(idx[a]));
    }
    return out;
}

}  // namespace lanse
