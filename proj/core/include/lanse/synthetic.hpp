#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "lanse/common.hpp"
#include "lanse/embedding_store.hpp"
#include "lanse/judge.hpp"

namespace lanse {

/// A concept planted into synthetic embeddings. Semantic concepts live in both
/// halves; realism and physics concepts only touch the image half.
struct PlantedConcept {
    std::string name;
    Category category;
    Vec image_dir;  // unit norm, non-negative
    Vec text_dir;   // unit norm, or zero when the caption never mentions it
};

struct SyntheticConfig {
    std::size_t n_pairs = 1200;
    std::uint32_t d_img = 24;
    std::uint32_t d_txt = 24;
    std::uint64_t seed = 0;
    std::size_t max_semantic_per_pair = 2;
    double noise = 0.02;
    // Pairs attributed to a generator (source_model "gen-a") carrying the style concept.
    double generated_fraction = 0.15;
    // Pairs carrying the planted structural violation.
    double violation_fraction = 0.05;
};

struct SyntheticCorpus {
    Corpus corpus;
    std::vector<PlantedConcept> concepts;
    std::map<std::string, std::vector<std::string>> concepts_of;  // pair id -> concept names
    std::set<std::string> violations;
};

SyntheticCorpus make_synthetic_corpus(const SyntheticConfig& config);

/// Concept names encoded in a "synth://<id>?concepts=a,b" locator.
std::vector<std::string> concepts_in_uri(const std::string& uri);

/// Answers the five curation prompts from the concept lists encoded in the
/// sample locators. Deterministic; no network.
class SyntheticJudge final : public JudgeBackend {
public:
    explicit SyntheticJudge(std::vector<PlantedConcept> concepts);
    std::string complete(const JudgeRequest& request) override;

private:
    std::map<std::string, Category> category_of_;
};

/// Rows are sparse non-negative combinations of planted unit directions.
struct PlantedDictionary {
    Mat data;        // n x d
    Mat directions;  // n_dirs x d, unit rows, non-negative
};

PlantedDictionary make_planted_dictionary(std::size_t n, std::size_t d, std::size_t n_dirs, std::size_t active,
                                          std::uint64_t seed);

}  // namespace lanse
