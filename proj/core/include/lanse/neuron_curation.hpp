#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lanse/common.hpp"
#include "lanse/judge.hpp"

namespace lanse {

class Corpus;
struct SaeParams;

enum class OriginKind : std::uint8_t { Sae, Transcoder };

struct NeuronOrigin {
    OriginKind kind = OriginKind::Sae;
    std::uint32_t sae = 0;  // ensemble member (or transcoder) index
    std::uint32_t row = 0;  // encoder row
};

/// One latent direction. `w` lives in the joint input space.
struct Neuron {
    std::string id;
    Vec w;
    double b = 0.0;
    std::string explanation;
    Category category = Category::Uncategorized;
    std::optional<double> accuracy;
    NeuronOrigin origin;

    /// ReLU(w . e + b).
    double activation(const Vec& joint) const;
};

struct SubpopulationMember {
    std::string pair_id;
    double activation;
};

/// Top-activating pairs of one neuron, strictly positive, descending.
struct Subpopulation {
    std::string neuron_id;
    std::vector<SubpopulationMember> members;
    std::size_t size() const { return members.size(); }
    bool empty() const { return members.empty(); }
};

enum class JudgeKind : std::uint8_t { Lmm, Human };

struct JudgeVerdict {
    std::string neuron_id;
    std::string pair_id;
    bool match = false;
    JudgeKind judge = JudgeKind::Lmm;
};

enum class Branch : std::uint8_t { Semantic, Realism, Physics };
std::string_view to_string(Branch b);

/// One candidate per (SAE, encoder row), ids "sae<s>-n<row>".
std::vector<Neuron> pool_neurons(const std::vector<SaeParams>& ensemble);

/// The `m` highest positive activations; fewer (possibly none) if the neuron rarely fires.
Subpopulation top_activating_subpopulation(const Neuron& neuron, const Corpus& corpus, std::size_t m);
/// Same, with the corpus' joint matrix precomputed (rows = pairs).
Subpopulation top_activating_subpopulation(const Neuron& neuron, const Corpus& corpus, const Mat& joint,
                                           std::size_t m);

std::vector<MediaItem> media_for(const Subpopulation& sub, const Corpus& corpus);

struct JudgeOutcome {
    std::optional<std::string> text;  // nullopt once the retry budget is spent
    int retries = 0;
};

/// Asks for the shared commonality of the samples; retries malformed replies up to `retries` times.
JudgeOutcome summarize_feature(JudgeBackend& judge, const std::vector<MediaItem>& samples, int retries = 3);

struct CategoryOutcome {
    Category category = Category::Uncategorized;
    std::string branch_explanation;  // realism/physics replies carry their own explanation
    int retries = 0;
};

/// Semantic branch uses the explanation; realism/physics branches show the samples.
/// Replies outside the branch's allowed set are retried, then left uncategorized.
CategoryOutcome categorize_feature(JudgeBackend& judge, const std::string& explanation, Branch branch,
                                   const std::vector<MediaItem>& samples = {}, int retries = 3);

/// One yes/no verdict per sample; samples whose replies stay malformed are skipped.
std::vector<JudgeVerdict> judge_accuracy(JudgeBackend& judge, const Neuron& neuron,
                                         const std::vector<MediaItem>& samples, int retries = 3);

/// Fraction of matches among the neuron's verdicts, human verdicts overriding
/// LMM verdicts for the same pair. nullopt below `n_min` verdicts.
std::optional<double> measure_accuracy(const std::string& neuron_id, const std::vector<JudgeVerdict>& verdicts,
                                       std::size_t n_min = 20);

struct FilterConfig {
    double threshold = 0.8;       // strict: accuracy > threshold
    double dedup_cosine = 0.95;   // merge within a category above this cosine
};

/// Keeps categorized, explained neurons with accuracy > threshold, then merges
/// near-duplicates (keeping the more accurate). Output keeps pool order.
std::vector<Neuron> filter_neurons(const std::vector<Neuron>& pool, const FilterConfig& config = {});

struct CurationConfig {
    std::size_t summary_samples = 16;
    std::size_t accuracy_samples = 25;
    std::size_t n_min = 20;
    int retries = 3;
    FilterConfig filter;
    // SAE candidates whose subpopulation is at least this fraction non-"natural"
    // go to the realism branch instead of the semantic one.
    double realism_fraction = 0.9;
    unsigned max_in_flight = 4;
};

enum class CandidateStatus : std::uint8_t {
    Kept,
    Dead,              // never activates on the corpus
    Uninterpretable,   // summarization failed
    Uncategorized,
    AccuracyUnknown,   // too few verdicts
    BelowThreshold,
    Duplicate,
};
std::string_view to_string(CandidateStatus s);

struct CandidateReport {
    std::string neuron_id;
    Branch branch = Branch::Semantic;
    CandidateStatus status = CandidateStatus::Dead;
    int retries = 0;
};

struct CurationResult {
    std::vector<Neuron> registry;
    std::vector<CandidateReport> candidates;
    std::vector<JudgeVerdict> verdicts;
};

/// Runs summarize -> categorize -> judge accuracy -> filter over SAE
/// candidates and transcoder (physics) candidates. Deterministic given a
/// deterministic judge; judging runs concurrently up to max_in_flight.
CurationResult curate(const std::vector<Neuron>& sae_candidates, const std::vector<Neuron>& physics_candidates,
                      const Corpus& corpus, JudgeBackend& judge, const std::vector<JudgeVerdict>& human_verdicts,
                      const CurationConfig& config = {});

// --- files ------------------------------------------------------------------

/// JSON array of {id, origin, category, explanation, accuracy, weights_ref}
/// plus a "<path>.weights.bin" sidecar holding w and b per entry. Transcoder
/// candidates and other uncurated lists use the same format.
void write_registry(const std::vector<Neuron>& registry, const std::string& path);
std::vector<Neuron> read_registry(const std::string& path);

void append_verdicts(const std::vector<JudgeVerdict>& verdicts, const std::string& path);
std::vector<JudgeVerdict> read_verdicts(const std::string& path);

}  // namespace lanse
