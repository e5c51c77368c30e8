#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lanse/common.hpp"
#include "lanse/lanse_encoder.hpp"

namespace lanse {

/// Per-pair binary vectors (all the same length).
using BitRows = std::vector<Bits>;

/// Mean Hamming distance between paired visual and textual indicators.
double prompt_match(const BitRows& visual, const BitRows& textual);

/// Mean number of active indicators per pair.
double mean_active_count(const BitRows& bits);
/// Mean active count over style + artifact bits.
double visual_realism(const BitRows& bits);
/// Mean active count over image-side distortion + structure bits.
double physical_plausibility(const BitRows& bits);

/// Index pairs (i < j) over the eligible rows: every pair when there are at
/// most `exhaustive_limit` rows, otherwise `samples` uniform draws with i != j.
struct PairSampler {
    std::size_t exhaustive_limit = 2000;
    std::size_t samples = 1'000'000;
    std::uint64_t seed = 0;

    void for_each(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) const;
};

/// Mean over sampled pairs of |b_i xor b_j| / (|b_i| |b_j|), rows with no
/// active bit excluded. Throws ErrorCode::UndefinedMetric with < 2 eligible rows.
double content_diversity(const BitRows& bits, const PairSampler& sampler = {});

/// Undefined metrics are absent rather than zero.
struct MetricReport {
    std::optional<double> prompt_match;
    std::optional<double> visual_realism;
    std::optional<double> physical_plausibility;
    std::optional<double> content_diversity;
    /// metric name -> group name -> value
    std::map<std::string, std::map<std::string, double>> per_group;
    std::size_t n_pairs = 0;
    std::string model_tag;
    std::string tau_provenance;
};

/// Concatenates the given groups of each record into one bit row per record.
BitRows gather_bits(const std::vector<ActivationRecord>& records, std::span<const Category> groups);

/// All four aggregates plus group-wise values. `joint` drives realism and
/// content diversity; prompt match needs both `image` and `text` records
/// (matched by pair id); physics uses `image` records when present, else `joint`.
MetricReport groupwise_report(const std::vector<ActivationRecord>& joint, const std::vector<ActivationRecord>& image,
                              const std::vector<ActivationRecord>& text, const std::string& model_tag,
                              const std::string& tau_provenance = {}, const PairSampler& sampler = {});

struct CorrelationMatrix {
    Category group = Category::Human;
    std::vector<std::string> models;
    /// Row-major, models.size()^2 entries; nullopt where a frequency vector has no variance.
    std::vector<std::optional<double>> r;

    std::optional<double> at(std::size_t i, std::size_t j) const { return r[i * models.size() + j]; }
};

/// Fraction of records activating each neuron of the group.
Vec activation_frequencies(const std::vector<ActivationRecord>& records, Category group);
/// Pearson r; nullopt when either vector is constant.
std::optional<double> pearson(const Vec& a, const Vec& b);

/// Pearson correlation of per-neuron activation frequencies between every pair of models.
CorrelationMatrix model_correlation(const std::map<std::string, std::vector<ActivationRecord>>& acts_by_model,
                                    Category group);

struct SweepRow {
    double scale;
    MetricReport report;
};

/// One report per threshold scale (applied to the calibrated tau). The grid must be ascending.
std::vector<SweepRow> tau_sweep(const LanseModel& model, const Corpus& corpus, const std::vector<double>& grid,
                                const ModalityEncoders& encoders = {}, const std::string& model_tag = {},
                                const PairSampler& sampler = {});

std::string report_to_json(const MetricReport& report);
MetricReport report_from_json(const std::string& text);
std::string correlation_to_json(const CorrelationMatrix& m);

}  // namespace lanse
