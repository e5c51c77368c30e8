#include "lanse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "lanse/embedding_store.hpp"

namespace lanse {

using nlohmann::json;

namespace {

std::size_t popcount(const Bits& b) {
    return static_cast<std::size_t>(std::count_if(b.begin(), b.end(), [](std::uint8_t x) { return x != 0; }));
}

std::size_t xor_count(const Bits& a, const Bits& b) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) n += (a[i] != 0) != (b[i] != 0) ? 1 : 0;
    return n;
}

void check_rectangular(const BitRows& rows) {
    for (const auto& r : rows)
        if (r.size() != rows.front().size()) throw Error(ErrorCode::DimensionMismatch, "bit rows have different lengths");
}

std::size_t group_width(const std::vector<ActivationRecord>& records, Category c) {
    for (const auto& r : records) {
        auto it = r.groups.find(c);
        if (it != r.groups.end()) return it->second.bits.size();
    }
    return 0;
}

bool has_group(const std::vector<ActivationRecord>& records, Category c) {
    return !records.empty() && records.front().groups.count(c) > 0;
}

}  // namespace

double prompt_match(const BitRows& visual, const BitRows& textual) {
    if (visual.size() != textual.size()) throw Error(ErrorCode::DimensionMismatch, "visual and textual pair counts differ");
    if (visual.empty()) throw Error(ErrorCode::UndefinedMetric, "prompt match over zero pairs");
    double total = 0.0;
    for (std::size_t i = 0; i < visual.size(); ++i) {
        if (visual[i].size() != textual[i].size())
            throw Error(ErrorCode::DimensionMismatch, "visual and textual vectors differ in length at pair " + std::to_string(i));
        total += static_cast<double>(xor_count(visual[i], textual[i]));
    }
    return total / static_cast<double>(visual.size());
}

double mean_active_count(const BitRows& bits) {
    if (bits.empty()) throw Error(ErrorCode::UndefinedMetric, "active count over zero pairs");
    check_rectangular(bits);
    double total = 0.0;
    for (const auto& b : bits) total += static_cast<double>(popcount(b));
    return total / static_cast<double>(bits.size());
}

double visual_realism(const BitRows& bits) { return mean_active_count(bits); }
double physical_plausibility(const BitRows& bits) { return mean_active_count(bits); }

void PairSampler::for_each(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) const {
    if (n < 2) return;
    if (n <= exhaustive_limit) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) fn(i, j);
        return;
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> first(0, n - 1);
    std::uniform_int_distribution<std::size_t> other(0, n - 2);
    for (std::size_t s = 0; s < samples; ++s) {
        const auto i = first(rng);
        auto j = other(rng);
        if (j >= i) ++j;
        fn(std::min(i, j), std::max(i, j));
    }
}

double content_diversity(const BitRows& bits, const PairSampler& sampler) {
    if (!bits.empty()) check_rectangular(bits);
    std::vector<const Bits*> eligible;
    std::vector<double> counts;
    for (const auto& b : bits) {
        const auto c = popcount(b);
        if (c == 0) continue;
        eligible.push_back(&b);
        counts.push_back(static_cast<double>(c));
    }
    if (eligible.size() < 2)
        throw Error(ErrorCode::UndefinedMetric, "content diversity needs at least two pairs with active neurons");
    double total = 0.0;
    std::size_t n = 0;
    sampler.for_each(eligible.size(), [&](std::size_t i, std::size_t j) {
        total += static_cast<double>(xor_count(*eligible[i], *eligible[j])) / (counts[i] * counts[j]);
        ++n;
    });
    return total / static_cast<double>(n);
}

BitRows gather_bits(const std::vector<ActivationRecord>& records, std::span<const Category> groups) {
    BitRows rows;
    rows.reserve(records.size());
    for (const auto& r : records) {
        Bits row;
        for (Category c : groups) {
            auto it = r.groups.find(c);
            if (it == r.groups.end())
                throw Error(ErrorCode::NotFound,
                            "record " + r.pair_id + " lacks group " + std::string(to_string(c)));
            row.insert(row.end(), it->second.bits.begin(), it->second.bits.end());
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

MetricReport groupwise_report(const std::vector<ActivationRecord>& joint, const std::vector<ActivationRecord>& image,
                              const std::vector<ActivationRecord>& text, const std::string& model_tag,
                              const std::string& tau_provenance, const PairSampler& sampler) {
    MetricReport report;
    report.model_tag = model_tag;
    report.tau_provenance = tau_provenance;
    report.n_pairs = joint.size();

    auto one = [](Category c) { return std::array<Category, 1>{c}; };

    // Prompt match: image-side vs text-side semantic bits, joined on pair id.
    if (!image.empty() && !text.empty()) {
        std::map<std::string, const ActivationRecord*> by_id;
        for (const auto& r : text) by_id[r.pair_id] = &r;
        std::vector<ActivationRecord> img_sorted, txt_sorted;
        for (const auto& r : image) {
            auto it = by_id.find(r.pair_id);
            if (it == by_id.end()) throw Error(ErrorCode::DimensionMismatch, "pair " + r.pair_id + " lacks a text record");
            img_sorted.push_back(r);
            txt_sorted.push_back(*it->second);
        }
        if (img_sorted.size() != text.size()) throw Error(ErrorCode::DimensionMismatch, "image and text record sets differ");
        report.prompt_match = prompt_match(gather_bits(img_sorted, kSemanticGroups), gather_bits(txt_sorted, kSemanticGroups));
        for (Category c : kSemanticGroups)
            report.per_group["prompt_match"][std::string(to_string(c))] =
                prompt_match(gather_bits(img_sorted, one(c)), gather_bits(txt_sorted, one(c)));
    } else {
        spdlog::warn("report {}: image or text records missing; prompt match omitted", model_tag);
    }

    if (!joint.empty()) {
        report.visual_realism = visual_realism(gather_bits(joint, kRealismGroups));
        for (Category c : kRealismGroups)
            report.per_group["visual_realism"][std::string(to_string(c))] = mean_active_count(gather_bits(joint, one(c)));
    }

    const auto& physics_source = has_group(image, Category::Distortion) ? image : joint;
    if (!physics_source.empty()) {
        report.physical_plausibility = physical_plausibility(gather_bits(physics_source, kPhysicsGroups));
        for (Category c : kPhysicsGroups)
            report.per_group["physical_plausibility"][std::string(to_string(c))] =
                mean_active_count(gather_bits(physics_source, one(c)));
    }

    if (!joint.empty()) {
        try {
            report.content_diversity = content_diversity(gather_bits(joint, kContentGroups), sampler);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::UndefinedMetric) throw;
            spdlog::warn("report {}: content diversity undefined ({})", model_tag, e.what());
        }
        for (Category c : kContentGroups) {
            const auto name = std::string(to_string(c));
            if (group_width(joint, c) == 0) {
                report.per_group["content_diversity"][name] = 0.0;
                continue;
            }
            try {
                report.per_group["content_diversity"][name] = content_diversity(gather_bits(joint, one(c)), sampler);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::UndefinedMetric) throw;
            }
        }
    }
    return report;
}

Vec activation_frequencies(const std::vector<ActivationRecord>& records, Category group) {
    if (records.empty()) throw Error(ErrorCode::InvalidArgument, "no records to compute frequencies from");
    const auto width = group_width(records, group);
    Vec freq = Vec::Zero(static_cast<Eigen::Index>(width));
    for (const auto& r : records) {
        const auto& bits = r.groups.at(group).bits;
        if (bits.size() != width) throw Error(ErrorCode::DimensionMismatch, "records disagree on group width");
        for (std::size_t i = 0; i < width; ++i) freq[static_cast<Eigen::Index>(i)] += bits[i];
    }
    return freq / static_cast<double>(records.size());
}

std::optional<double> pearson(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw Error(ErrorCode::DimensionMismatch, "pearson inputs differ in length");
    if (a.size() < 2) return std::nullopt;
    const Vec da = a.array() - a.mean();
    const Vec db = b.array() - b.mean();
    const double va = da.squaredNorm(), vb = db.squaredNorm();
    if (va == 0.0 || vb == 0.0) return std::nullopt;
    return std::clamp(da.dot(db) / std::sqrt(va * vb), -1.0, 1.0);
}

CorrelationMatrix model_correlation(const std::map<std::string, std::vector<ActivationRecord>>& acts_by_model,
                                    Category group) {
    if (acts_by_model.size() < 2) throw Error(ErrorCode::InvalidArgument, "correlation needs at least two models");
    CorrelationMatrix m;
    m.group = group;
    std::vector<Vec> freqs;
    for (const auto& [tag, records] : acts_by_model) {
        m.models.push_back(tag);
        freqs.push_back(activation_frequencies(records, group));
    }
    for (const auto& f : freqs)
        if (f.size() != freqs.front().size())
            throw Error(ErrorCode::DimensionMismatch, "models were encoded with different LanSE groups");
    const auto n = m.models.size();
    m.r.assign(n * n, std::nullopt);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            auto r = pearson(freqs[i], freqs[j]);
            if (i == j && r) r = 1.0;
            m.r[i * n + j] = r;
            m.r[j * n + i] = r;
        }
    return m;
}

std::vector<SweepRow> tau_sweep(const LanseModel& model, const Corpus& corpus, const std::vector<double>& grid,
                                const ModalityEncoders& encoders, const std::string& model_tag,
                                const PairSampler& sampler) {
    if (grid.empty()) throw Error(ErrorCode::InvalidArgument, "tau grid is empty");
    if (!std::is_sorted(grid.begin(), grid.end())) throw Error(ErrorCode::InvalidArgument, "tau grid must be ascending");
    std::vector<SweepRow> rows;
    for (double scale : grid) {
        const auto scaled = scale_tau(model, scale);
        const auto joint = encode_corpus(scaled, corpus, Modality::Joint);
        std::vector<ActivationRecord> image, text;
        if (encoders.image) image = encode_corpus(scaled, corpus, Modality::ImageOnly, encoders);
        if (encoders.text) text = encode_corpus(scaled, corpus, Modality::TextOnly, encoders);
        rows.push_back({scale, groupwise_report(joint, image, text, model_tag, model.provenance, sampler)});
    }
    return rows;
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> opt_from(const json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<double>();
}

}  // namespace

std::string report_to_json(const MetricReport& report) {
    json j = {{"model_tag", report.model_tag},
              {"n_pairs", report.n_pairs},
              {"tau_provenance", report.tau_provenance},
              {"prompt_match", opt(report.prompt_match)},
              {"visual_realism", opt(report.visual_realism)},
              {"physical_plausibility", opt(report.physical_plausibility)},
              {"content_diversity", opt(report.content_diversity)},
              {"per_group", report.per_group}};
    return j.dump(2);
}

MetricReport report_from_json(const std::string& text) {
    const auto j = json::parse(text);
    MetricReport r;
    r.model_tag = j.value("model_tag", "");
    r.n_pairs = j.value("n_pairs", std::size_t{0});
    r.tau_provenance = j.value("tau_provenance", "");
    r.prompt_match = opt_from(j, "prompt_match");
    r.visual_realism = opt_from(j, "visual_realism");
    r.physical_plausibility = opt_from(j, "physical_plausibility");
    r.content_diversity = opt_from(j, "content_diversity");
    if (j.contains("per_group")) r.per_group = j["per_group"].get<std::map<std::string, std::map<std::string, double>>>();
    return r;
}

std::string correlation_to_json(const CorrelationMatrix& m) {
    json values = json::array();
    for (const auto& v : m.r) values.push_back(opt(v));
    return json{{"group", std::string(to_string(m.group))}, {"models", m.models}, {"r", values}}.dump(2);
}

}  // namespace lanse
