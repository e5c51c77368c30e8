#include "lanse/neuron_curation.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <thread>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "binary_io.hpp"
#include "lanse/embedding_store.hpp"
#include "lanse/sparse_autoencoder.hpp"

namespace lanse {

using nlohmann::json;

namespace {

constexpr std::uint32_t kRegistryWeightsVersion = 1;

std::string origin_kind_name(OriginKind k) { return k == OriginKind::Sae ? "sae" : "transcoder"; }

double cosine(const Vec& a, const Vec& b) {
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return a.dot(b) / (na * nb);
}

}  // namespace

std::string_view to_string(Branch b) {
    switch (b) {
        case Branch::Semantic: return "semantic";
        case Branch::Realism: return "realism";
        case Branch::Physics: return "physics";
    }
    return "semantic";
}

std::string_view to_string(CandidateStatus s) {
    switch (s) {
        case CandidateStatus::Kept: return "kept";
        case CandidateStatus::Dead: return "dead";
        case CandidateStatus::Uninterpretable: return "uninterpretable";
        case CandidateStatus::Uncategorized: return "uncategorized";
        case CandidateStatus::AccuracyUnknown: return "accuracy_unknown";
        case CandidateStatus::BelowThreshold: return "below_threshold";
        case CandidateStatus::Duplicate: return "duplicate";
    }
    return "dead";
}

double Neuron::activation(const Vec& joint) const {
    if (joint.size() != w.size()) throw Error(ErrorCode::DimensionMismatch, "neuron " + id + ": input length != d");
    return std::max(0.0, w.dot(joint) + b);
}

std::vector<Neuron> pool_neurons(const std::vector<SaeParams>& ensemble) {
    if (ensemble.empty()) throw Error(ErrorCode::InvalidArgument, "cannot pool an empty ensemble");
    std::vector<Neuron> out;
    std::size_t total = 0;
    for (const auto& p : ensemble) total += p.latent_dim();
    out.reserve(total);
    for (std::size_t s = 0; s < ensemble.size(); ++s) {
        const auto& p = ensemble[s];
        for (std::size_t r = 0; r < p.latent_dim(); ++r) {
            Neuron n;
            n.id = "sae" + std::to_string(s) + "-n" + std::to_string(r);
            n.w = p.w_enc.row(static_cast<Eigen::Index>(r)).transpose();
            n.b = p.b_enc[static_cast<Eigen::Index>(r)];
            n.origin = {OriginKind::Sae, static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(r)};
            out.push_back(std::move(n));
        }
    }
    return out;
}

Subpopulation top_activating_subpopulation(const Neuron& neuron, const Corpus& corpus, std::size_t m) {
    return top_activating_subpopulation(neuron, corpus, joint_matrix(corpus), m);
}

Subpopulation top_activating_subpopulation(const Neuron& neuron, const Corpus& corpus, const Mat& joint,
                                           std::size_t m) {
    if (m < 1) throw Error(ErrorCode::InvalidArgument, "subpopulation size must be >= 1");
    if (joint.cols() != neuron.w.size()) throw Error(ErrorCode::DimensionMismatch, "neuron and corpus dims differ");
    Vec act = ((joint * neuron.w).array() + neuron.b).cwiseMax(0.0).matrix();
    std::vector<Eigen::Index> positive;
    for (Eigen::Index i = 0; i < act.size(); ++i)
        if (act[i] > 0.0) positive.push_back(i);
    const auto keep = std::min(m, positive.size());
    std::partial_sort(positive.begin(), positive.begin() + static_cast<std::ptrdiff_t>(keep), positive.end(),
                      [&](Eigen::Index a, Eigen::Index b) { return act[a] > act[b] || (act[a] == act[b] && a < b); });
    Subpopulation sub{neuron.id, {}};
    for (std::size_t i = 0; i < keep; ++i)
        sub.members.push_back({corpus[static_cast<std::size_t>(positive[i])].id, act[positive[i]]});
    return sub;
}

std::vector<MediaItem> media_for(const Subpopulation& sub, const Corpus& corpus) {
    std::vector<MediaItem> media;
    media.reserve(sub.size());
    for (const auto& m : sub.members) {
        auto idx = corpus.find(m.pair_id);
        if (!idx) throw Error(ErrorCode::NotFound, "pair " + m.pair_id + " not in corpus");
        const auto& p = corpus[*idx];
        media.push_back({p.id, p.uri, p.caption});
    }
    return media;
}

JudgeOutcome summarize_feature(JudgeBackend& judge, const std::vector<MediaItem>& samples, int retries) {
    if (samples.empty()) throw Error(ErrorCode::InvalidArgument, "summarization needs at least one sample");
    JudgeRequest req{std::string(prompts::summarize), samples, 0};
    for (int attempt = 0; attempt <= retries; ++attempt) {
        req.attempt = attempt;
        if (auto text = parse_commonality(judge.complete(req))) return {std::move(text), attempt};
        spdlog::debug("summarize: malformed reply on attempt {}", attempt);
    }
    return {std::nullopt, retries};
}

CategoryOutcome categorize_feature(JudgeBackend& judge, const std::string& explanation, Branch branch,
                                   const std::vector<MediaItem>& samples, int retries) {
    if (explanation.empty()) throw Error(ErrorCode::InvalidArgument, "categorization needs an explanation");
    JudgeRequest req;
    std::vector<Category> allowed;
    switch (branch) {
        case Branch::Semantic:
            req.prompt = fill_template(prompts::categorize_semantic, {{"commonality", explanation}});
            allowed.assign(kSemanticGroups.begin(), kSemanticGroups.end());
            break;
        case Branch::Realism:
            req.prompt = std::string(prompts::categorize_realism);
            req.media = samples;
            allowed.assign(kRealismGroups.begin(), kRealismGroups.end());
            break;
        case Branch::Physics:
            req.prompt = std::string(prompts::categorize_physics);
            req.media = samples;
            allowed.assign(kPhysicsGroups.begin(), kPhysicsGroups.end());
            break;
    }
    for (int attempt = 0; attempt <= retries; ++attempt) {
        req.attempt = attempt;
        const auto reply = judge.complete(req);
        std::optional<Category> parsed;
        std::string branch_explanation;
        if (branch == Branch::Semantic) {
            if (auto word = parse_bracketed_word(reply)) parsed = parse_category(*word);
        } else if (auto labeled = parse_labeled_explanation(reply)) {
            parsed = parse_category(labeled->first);
            branch_explanation = labeled->second;
        }
        if (parsed && std::find(allowed.begin(), allowed.end(), *parsed) != allowed.end())
            return {*parsed, branch_explanation, attempt};
        spdlog::debug("categorize[{}]: reply outside allowed set on attempt {}", to_string(branch), attempt);
    }
    return {Category::Uncategorized, {}, retries};
}

std::vector<JudgeVerdict> judge_accuracy(JudgeBackend& judge, const Neuron& neuron,
                                         const std::vector<MediaItem>& samples, int retries) {
    const auto prompt = fill_template(prompts::accuracy, {{"explanation", neuron.explanation}});
    std::vector<JudgeVerdict> verdicts;
    for (const auto& sample : samples) {
        // The accuracy prompt pairs the image with the explanation only.
        JudgeRequest req{prompt, {MediaItem{sample.pair_id, sample.uri, ""}}, 0};
        for (int attempt = 0; attempt <= retries; ++attempt) {
            req.attempt = attempt;
            if (auto yes = parse_yes_no(judge.complete(req))) {
                verdicts.push_back({neuron.id, sample.pair_id, *yes, JudgeKind::Lmm});
                break;
            }
        }
    }
    return verdicts;
}

std::optional<double> measure_accuracy(const std::string& neuron_id, const std::vector<JudgeVerdict>& verdicts,
                                       std::size_t n_min) {
    // pair -> (has human verdict, match)
    std::map<std::string, std::pair<bool, bool>> per_pair;
    for (const auto& v : verdicts) {
        if (v.neuron_id != neuron_id) continue;
        const bool human = v.judge == JudgeKind::Human;
        auto [it, inserted] = per_pair.try_emplace(v.pair_id, human, v.match);
        if (!inserted && human) it->second = {true, v.match};
    }
    if (per_pair.empty() || per_pair.size() < n_min) return std::nullopt;
    std::size_t matches = 0;
    for (const auto& [pair, verdict] : per_pair) matches += verdict.second ? 1 : 0;
    return static_cast<double>(matches) / static_cast<double>(per_pair.size());
}

std::vector<Neuron> filter_neurons(const std::vector<Neuron>& pool, const FilterConfig& config) {
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const auto& n = pool[i];
        if (n.category != Category::Uncategorized && !n.explanation.empty() && n.accuracy &&
            *n.accuracy > config.threshold)
            eligible.push_back(i);
    }
    // Most accurate first so a merge always keeps the better neuron.
    std::stable_sort(eligible.begin(), eligible.end(),
                     [&](std::size_t a, std::size_t b) { return *pool[a].accuracy > *pool[b].accuracy; });
    std::vector<std::size_t> kept;
    for (auto i : eligible) {
        bool duplicate = std::any_of(kept.begin(), kept.end(), [&](std::size_t j) {
            return pool[j].category == pool[i].category && cosine(pool[i].w, pool[j].w) > config.dedup_cosine;
        });
        if (!duplicate) kept.push_back(i);
    }
    std::sort(kept.begin(), kept.end());
    std::vector<Neuron> out;
    out.reserve(kept.size());
    for (auto i : kept) out.push_back(pool[i]);
    if (out.empty()) spdlog::warn("filter_neurons: no neuron passed the accuracy filter");
    return out;
}

CurationResult curate(const std::vector<Neuron>& sae_candidates, const std::vector<Neuron>& physics_candidates,
                      const Corpus& corpus, JudgeBackend& judge, const std::vector<JudgeVerdict>& human_verdicts,
                      const CurationConfig& config) {
    struct Slot {
        Neuron neuron;
        CandidateReport report;
        std::vector<JudgeVerdict> verdicts;
        bool judged = false;
    };
    std::vector<Slot> slots;
    slots.reserve(sae_candidates.size() + physics_candidates.size());
    for (const auto& n : sae_candidates) slots.push_back({n, {n.id, Branch::Semantic}, {}, false});
    for (const auto& n : physics_candidates) slots.push_back({n, {n.id, Branch::Physics}, {}, false});

    const Mat joint = joint_matrix(corpus);
    const std::size_t depth = std::max(config.summary_samples, config.accuracy_samples);

    auto process = [&](Slot& slot) {
        auto& n = slot.neuron;
        auto& report = slot.report;
        const auto sub = top_activating_subpopulation(n, corpus, joint, depth);
        if (sub.empty()) {
            report.status = CandidateStatus::Dead;
            return;
        }
        Subpopulation head{sub.neuron_id, {}};
        head.members.assign(sub.members.begin(),
                            sub.members.begin() + static_cast<std::ptrdiff_t>(std::min(config.summary_samples, sub.size())));
        const auto samples = media_for(head, corpus);

        if (report.branch == Branch::Semantic) {
            const auto synthetic = std::count_if(head.members.begin(), head.members.end(), [&](const auto& m) {
                return corpus[*corpus.find(m.pair_id)].source_model != "natural";
            });
            if (static_cast<double>(synthetic) >= config.realism_fraction * static_cast<double>(head.size()))
                report.branch = Branch::Realism;
        }

        auto summary = summarize_feature(judge, samples, config.retries);
        report.retries += summary.retries;
        if (!summary.text) {
            report.status = CandidateStatus::Uninterpretable;
            return;
        }
        n.explanation = *summary.text;

        auto cat = categorize_feature(judge, n.explanation, report.branch, samples, config.retries);
        report.retries += cat.retries;
        n.category = cat.category;
        if (n.category == Category::Uncategorized) {
            report.status = CandidateStatus::Uncategorized;
            return;
        }

        Subpopulation acc{sub.neuron_id, {}};
        acc.members.assign(sub.members.begin(),
                           sub.members.begin() + static_cast<std::ptrdiff_t>(std::min(config.accuracy_samples, sub.size())));
        slot.verdicts = judge_accuracy(judge, n, media_for(acc, corpus), config.retries);
        slot.judged = true;
    };

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < slots.size(); i = next++) {
            try {
                process(slots[i]);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = slots.size();
            }
        }
    };
    const unsigned threads = std::max(1u, std::min<unsigned>(config.max_in_flight, static_cast<unsigned>(slots.size())));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);

    CurationResult result;
    std::vector<Neuron> measured;
    std::map<std::string, std::size_t> slot_of;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        auto& slot = slots[i];
        result.verdicts.insert(result.verdicts.end(), slot.verdicts.begin(), slot.verdicts.end());
        if (!slot.judged) continue;
        std::vector<JudgeVerdict> all = slot.verdicts;
        for (const auto& h : human_verdicts)
            if (h.neuron_id == slot.neuron.id) all.push_back(h);
        slot.neuron.accuracy = measure_accuracy(slot.neuron.id, all, config.n_min);
        if (!slot.neuron.accuracy) {
            slot.report.status = CandidateStatus::AccuracyUnknown;
        } else if (!(*slot.neuron.accuracy > config.filter.threshold)) {
            slot.report.status = CandidateStatus::BelowThreshold;
        } else {
            slot.report.status = CandidateStatus::Duplicate;  // until the filter keeps it
            slot_of[slot.neuron.id] = i;
            measured.push_back(slot.neuron);
        }
    }
    result.registry = filter_neurons(measured, config.filter);
    for (const auto& n : result.registry) slots[slot_of.at(n.id)].report.status = CandidateStatus::Kept;
    for (auto& slot : slots) result.candidates.push_back(slot.report);
    spdlog::info("curate: {} candidates -> {} kept", slots.size(), result.registry.size());
    return result;
}

// --- files -------------------------------------------------------------------

void write_registry(const std::vector<Neuron>& registry, const std::string& path) {
    const auto sidecar = path + ".weights.bin";
    const auto sidecar_name = std::filesystem::path(sidecar).filename().string();
    const std::uint32_t d = registry.empty() ? 0 : static_cast<std::uint32_t>(registry.front().w.size());

    detail::ByteWriter w;
    w.magic("LNRW");
    w.put<std::uint32_t>(kRegistryWeightsVersion);
    w.put<std::uint32_t>(d);
    w.put<std::uint64_t>(registry.size());
    json entries = json::array();
    for (std::size_t i = 0; i < registry.size(); ++i) {
        const auto& n = registry[i];
        if (static_cast<std::uint32_t>(n.w.size()) != d)
            throw Error(ErrorCode::DimensionMismatch, "registry neurons have different input dims");
        for (Eigen::Index j = 0; j < n.w.size(); ++j) w.put_f32(n.w[j]);
        w.put_f32(n.b);
        json e;
        e["id"] = n.id;
        e["origin"] = {{"kind", origin_kind_name(n.origin.kind)}, {"sae", n.origin.sae}, {"row", n.origin.row}};
        e["category"] = std::string(to_string(n.category));
        e["explanation"] = n.explanation;
        e["accuracy"] = n.accuracy ? json(*n.accuracy) : json(nullptr);
        e["weights_ref"] = {{"file", sidecar_name}, {"row", i}};
        entries.push_back(std::move(e));
    }
    w.seal();
    detail::write_binary_file(sidecar, w.bytes());
    write_text_file(path, entries.dump(2) + "\n");
}

std::vector<Neuron> read_registry(const std::string& path) {
    const auto entries = json::parse(read_text_file(path));
    if (!entries.is_array()) throw Error(ErrorCode::Format, path + ": registry must be a JSON array");
    const auto dir = std::filesystem::path(path).parent_path();
    std::map<std::string, std::pair<std::uint32_t, std::vector<std::pair<Vec, double>>>> sidecars;

    auto load_sidecar = [&](const std::string& name) -> auto& {
        auto it = sidecars.find(name);
        if (it != sidecars.end()) return it->second;
        auto bytes = detail::read_binary_file((dir / name).string());
        detail::ByteReader r(detail::verify_sealed(bytes));
        r.expect_magic("LNRW");
        if (r.get<std::uint32_t>() != kRegistryWeightsVersion) throw Error(ErrorCode::Format, "bad registry weights version");
        const auto d = r.get<std::uint32_t>();
        const auto count = r.get<std::uint64_t>();
        std::vector<std::pair<Vec, double>> rows;
        for (std::uint64_t i = 0; i < count; ++i) {
            Vec w(d);
            for (std::uint32_t j = 0; j < d; ++j) w[j] = r.get_f32();
            rows.emplace_back(std::move(w), r.get_f32());
        }
        return sidecars.emplace(name, std::make_pair(d, std::move(rows))).first->second;
    };

    std::vector<Neuron> out;
    for (const auto& e : entries) {
        Neuron n;
        n.id = e.at("id").get<std::string>();
        const auto& o = e.at("origin");
        n.origin.kind = o.at("kind").get<std::string>() == "sae" ? OriginKind::Sae : OriginKind::Transcoder;
        n.origin.sae = o.at("sae").get<std::uint32_t>();
        n.origin.row = o.at("row").get<std::uint32_t>();
        const auto cat = e.at("category").get<std::string>();
        n.category = parse_category(cat).value_or(Category::Uncategorized);
        n.explanation = e.at("explanation").get<std::string>();
        if (!e.at("accuracy").is_null()) n.accuracy = e["accuracy"].get<double>();
        const auto& ref = e.at("weights_ref");
        auto& sidecar = load_sidecar(ref.at("file").get<std::string>());
        const auto row = ref.at("row").get<std::size_t>();
        if (row >= sidecar.second.size()) throw Error(ErrorCode::Format, "weights_ref row out of range for " + n.id);
        n.w = sidecar.second[row].first;
        n.b = sidecar.second[row].second;
        out.push_back(std::move(n));
    }
    return out;
}

void append_verdicts(const std::vector<JudgeVerdict>& verdicts, const std::string& path) {
    std::string text;
    for (const auto& v : verdicts)
        text += json{{"neuron_id", v.neuron_id},
                     {"pair_id", v.pair_id},
                     {"match", v.match},
                     {"judge", v.judge == JudgeKind::Human ? "human" : "lmm"}}
                    .dump() +
                "\n";
    auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::app | std::ios::binary);
    out << text;
    if (!out) throw Error(ErrorCode::Io, "cannot append verdicts to " + path);
}

std::vector<JudgeVerdict> read_verdicts(const std::string& path) {
    std::vector<JudgeVerdict> out;
    std::ifstream in(path);
    if (!in) return out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = json::parse(line);
        out.push_back({j.at("neuron_id").get<std::string>(), j.at("pair_id").get<std::string>(),
                       j.at("match").get<bool>(),
                       j.value("judge", std::string("lmm")) == "human" ? JudgeKind::Human : JudgeKind::Lmm});
    }
    return out;
}

}  // namespace lanse
