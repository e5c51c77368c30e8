#include "lanse/lanse_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "binary_io.hpp"
#include "lanse/embedding_store.hpp"
#include "lanse/modality_distillation.hpp"
#include "lanse/neuron_curation.hpp"

namespace lanse {

using nlohmann::json;

namespace {

constexpr std::uint32_t kModelWeightsVersion = 1;

// Row-wise ReLU(X W^T + b) for a whole batch.
Mat group_activations(const NeuronGroup& g, const Mat& inputs) {
    Mat out = inputs * g.w.transpose();
    out.rowwise() += g.b.transpose();
    return out.cwiseMax(0.0);
}

std::string registry_checksum(const std::vector<Neuron>& registry) {
    detail::ByteWriter w;
    for (const auto& n : registry) {
        w.put_string16(n.id);
        w.put_string16(to_string(n.category));
        for (Eigen::Index j = 0; j < n.w.size(); ++j) w.put_f32(n.w[j]);
        w.put_f32(n.b);
    }
    return sha256_hex(w.bytes());
}

NeuronGroup empty_group(std::size_t d) {
    NeuronGroup g;
    g.w.resize(0, static_cast<Eigen::Index>(d));
    g.b.resize(0);
    g.tau.resize(0);
    return g;
}

}  // namespace

const NeuronGroup& LanseModel::group(Category c) const {
    auto it = groups.find(c);
    if (it == groups.end()) throw Error(ErrorCode::NotFound, "unknown group " + std::string(to_string(c)));
    return it->second;
}

std::size_t LanseModel::total_neurons() const {
    std::size_t n = 0;
    for (const auto& [c, g] : groups) n += g.size();
    return n;
}

void LanseModel::validate() const {
    std::set<std::string> seen;
    for (const auto& [c, g] : groups) {
        if (c == Category::Uncategorized) throw Error(ErrorCode::InvalidArgument, "model has an uncategorized group");
        const auto n = static_cast<Eigen::Index>(g.size());
        if (g.w.rows() != n || g.b.size() != n || g.tau.size() != n || g.w.cols() != static_cast<Eigen::Index>(d))
            throw Error(ErrorCode::DimensionMismatch, "group " + std::string(to_string(c)) + " has inconsistent shapes");
        if ((g.tau.array() < 0.0).any()) throw Error(ErrorCode::InvalidArgument, "negative tau in group " + std::string(to_string(c)));
        for (const auto& id : g.ids)
            if (!seen.insert(id).second) throw Error(ErrorCode::DuplicateId, "neuron id '" + id + "' appears twice");
    }
}

LanseModel assemble(const std::vector<Neuron>& registry) {
    if (registry.empty()) throw Error(ErrorCode::InvalidArgument, "cannot assemble an empty registry");
    const auto d = static_cast<std::size_t>(registry.front().w.size());
    std::map<Category, std::vector<const Neuron*>> members;
    std::set<std::string> seen;
    for (const auto& n : registry) {
        if (n.category == Category::Uncategorized)
            throw Error(ErrorCode::InvalidArgument, "neuron '" + n.id + "' is uncategorized");
        if (static_cast<std::size_t>(n.w.size()) != d)
            throw Error(ErrorCode::DimensionMismatch, "neuron '" + n.id + "' has a different input dim");
        if (!seen.insert(n.id).second) throw Error(ErrorCode::DuplicateId, "neuron id '" + n.id + "' appears twice");
        members[n.category].push_back(&n);
    }
    LanseModel model;
    model.d = d;
    model.provenance = registry_checksum(registry);
    for (Category c : kAllGroups) {
        NeuronGroup g = empty_group(d);
        const auto& list = members[c];
        const auto rows = static_cast<Eigen::Index>(list.size());
        g.w.resize(rows, static_cast<Eigen::Index>(d));
        g.b.resize(rows);
        g.tau = Vec::Zero(rows);
        for (Eigen::Index i = 0; i < rows; ++i) {
            g.w.row(i) = list[static_cast<std::size_t>(i)]->w.transpose();
            g.b[i] = list[static_cast<std::size_t>(i)]->b;
            g.ids.push_back(list[static_cast<std::size_t>(i)]->id);
        }
        model.groups.emplace(c, std::move(g));
    }
    return model;
}

Vec activate(const LanseModel& model, const Vec& joint, Category group) {
    const auto& g = model.group(group);
    if (static_cast<std::size_t>(joint.size()) != model.d)
        throw Error(ErrorCode::DimensionMismatch,
                    "input length " + std::to_string(joint.size()) + " != d=" + std::to_string(model.d));
    return (g.w * joint + g.b).cwiseMax(0.0);
}

Bits binarize(const Vec& real, const Vec& tau) {
    if (real.size() != tau.size()) throw Error(ErrorCode::DimensionMismatch, "activation and tau lengths differ");
    Bits bits(static_cast<std::size_t>(real.size()));
    for (Eigen::Index i = 0; i < real.size(); ++i) bits[static_cast<std::size_t>(i)] = real[i] > tau[i] ? 1 : 0;
    return bits;
}

double percentile(std::vector<double> values, double p) {
    if (values.empty()) throw Error(ErrorCode::InvalidArgument, "percentile of an empty sample");
    if (!(p >= 0.0 && p <= 100.0)) throw Error(ErrorCode::OutOfRange, "percentile must be in [0, 100]");
    std::sort(values.begin(), values.end());
    const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

void calibrate_tau(LanseModel& model, const Corpus& reference, double percentile_value) {
    if (reference.d() != model.d) throw Error(ErrorCode::DimensionMismatch, "reference corpus dims differ from model");
    const Mat joint = joint_matrix(reference);
    for (auto& [c, g] : model.groups) {
        if (g.size() == 0) continue;
        const Mat acts = group_activations(g, joint);
        for (Eigen::Index i = 0; i < acts.cols(); ++i) {
            std::vector<double> column(static_cast<std::size_t>(acts.rows()));
            for (Eigen::Index r = 0; r < acts.rows(); ++r) column[static_cast<std::size_t>(r)] = acts(r, i);
            if (std::all_of(column.begin(), column.end(), [](double v) { return v == 0.0; })) {
                spdlog::warn("calibrate: neuron {} never fires on the reference corpus; tau = 0",
                             g.ids[static_cast<std::size_t>(i)]);
                g.tau[i] = 0.0;
                continue;
            }
            g.tau[i] = percentile(std::move(column), percentile_value);
        }
    }
}

LanseModel scale_tau(const LanseModel& model, double scale) {
    if (!(scale >= 0.0)) throw Error(ErrorCode::OutOfRange, "tau scale must be non-negative");
    LanseModel out = model;
    for (auto& [c, g] : out.groups) {
        if (std::isinf(scale))
            g.tau.setConstant(std::numeric_limits<double>::infinity());
        else
            g.tau *= scale;
    }
    return out;
}

std::string_view to_string(Modality m) {
    switch (m) {
        case Modality::Joint: return "joint";
        case Modality::ImageOnly: return "image_only";
        case Modality::TextOnly: return "text_only";
    }
    return "joint";
}

Modality parse_modality(std::string_view name) {
    if (name == "joint") return Modality::Joint;
    if (name == "image" || name == "image_only") return Modality::ImageOnly;
    if (name == "text" || name == "text_only") return Modality::TextOnly;
    throw Error(ErrorCode::InvalidArgument, "unknown modality '" + std::string(name) + "'");
}

namespace {

void check_alignment(const ModalityEncoder& enc, const LanseModel& model) {
    for (const auto& s : enc.slices)
        if (s.ids != model.group(s.group).ids)
            throw Error(ErrorCode::InvalidArgument,
                        "modality encoder group " + std::string(to_string(s.group)) + " is not aligned with the model");
}

void fill_groups(std::vector<ActivationRecord>& records, const Mat& acts, const Vec& tau, Category group) {
    for (std::size_t r = 0; r < records.size(); ++r) {
        GroupActivation ga;
        ga.real = acts.row(static_cast<Eigen::Index>(r)).transpose();
        ga.bits = binarize(ga.real, tau);
        records[r].groups.emplace(group, std::move(ga));
    }
}

}  // namespace

std::vector<ActivationRecord> encode_corpus(const LanseModel& model, const Corpus& corpus, Modality modality,
                                            const ModalityEncoders& encoders) {
    if (corpus.d() != model.d) throw Error(ErrorCode::DimensionMismatch, "corpus dims differ from model");
    std::vector<ActivationRecord> records(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        records[i].pair_id = corpus[i].id;
        records[i].modality = modality;
    }

    if (modality == Modality::Joint) {
        const Mat joint = joint_matrix(corpus);
        for (const auto& [c, g] : model.groups) fill_groups(records, group_activations(g, joint), g.tau, c);
        return records;
    }

    const ModalityEncoder* enc = modality == Modality::ImageOnly ? encoders.image : encoders.text;
    if (enc == nullptr)
        throw Error(ErrorCode::Dependency,
                    std::string(to_string(modality)) + " encoding requires a distilled " +
                        (modality == Modality::ImageOnly ? "image" : "text") + " encoder");
    check_alignment(*enc, model);
    const Mat single = modality == Modality::ImageOnly ? image_matrix(corpus) : text_matrix(corpus);
    if (static_cast<std::size_t>(single.cols()) != enc->d_single)
        throw Error(ErrorCode::DimensionMismatch, "modality encoder input dim differs from corpus");

    Mat u = single + single * enc->adapter.transpose();
    u.rowwise() += enc->adapter_bias.transpose();
    Mat out = u * enc->head_w.transpose();
    out.rowwise() += enc->head_b.transpose();
    out = out.cwiseMax(0.0);
    for (const auto& s : enc->slices) {
        const auto n = static_cast<Eigen::Index>(s.ids.size());
        fill_groups(records, out.middleCols(static_cast<Eigen::Index>(s.offset), n), model.group(s.group).tau, s.group);
    }

    if (modality == Modality::ImageOnly) {
        Mat joint = joint_matrix(corpus);
        joint.rightCols(corpus.d_txt()).setZero();
        for (Category c : kPhysicsGroups) {
            const auto& g = model.group(c);
            fill_groups(records, group_activations(g, joint), g.tau, c);
        }
    }
    return records;
}

// --- files -------------------------------------------------------------------

void save_model(const LanseModel& model, const std::string& dir) {
    model.validate();
    std::filesystem::create_directories(dir);
    detail::ByteWriter w;
    w.magic("LNSW");
    w.put<std::uint32_t>(kModelWeightsVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(model.d));
    w.put<std::uint64_t>(model.total_neurons());
    json groups = json::object();
    for (Category c : kAllGroups) {
        const auto& g = model.group(c);
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(g.size()); ++i) {
            for (Eigen::Index j = 0; j < g.w.cols(); ++j) w.put_f32(g.w(i, j));
            w.put_f32(g.b[i]);
        }
        groups[std::string(to_string(c))] = {{"ids", g.ids},
                                             {"tau", std::vector<double>(g.tau.data(), g.tau.data() + g.tau.size())}};
    }
    w.seal();
    const auto weights_path = (std::filesystem::path(dir) / "weights.bin").string();
    detail::write_binary_file(weights_path, w.bytes());
    json manifest = {{"format", "lanse-model"},
                     {"version", 1},
                     {"d", model.d},
                     {"provenance", model.provenance},
                     {"weights_file", "weights.bin"},
                     {"weights_sha256", sha256_hex(w.bytes())},
                     {"groups", groups}};
    write_text_file((std::filesystem::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

LanseModel load_model(const std::string& dir) {
    const auto manifest = json::parse(read_text_file((std::filesystem::path(dir) / "manifest.json").string()));
    if (manifest.value("format", "") != "lanse-model") throw Error(ErrorCode::Format, dir + " is not a LanSE model");
    const auto weights_file = (std::filesystem::path(dir) / manifest.at("weights_file").get<std::string>()).string();
    const auto bytes = detail::read_binary_file(weights_file);
    if (sha256_hex(bytes) != manifest.at("weights_sha256").get<std::string>())
        throw Error(ErrorCode::ChecksumMismatch, "model weights do not match the manifest");
    detail::ByteReader r(detail::verify_sealed(bytes));
    r.expect_magic("LNSW");
    if (r.get<std::uint32_t>() != kModelWeightsVersion) throw Error(ErrorCode::Format, "bad model weights version");
    LanseModel model;
    model.d = r.get<std::uint32_t>();
    if (model.d != manifest.at("d").get<std::size_t>()) throw Error(ErrorCode::Format, "manifest d disagrees with weights");
    r.get<std::uint64_t>();
    model.provenance = manifest.at("provenance").get<std::string>();
    const auto& groups = manifest.at("groups");
    for (Category c : kAllGroups) {
        NeuronGroup g = empty_group(model.d);
        const auto& entry = groups.at(std::string(to_string(c)));
        g.ids = entry.at("ids").get<std::vector<std::string>>();
        const auto tau = entry.at("tau").get<std::vector<double>>();
        const auto n = static_cast<Eigen::Index>(g.ids.size());
        if (static_cast<Eigen::Index>(tau.size()) != n) throw Error(ErrorCode::Format, "tau length mismatch");
        g.w.resize(n, static_cast<Eigen::Index>(model.d));
        g.b.resize(n);
        g.tau = Eigen::Map<const Vec>(tau.data(), n);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < g.w.cols(); ++j) g.w(i, j) = r.get_f32();
            g.b[i] = r.get_f32();
        }
        model.groups.emplace(c, std::move(g));
    }
    if (r.remaining() != 0) throw Error(ErrorCode::Format, "trailing bytes in model weights");
    model.validate();
    return model;
}

std::string pack_bits(const Bits& bits) {
    std::vector<std::uint8_t> packed((bits.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    return base64_encode(packed);
}

Bits unpack_bits(const std::string& encoded, std::size_t length) {
    const auto packed = base64_decode(encoded);
    if (packed.size() != (length + 7) / 8) throw Error(ErrorCode::Format, "bitset length mismatch");
    Bits bits(length);
    for (std::size_t i = 0; i < length; ++i) bits[i] = (packed[i / 8] >> (i % 8)) & 1u;
    return bits;
}

void write_activations(const std::vector<ActivationRecord>& records, const std::string& path) {
    std::string text;
    for (const auto& rec : records) {
        json groups = json::object();
        for (const auto& [c, ga] : rec.groups)
            groups[std::string(to_string(c))] = {
                {"real", std::vector<double>(ga.real.data(), ga.real.data() + ga.real.size())},
                {"bits", pack_bits(ga.bits)}};
        text += json{{"id", rec.pair_id}, {"modality", std::string(to_string(rec.modality))}, {"groups", groups}}.dump() + "\n";
    }
    write_text_file(path, text);
}

std::vector<ActivationRecord> read_activations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
    std::vector<ActivationRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = json::parse(line);
        ActivationRecord rec;
        rec.pair_id = j.at("id").get<std::string>();
        rec.modality = parse_modality(j.at("modality").get<std::string>());
        for (const auto& [name, g] : j.at("groups").items()) {
            auto cat = parse_category(name);
            if (!cat) throw Error(ErrorCode::Format, "unknown group '" + name + "' in " + path);
            const auto real = g.at("real").get<std::vector<double>>();
            GroupActivation ga;
            ga.real = Eigen::Map<const Vec>(real.data(), static_cast<Eigen::Index>(real.size()));
            ga.bits = unpack_bits(g.at("bits").get<std::string>(), real.size());
            rec.groups.emplace(*cat, std::move(ga));
        }
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace lanse
