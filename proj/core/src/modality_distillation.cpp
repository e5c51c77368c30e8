#include "lanse/modality_distillation.hpp"

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "lanse/adam.hpp"
#include "lanse/embedding_store.hpp"

namespace lanse {

using nlohmann::json;

namespace {

constexpr std::uint32_t kEncoderWeightsVersion = 1;

Mat forward_rows(const ModalityEncoder& enc, const Mat& inputs, Mat* adapted = nullptr, Mat* pre = nullptr) {
    Mat u = inputs + inputs * enc.adapter.transpose();
    u.rowwise() += enc.adapter_bias.transpose();
    Mat p = u * enc.head_w.transpose();
    p.rowwise() += enc.head_b.transpose();
    Mat out = p.cwiseMax(0.0);
    if (adapted) *adapted = std::move(u);
    if (pre) *pre = std::move(p);
    return out;
}

Mat single_inputs(const Corpus& corpus, Modality modality) {
    return modality == Modality::ImageOnly ? image_matrix(corpus) : text_matrix(corpus);
}

}  // namespace

Vec ModalityEncoder::forward(const Vec& x) const {
    if (static_cast<std::size_t>(x.size()) != d_single)
        throw Error(ErrorCode::DimensionMismatch,
                    "embedding length " + std::to_string(x.size()) + " != " + std::to_string(d_single));
    Vec u = x + adapter * x + adapter_bias;
    return (head_w * u + head_b).cwiseMax(0.0);
}

const HeadSlice& ModalityEncoder::slice(Category group) const {
    for (const auto& s : slices)
        if (s.group == group) return s;
    throw Error(ErrorCode::InvalidArgument,
                "group " + std::string(to_string(group)) + " is not served by single-modality encoders");
}

Mat distill_targets(const LanseModel& joint, const Corpus& corpus) {
    const Mat inputs = joint_matrix(corpus);
    std::size_t total = 0;
    for (Category c : kSemanticGroups) total += joint.group(c).size();
    Mat targets(inputs.rows(), static_cast<Eigen::Index>(total));
    Eigen::Index offset = 0;
    for (Category c : kSemanticGroups) {
        const auto& g = joint.group(c);
        const auto n = static_cast<Eigen::Index>(g.size());
        if (n == 0) continue;
        Mat acts = inputs * g.w.transpose();
        acts.rowwise() += g.b.transpose();
        targets.middleCols(offset, n) = acts.cwiseMax(0.0);
        offset += n;
    }
    return targets;
}

double distill_loss(const ModalityEncoder& enc, const Mat& inputs, const Mat& targets) {
    return (forward_rows(enc, inputs) - targets).squaredNorm() / static_cast<double>(inputs.rows());
}

double distill_loss_and_grad(const ModalityEncoder& enc, const Mat& inputs, const Mat& targets,
                             DistillGradients& grads) {
    const double n = static_cast<double>(inputs.rows());
    Mat u, pre;
    Mat diff = forward_rows(enc, inputs, &u, &pre) - targets;
    const double loss = diff.squaredNorm() / n;
    Mat d_pre = (2.0 / n) * diff.cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
    grads.head_w = d_pre.transpose() * u;
    grads.head_b = d_pre.colwise().sum().transpose();
    Mat d_u = d_pre * enc.head_w;
    grads.adapter = d_u.transpose() * inputs;
    grads.adapter_bias = d_u.colwise().sum().transpose();
    return loss;
}

ModalityEncoder init_modality_encoder(const LanseModel& joint, const Corpus& corpus, Modality modality,
                                      DistillInit init, std::uint64_t seed) {
    if (modality == Modality::Joint) throw Error(ErrorCode::InvalidArgument, "distillation targets a single modality");
    if (corpus.d() != joint.d) throw Error(ErrorCode::DimensionMismatch, "corpus dims differ from the joint model");
    const bool image = modality == Modality::ImageOnly;
    const auto d_single = static_cast<Eigen::Index>(image ? corpus.d_img() : corpus.d_txt());
    const auto own_offset = image ? Eigen::Index{0} : static_cast<Eigen::Index>(corpus.d_img());
    const auto other_offset = image ? static_cast<Eigen::Index>(corpus.d_img()) : Eigen::Index{0};
    const auto d_other = static_cast<Eigen::Index>(joint.d) - d_single;

    ModalityEncoder enc;
    enc.modality = modality;
    enc.d_single = static_cast<std::size_t>(d_single);
    enc.adapter = Mat::Zero(d_single, d_single);
    enc.adapter_bias = Vec::Zero(d_single);
    enc.source_checksum = joint.provenance;

    std::size_t total = 0;
    for (Category c : kSemanticGroups) {
        enc.slices.push_back({c, total, joint.group(c).ids});
        total += joint.group(c).size();
    }
    enc.head_w.resize(static_cast<Eigen::Index>(total), d_single);
    enc.head_b = Vec::Zero(static_cast<Eigen::Index>(total));

    if (init == DistillInit::Random) {
        std::mt19937_64 rng(seed);
        const double bound = 1.0 / std::sqrt(static_cast<double>(d_single));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Eigen::Index i = 0; i < enc.head_w.size(); ++i) enc.head_w.data()[i] = dist(rng);
        return enc;
    }

    const Vec other_mean = image ? Vec(text_matrix(corpus).colwise().mean().transpose())
                                 : Vec(image_matrix(corpus).colwise().mean().transpose());
    for (const auto& s : enc.slices) {
        const auto& g = joint.group(s.group);
        const auto rows = static_cast<Eigen::Index>(g.size());
        const auto off = static_cast<Eigen::Index>(s.offset);
        enc.head_w.middleRows(off, rows) = g.w.middleCols(own_offset, d_single);
        enc.head_b.segment(off, rows) = g.b + g.w.middleCols(other_offset, d_other) * other_mean;
    }
    return enc;
}

DistillResult distill(const LanseModel& joint, const Corpus& corpus, Modality modality, const DistillConfig& config) {
    if (config.epochs < 0 || config.batch_size < 1 || !(config.step_size > 0.0))
        throw Error(ErrorCode::InvalidArgument, "invalid distillation config");
    DistillResult result;
    result.encoder = init_modality_encoder(joint, corpus, modality, config.init, config.seed);
    auto& enc = result.encoder;
    const Mat inputs = single_inputs(corpus, modality);
    const Mat targets = distill_targets(joint, corpus);
    result.loss_trace.push_back(distill_loss(enc, inputs, targets));
    if (enc.outputs() == 0) return result;

    Adam adam(AdamConfig{.step_size = config.step_size});
    std::mt19937_64 rng(config.seed ^ 0x5bd1e995ULL);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(inputs.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    const auto batch_size = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), order.size());
    DistillGradients grads;
    Mat x, t;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t stop = std::min(order.size(), start + batch_size);
            x.resize(static_cast<Eigen::Index>(stop - start), inputs.cols());
            t.resize(static_cast<Eigen::Index>(stop - start), targets.cols());
            for (std::size_t r = start; r < stop; ++r) {
                x.row(static_cast<Eigen::Index>(r - start)) = inputs.row(order[r]);
                t.row(static_cast<Eigen::Index>(r - start)) = targets.row(order[r]);
            }
            const double loss = distill_loss_and_grad(enc, x, t, grads);
            if (!std::isfinite(loss))
                throw Error(ErrorCode::Divergence, "non-finite distillation loss at epoch " + std::to_string(epoch) +
                                                       ", batch " + std::to_string(batches));
            adam.begin_step();
            adam.update(enc.head_w, grads.head_w);
            adam.update(enc.head_b, grads.head_b);
            if (config.train_adapter) {
                adam.update(enc.adapter, grads.adapter);
                adam.update(enc.adapter_bias, grads.adapter_bias);
            }
            loss_sum += loss;
            ++batches;
        }
        result.loss_trace.push_back(loss_sum / batches);
    }
    return result;
}

Vec activate_single(const ModalityEncoder& enc, const Vec& emb, Category group) {
    if (!is_semantic(group))
        throw Error(ErrorCode::InvalidArgument,
                    "group " + std::string(to_string(group)) + " is only available through the joint model");
    const auto& s = enc.slice(group);
    return enc.forward(emb).segment(static_cast<Eigen::Index>(s.offset), static_cast<Eigen::Index>(s.ids.size()));
}

Bits activate_single_bits(const ModalityEncoder& enc, const LanseModel& joint, const Vec& emb, Category group) {
    return binarize(activate_single(enc, emb, group), joint.group(group).tau);
}

void save_modality_encoder(const ModalityEncoder& enc, const std::string& dir) {
    std::filesystem::create_directories(dir);
    detail::ByteWriter w;
    w.magic("LNME");
    w.put<std::uint32_t>(kEncoderWeightsVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(enc.d_single));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(enc.outputs()));
    for (Eigen::Index i = 0; i < enc.adapter.size(); ++i) w.put_f32(enc.adapter.data()[i]);
    for (Eigen::Index i = 0; i < enc.adapter_bias.size(); ++i) w.put_f32(enc.adapter_bias[i]);
    for (Eigen::Index i = 0; i < enc.head_w.size(); ++i) w.put_f32(enc.head_w.data()[i]);
    for (Eigen::Index i = 0; i < enc.head_b.size(); ++i) w.put_f32(enc.head_b[i]);
    w.seal();
    detail::write_binary_file((std::filesystem::path(dir) / "weights.bin").string(), w.bytes());

    json groups = json::object();
    for (const auto& s : enc.slices)
        groups[std::string(to_string(s.group))] = {{"offset", s.offset}, {"ids", s.ids}};
    json manifest = {{"format", "lanse-modality-encoder"},
                     {"version", 1},
                     {"modality", std::string(to_string(enc.modality))},
                     {"d_single", enc.d_single},
                     {"source_checksum", enc.source_checksum},
                     {"weights_file", "weights.bin"},
                     {"weights_sha256", sha256_hex(w.bytes())},
                     {"groups", groups}};
    write_text_file((std::filesystem::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

ModalityEncoder load_modality_encoder(const std::string& dir) {
    const auto manifest = json::parse(read_text_file((std::filesystem::path(dir) / "manifest.json").string()));
    if (manifest.value("format", "") != "lanse-modality-encoder")
        throw Error(ErrorCode::Format, dir + " is not a modality encoder");
    const auto bytes =
        detail::read_binary_file((std::filesystem::path(dir) / manifest.at("weights_file").get<std::string>()).string());
    if (sha256_hex(bytes) != manifest.at("weights_sha256").get<std::string>())
        throw Error(ErrorCode::ChecksumMismatch, "encoder weights do not match the manifest");
    detail::ByteReader r(detail::verify_sealed(bytes));
    r.expect_magic("LNME");
    if (r.get<std::uint32_t>() != kEncoderWeightsVersion) throw Error(ErrorCode::Format, "bad encoder weights version");
    ModalityEncoder enc;
    enc.modality = parse_modality(manifest.at("modality").get<std::string>());
    enc.d_single = r.get<std::uint32_t>();
    const auto outputs = static_cast<Eigen::Index>(r.get<std::uint32_t>());
    const auto d = static_cast<Eigen::Index>(enc.d_single);
    enc.adapter.resize(d, d);
    enc.adapter_bias.resize(d);
    enc.head_w.resize(outputs, d);
    enc.head_b.resize(outputs);
    for (Eigen::Index i = 0; i < enc.adapter.size(); ++i) enc.adapter.data()[i] = r.get_f32();
    for (Eigen::Index i = 0; i < enc.adapter_bias.size(); ++i) enc.adapter_bias[i] = r.get_f32();
    for (Eigen::Index i = 0; i < enc.head_w.size(); ++i) enc.head_w.data()[i] = r.get_f32();
    for (Eigen::Index i = 0; i < enc.head_b.size(); ++i) enc.head_b[i] = r.get_f32();
    enc.source_checksum = manifest.at("source_checksum").get<std::string>();
    for (Category c : kSemanticGroups) {
        const auto& g = manifest.at("groups").at(std::string(to_string(c)));
        enc.slices.push_back({c, g.at("offset").get<std::size_t>(), g.at("ids").get<std::vector<std::string>>()});
    }
    return enc;
}

}  // namespace lanse
