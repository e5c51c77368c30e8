#include "lanse/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "binary_io.hpp"
#include "lanse/adam.hpp"
#include "lanse/embedding_store.hpp"

namespace lanse {

using nlohmann::json;

namespace {

double softplus(double s) { return std::max(s, 0.0) + std::log1p(std::exp(-std::abs(s))); }

double sigmoid(double s) {
    const double p = s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
    return std::clamp(p, std::numeric_limits<double>::denorm_min(), std::nextafter(1.0, 0.0));
}

Vec image_vec(const EmbeddingPair& p) {
    Vec v(static_cast<Eigen::Index>(p.image_emb.size()));
    for (std::size_t i = 0; i < p.image_emb.size(); ++i) v[static_cast<Eigen::Index>(i)] = p.image_emb[i];
    return v;
}

}  // namespace

void ProbeParams::validate() const {
    if (w1.rows() < 1) throw Error(ErrorCode::InvalidArgument, "probe hidden width must be >= 1");
    if (b1.size() != w1.rows() || w2.size() != w1.rows())
        throw Error(ErrorCode::DimensionMismatch, "probe parameter shapes disagree");
    if (!w1.allFinite() || !b1.allFinite() || !w2.allFinite() || !std::isfinite(b2))
        throw Error(ErrorCode::Divergence, "probe parameters are not finite");
}

Vec probe_hidden(const ProbeParams& probe, const Vec& image_emb) {
    if (image_emb.size() != probe.w1.cols()) throw Error(ErrorCode::DimensionMismatch, "probe input length != d_img");
    return (probe.w1 * image_emb + probe.b1).cwiseMax(0.0);
}

double probe_logit(const ProbeParams& probe, const Vec& image_emb) {
    return probe.w2.dot(probe_hidden(probe, image_emb)) + probe.b2;
}

double probe_score(const ProbeParams& probe, const Vec& image_emb) { return sigmoid(probe_logit(probe, image_emb)); }

std::string_view to_string(Label l) { return l == Label::Violation ? "violation" : "clean"; }

std::string_view to_string(Labeler l) {
    switch (l) {
        case Labeler::Seed: return "seed";
        case Labeler::Human: return "human";
        case Labeler::Ui: return "ui";
    }
    return "seed";
}

Label parse_label(std::string_view s) {
    if (s == "violation") return Label::Violation;
    if (s == "clean") return Label::Clean;
    throw Error(ErrorCode::Format, "unknown label \"" + std::string(s) + "\"");
}

Labeler parse_labeler(std::string_view s) {
    if (s == "seed") return Labeler::Seed;
    if (s == "human") return Labeler::Human;
    if (s == "ui") return Labeler::Ui;
    throw Error(ErrorCode::Format, "unknown labeler \"" + std::string(s) + "\"");
}

void LabelPool::add(const LabelRecord& record) {
    if (record.round < 0) throw Error(ErrorCode::InvalidArgument, "label round must be >= 0");
    if (record.pair_id.empty()) throw Error(ErrorCode::InvalidArgument, "label without pair id");
    if (!latest_.count(record.pair_id)) first_seen_.push_back(record.pair_id);
    log_.push_back(record);
    latest_[record.pair_id] = log_.size() - 1;
}

void LabelPool::add(const std::vector<LabelRecord>& records) {
    for (const auto& r : records) add(r);
}

std::vector<LabelRecord> LabelPool::resolved() const {
    std::vector<LabelRecord> out;
    out.reserve(first_seen_.size());
    for (const auto& id : first_seen_) out.push_back(log_[latest_.at(id)]);
    return out;
}

ProbeParams init_probe(std::size_t d_img, std::size_t hidden, std::uint64_t seed) {
    if (d_img < 1 || hidden < 1) throw Error(ErrorCode::InvalidArgument, "probe needs d_img >= 1 and hidden >= 1");
    std::mt19937_64 rng(seed);
    const double a = 1.0 / std::sqrt(static_cast<double>(d_img));
    const double c = 1.0 / std::sqrt(static_cast<double>(hidden));
    std::uniform_real_distribution<double> u1(-a, a), u2(-c, c);
    ProbeParams p;
    p.w1.resize(static_cast<Eigen::Index>(hidden), static_cast<Eigen::Index>(d_img));
    for (Eigen::Index i = 0; i < p.w1.size(); ++i) p.w1.data()[i] = u1(rng);
    p.b1 = Vec::Zero(static_cast<Eigen::Index>(hidden));
    p.w2.resize(static_cast<Eigen::Index>(hidden));
    for (Eigen::Index i = 0; i < p.w2.size(); ++i) p.w2[i] = u2(rng);
    p.b2 = 0.0;
    return p;
}

double probe_loss(const ProbeParams& probe, const Mat& x, const Vec& y) {
    if (x.cols() != probe.w1.cols() || x.rows() != y.size())
        throw Error(ErrorCode::DimensionMismatch, "probe batch shape mismatch");
    const Mat h = ((x * probe.w1.transpose()).rowwise() + probe.b1.transpose()).cwiseMax(0.0);
    const Vec s = (h * probe.w2).array() + probe.b2;
    double total = 0.0;
    for (Eigen::Index i = 0; i < s.size(); ++i) total += softplus(s[i]) - y[i] * s[i];
    return total / static_cast<double>(x.rows());
}

double probe_loss_and_grad(const ProbeParams& probe, const Mat& x, const Vec& y, ProbeGradients& grads) {
    if (x.cols() != probe.w1.cols() || x.rows() != y.size())
        throw Error(ErrorCode::DimensionMismatch, "probe batch shape mismatch");
    const double n = static_cast<double>(x.rows());
    const Mat pre = (x * probe.w1.transpose()).rowwise() + probe.b1.transpose();
    const Mat h = pre.cwiseMax(0.0);
    const Vec s = (h * probe.w2).array() + probe.b2;
    double total = 0.0;
    Vec ds(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        total += softplus(s[i]) - y[i] * s[i];
        const double p = s[i] >= 0 ? 1.0 / (1.0 + std::exp(-s[i])) : std::exp(s[i]) / (1.0 + std::exp(s[i]));
        ds[i] = (p - y[i]) / n;
    }
    grads.w2 = h.transpose() * ds;
    grads.b2 = ds.sum();
    const Mat dh = (ds * probe.w2.transpose()).cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
    grads.w1 = dh.transpose() * x;
    grads.b1 = dh.colwise().sum().transpose();
    return total / n;
}

ProbeTraining train_probe(const Mat& x, const Vec& y, const ProbeConfig& config) {
    if (x.rows() == 0 || x.rows() != y.size()) throw Error(ErrorCode::InvalidArgument, "probe needs labeled rows");
    if (config.epochs < 1 || config.batch_size < 1 || !(config.step_size > 0))
        throw Error(ErrorCode::InvalidArgument, "probe epochs, batch size and step size must be positive");
    const auto positives = (y.array() > 0.5).count();
    if (positives == 0 || positives == y.size())
        throw Error(ErrorCode::InvalidArgument, "probe training needs both violation and clean labels");

    ProbeTraining out;
    out.probe = init_probe(static_cast<std::size_t>(x.cols()), config.hidden, config.seed);
    auto& p = out.probe;
    out.loss_trace.push_back(probe_loss(p, x, y));

    Adam adam(AdamConfig{.step_size = config.step_size});
    std::mt19937_64 rng(config.seed ^ 0x5bd1e995ULL);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    ProbeGradients g;
    Mat bx;
    Vec by;
    Vec b2(1), g2(1);
    const auto bs = static_cast<std::size_t>(config.batch_size);
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t stop = std::min(order.size(), start + bs);
            bx.resize(static_cast<Eigen::Index>(stop - start), x.cols());
            by.resize(static_cast<Eigen::Index>(stop - start));
            for (std::size_t r = start; r < stop; ++r) {
                bx.row(static_cast<Eigen::Index>(r - start)) = x.row(order[r]);
                by[static_cast<Eigen::Index>(r - start)] = y[order[r]];
            }
            const double loss = probe_loss_and_grad(p, bx, by, g);
            if (!std::isfinite(loss))
                throw Error(ErrorCode::Divergence, "non-finite probe loss at epoch " + std::to_string(epoch));
            adam.begin_step();
            adam.update(p.w1, g.w1);
            adam.update(p.b1, g.b1);
            adam.update(p.w2, g.w2);
            b2[0] = p.b2;
            g2[0] = g.b2;
            adam.update(b2, g2);
            p.b2 = b2[0];
        }
        out.loss_trace.push_back(probe_loss(p, x, y));
    }
    p.validate();
    return out;
}

ProbeTraining train_probe(const Corpus& corpus, const std::vector<LabelRecord>& labels, const ProbeConfig& config) {
    if (labels.empty()) throw Error(ErrorCode::InvalidArgument, "no labels to train the probe on");
    Mat x(static_cast<Eigen::Index>(labels.size()), corpus.d_img());
    Vec y(static_cast<Eigen::Index>(labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto idx = corpus.find(labels[i].pair_id);
        if (!idx) throw Error(ErrorCode::NotFound, "labeled pair " + labels[i].pair_id + " not in corpus");
        x.row(static_cast<Eigen::Index>(i)) = image_vec(corpus[*idx]).transpose();
        y[static_cast<Eigen::Index>(i)] = labels[i].label == Label::Violation ? 1.0 : 0.0;
    }
    return train_probe(x, y, config);
}

std::vector<FlagEntry> flag_candidates(const ProbeParams& probe, const Corpus& corpus, double score_threshold,
                                       std::size_t budget, const std::set<std::string>& labeled) {
    std::vector<FlagEntry> out;
    for (const auto& pair : corpus.pairs()) {
        if (labeled.count(pair.id)) continue;
        const double s = probe_score(probe, image_vec(pair));
        if (s > score_threshold) out.push_back({pair.id, s});
    }
    std::stable_sort(out.begin(), out.end(), [](const FlagEntry& a, const FlagEntry& b) { return a.score > b.score; });
    if (out.size() > budget) out.resize(budget);
    return out;
}

namespace {

std::set<std::string> labeled_ids(const LabelPool& pool) {
    std::set<std::string> ids;
    for (const auto& r : pool.log()) ids.insert(r.pair_id);
    return ids;
}

void retrain(BootstrapState& state, const Corpus& corpus, const BootstrapConfig& config) {
    ProbeConfig pc = config.probe;
    pc.seed = config.probe.seed + static_cast<std::uint64_t>(state.round);
    auto trained = train_probe(corpus, state.pool.resolved(), pc);
    state.probe = std::move(trained.probe);
    state.loss_trace = std::move(trained.loss_trace);
    state.queue = flag_candidates(state.probe, corpus, config.score_threshold, config.budget, labeled_ids(state.pool));
    spdlog::info("bootstrap round {}: {} labeled pairs, {} flagged", state.round, state.pool.pairs(),
                 state.queue.size());
}

}  // namespace

BootstrapState init_bootstrap(const Corpus& corpus, const std::vector<LabelRecord>& seed_labels,
                              const BootstrapConfig& config) {
    if (seed_labels.empty()) throw Error(ErrorCode::InvalidArgument, "bootstrap needs seed labels");
    BootstrapState state;
    state.pool.add(seed_labels);
    retrain(state, corpus, config);
    return state;
}

void run_round(BootstrapState& state, const Corpus& corpus, const std::vector<LabelRecord>& new_labels,
               const BootstrapConfig& config) {
    if (new_labels.empty()) throw Error(ErrorCode::InvalidArgument, "a round needs at least one new label");
    BootstrapState next = state;
    next.pool.add(new_labels);
    ++next.round;
    retrain(next, corpus, config);
    state = std::move(next);
}

Mat probe_hidden_matrix(const ProbeParams& probe, const Corpus& corpus) {
    const Mat x = image_matrix(corpus);
    if (x.cols() != probe.w1.cols()) throw Error(ErrorCode::DimensionMismatch, "probe d_img != corpus d_img");
    return ((x * probe.w1.transpose()).rowwise() + probe.b1.transpose()).cwiseMax(0.0);
}

TranscoderResult extract_transcoder_neurons(const ProbeParams& probe, const Corpus& corpus,
                                            const TrainConfig& sae_config, std::uint32_t index) {
    if (corpus.size() == 0) throw Error(ErrorCode::CorpusEmpty, "transcoder needs a non-empty corpus");
    auto trained = train_sae(probe_hidden_matrix(probe, corpus), sae_config);
    TranscoderResult out;
    out.sae = std::move(trained.params);
    out.loss_trace = std::move(trained.loss_trace);

    const Mat composed = out.sae.w_enc * probe.w1;  // latent x d_img
    const Vec bias = out.sae.w_enc * probe.b1 + out.sae.b_enc;
    const auto d = static_cast<Eigen::Index>(corpus.d());
    for (Eigen::Index r = 0; r < composed.rows(); ++r) {
        Neuron n;
        n.id = "tc" + std::to_string(index) + "-n" + std::to_string(r);
        n.w = Vec::Zero(d);
        n.w.head(composed.cols()) = composed.row(r).transpose();
        n.b = bias[r];
        n.origin = {OriginKind::Transcoder, index, static_cast<std::uint32_t>(r)};
        out.candidates.push_back(std::move(n));
    }
    return out;
}

void append_labels(const std::vector<LabelRecord>& records, const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::app);
    if (!out) throw Error(ErrorCode::Io, "cannot open label log " + path);
    for (const auto& r : records)
        out << json{{"pair_id", r.pair_id},
                    {"label", to_string(r.label)},
                    {"labeler", to_string(r.labeler)},
                    {"round", r.round}}
                   .dump()
            << '\n';
    out.flush();
    if (!out) throw Error(ErrorCode::Io, "failed writing label log " + path);
}

std::vector<LabelRecord> read_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open label log " + path);
    std::vector<LabelRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = json::parse(line);
            out.push_back({j.at("pair_id").get<std::string>(), parse_label(j.at("label").get<std::string>()),
                           parse_labeler(j.value("labeler", std::string("seed"))), j.value("round", 0)});
        } catch (const json::exception& e) {
            throw Error(ErrorCode::Format, path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void save_probe(const ProbeParams& probe, const std::string& path) {
    probe.validate();
    detail::ByteWriter w;
    w.magic("LNPB");
    w.put<std::uint32_t>(1);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(probe.d()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(probe.hidden()));
    for (Eigen::Index i = 0; i < probe.w1.size(); ++i) w.put_f32(probe.w1.data()[i]);
    for (Eigen::Index i = 0; i < probe.b1.size(); ++i) w.put_f32(probe.b1[i]);
    for (Eigen::Index i = 0; i < probe.w2.size(); ++i) w.put_f32(probe.w2[i]);
    w.put_f32(probe.b2);
    w.seal();
    detail::write_binary_file(path, w.bytes());
}

ProbeParams load_probe(const std::string& path) {
    const auto bytes = detail::read_binary_file(path);
    detail::ByteReader r(detail::verify_sealed(bytes));
    r.expect_magic("LNPB");
    if (r.get<std::uint32_t>() != 1) throw Error(ErrorCode::Format, "unsupported probe version");
    const auto d = r.get<std::uint32_t>();
    const auto h = r.get<std::uint32_t>();
    ProbeParams p;
    p.w1.resize(h, d);
    p.b1.resize(h);
    p.w2.resize(h);
    for (Eigen::Index i = 0; i < p.w1.size(); ++i) p.w1.data()[i] = r.get_f32();
    for (Eigen::Index i = 0; i < p.b1.size(); ++i) p.b1[i] = r.get_f32();
    for (Eigen::Index i = 0; i < p.w2.size(); ++i) p.w2[i] = r.get_f32();
    p.b2 = r.get_f32();
    p.validate();
    return p;
}

void save_bootstrap_state(const BootstrapState& state, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const auto labels = (fs::path(dir) / "labels.jsonl").string();
    // Rewrite the log from the pool so the directory is self-consistent.
    fs::remove(labels);
    append_labels(state.pool.log(), labels);
    save_probe(state.probe, (fs::path(dir) / "probe.bin").string());
    json queue = json::array();
    for (const auto& f : state.queue) queue.push_back({{"pair_id", f.pair_id}, {"score", f.score}});
    write_text_file((fs::path(dir) / "state.json").string(),
                    json{{"round", state.round}, {"queue", queue}, {"loss_trace", state.loss_trace}}.dump(2));
}

BootstrapState load_bootstrap_state(const std::string& dir) {
    namespace fs = std::filesystem;
    BootstrapState state;
    const auto j = json::parse(read_text_file((fs::path(dir) / "state.json").string()));
    state.round = j.at("round").get<int>();
    for (const auto& f : j.at("queue")) state.queue.push_back({f.at("pair_id"), f.at("score")});
    state.loss_trace = j.value("loss_trace", std::vector<double>{});
    state.pool.add(read_labels((fs::path(dir) / "labels.jsonl").string()));
    state.probe = load_probe((fs::path(dir) / "probe.bin").string());
    return state;
}

}  // namespace lanse
