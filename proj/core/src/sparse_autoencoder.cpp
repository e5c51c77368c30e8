#include "lanse/sparse_autoencoder.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <future>
#include <numeric>
#include <random>
#include <thread>

#include <spdlog/spdlog.h>

#include "binary_io.hpp"
#include "lanse/adam.hpp"
#include "lanse/embedding_store.hpp"

namespace lanse {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

bool finite(const auto& m) { return m.allFinite(); }

// Indices of the k largest entries of `values` by `key`, ties to the lower index.
template <typename Key>
std::vector<Eigen::Index> select_top_k(Eigen::Index n, int k, Key key) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    auto better = [&](Eigen::Index a, Eigen::Index b) {
        double ka = key(a), kb = key(b);
        return ka > kb || (ka == kb && a < b);
    };
    std::nth_element(idx.begin(), idx.begin() + (k - 1), idx.end(), better);
    idx.resize(static_cast<std::size_t>(k));
    return idx;
}

Mat relu(const Mat& m) { return m.cwiseMax(0.0); }

// Row-wise pre-activations X W^T + b.
Mat affine_rows(const Mat& x, const Mat& w, const Vec& b) {
    Mat out = x * w.transpose();
    out.rowwise() += b.transpose();
    return out;
}

}  // namespace

void SaeParams::validate() const {
    const auto latent = w_enc.rows();
    const auto dim = w_enc.cols();
    if (latent < 1 || dim < 1) throw Error(ErrorCode::InvalidArgument, "SAE must have positive dims");
    if (b_enc.size() != latent || w_dec.rows() != dim || w_dec.cols() != latent || b_dec.size() != dim)
        throw Error(ErrorCode::DimensionMismatch, "SAE parameter shapes are inconsistent");
    if (k < 1 || k > latent)
        throw Error(ErrorCode::OutOfRange, "k=" + std::to_string(k) + " outside [1, latent_dim]");
    if (!finite(w_enc) || !finite(b_enc) || !finite(w_dec) || !finite(b_dec))
        throw Error(ErrorCode::InvalidArgument, "SAE parameters contain non-finite values");
}

void TrainConfig::validate() const {
    if (epochs < 0) throw Error(ErrorCode::InvalidArgument, "epochs must be non-negative");
    if (batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch_size must be positive");
    if (!(step_size > 0.0)) throw Error(ErrorCode::InvalidArgument, "step_size must be positive");
    if (latent_dim < 1) throw Error(ErrorCode::InvalidArgument, "latent_dim must be positive");
    if (k < 1 || k > latent_dim)
        throw Error(ErrorCode::OutOfRange,
                    "k=" + std::to_string(k) + " must be in [1, latent_dim=" + std::to_string(latent_dim) + "]");
}

Vec top_k_mask(const Vec& v, int k) {
    if (k < 1 || k > v.size())
        throw Error(ErrorCode::OutOfRange, "k=" + std::to_string(k) + " outside [1, " + std::to_string(v.size()) + "]");
    Vec out = Vec::Zero(v.size());
    for (auto i : select_top_k(v.size(), k, [&](Eigen::Index j) { return std::abs(v[j]); })) out[i] = v[i];
    return out;
}

Vec encode_dense(const SaeParams& params, const Vec& e) {
    if (static_cast<std::size_t>(e.size()) != params.d())
        throw Error(ErrorCode::DimensionMismatch,
                    "input length " + std::to_string(e.size()) + " != d=" + std::to_string(params.d()));
    return (params.w_enc * e + params.b_enc).cwiseMax(0.0);
}

Vec encode(const SaeParams& params, const Vec& e) {
    return top_k_mask(encode_dense(params, e), params.k);
}

Vec decode(const SaeParams& params, const Vec& z) {
    if (static_cast<std::size_t>(z.size()) != params.latent_dim())
        throw Error(ErrorCode::DimensionMismatch,
                    "latent length " + std::to_string(z.size()) + " != " + std::to_string(params.latent_dim()));
    return (params.w_dec * z + params.b_dec).cwiseMax(0.0);
}

double neuron_activation(std::size_t neuron_index, const SaeParams& params, const Vec& e) {
    if (neuron_index >= params.latent_dim())
        throw Error(ErrorCode::OutOfRange, "neuron index " + std::to_string(neuron_index) + " out of range");
    if (static_cast<std::size_t>(e.size()) != params.d()) throw Error(ErrorCode::DimensionMismatch, "input length != d");
    const auto row = static_cast<Eigen::Index>(neuron_index);
    return std::max(0.0, params.w_enc.row(row).dot(e) + params.b_enc[row]);
}

SaeParams init_sae(std::size_t d, std::size_t latent_dim, int k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    std::uniform_real_distribution<double> dist(-bound, bound);
    SaeParams p;
    p.w_enc.resize(static_cast<Eigen::Index>(latent_dim), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < p.w_enc.size(); ++i) p.w_enc.data()[i] = dist(rng);
    p.b_enc = Vec::Zero(static_cast<Eigen::Index>(latent_dim));
    p.w_dec = p.w_enc.transpose();
    p.b_dec = Vec::Zero(static_cast<Eigen::Index>(d));
    p.k = k;
    p.validate();
    return p;
}

Mat top_k_gates(const SaeParams& params, const Mat& batch) {
    Mat pre = affine_rows(batch, params.w_enc, params.b_enc);
    Mat gates = Mat::Zero(pre.rows(), pre.cols());
    for (Eigen::Index r = 0; r < pre.rows(); ++r) {
        auto row = pre.row(r);
        for (auto i : select_top_k(row.size(), params.k, [&](Eigen::Index j) { return std::max(0.0, row[j]); }))
            if (row[i] > 0.0) gates(r, i) = 1.0;
    }
    return gates;
}

double sae_loss(const SaeParams& params, const Mat& batch, const Mat* gates) {
    Mat gate_storage;
    if (gates == nullptr) {
        gate_storage = top_k_gates(params, batch);
        gates = &gate_storage;
    }
    Mat z = relu(affine_rows(batch, params.w_enc, params.b_enc)).cwiseProduct(*gates);
    Mat recon = relu(affine_rows(z, params.w_dec, params.b_dec));
    return (recon - batch).squaredNorm() / static_cast<double>(batch.rows());
}

double sae_loss_and_grad(const SaeParams& params, const Mat& batch, SaeGradients& grads) {
    const double n = static_cast<double>(batch.rows());
    Mat pre = affine_rows(batch, params.w_enc, params.b_enc);
    Mat gates = top_k_gates(params, batch);
    Mat z = relu(pre).cwiseProduct(gates);
    Mat out_pre = affine_rows(z, params.w_dec, params.b_dec);
    Mat diff = relu(out_pre) - batch;
    const double loss = diff.squaredNorm() / n;

    // d/d(out_pre): 2 (recon - e) / n through the decoder ReLU.
    Mat d_out = (2.0 / n) * diff.cwiseProduct((out_pre.array() > 0.0).cast<double>().matrix());
    grads.w_dec = d_out.transpose() * z;
    grads.b_dec = d_out.colwise().sum().transpose();
    // Gates already imply pre > 0, so they double as the ReLU derivative.
    Mat d_pre = (d_out * params.w_dec).cwiseProduct(gates);
    grads.w_enc = d_pre.transpose() * batch;
    grads.b_enc = d_pre.colwise().sum().transpose();
    return loss;
}

TrainResult train_sae(const Mat& data, const TrainConfig& config) {
    config.validate();
    if (data.rows() == 0) throw Error(ErrorCode::CorpusEmpty, "training shard is empty");
    if (config.batch_size > data.rows())
        throw Error(ErrorCode::InvalidArgument, "batch_size " + std::to_string(config.batch_size) +
                                                    " exceeds shard size " + std::to_string(data.rows()));
    TrainResult result;
    result.params = init_sae(static_cast<std::size_t>(data.cols()), static_cast<std::size_t>(config.latent_dim),
                             config.k, config.seed);
    auto& params = result.params;
    result.loss_trace.push_back(sae_loss(params, data));

    Adam adam(AdamConfig{.step_size = config.step_size});
    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(data.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    SaeGradients grads;
    Mat batch;
    Eigen::VectorXi fired(params.latent_dim());

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        fired.setZero();
        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            batch.resize(static_cast<Eigen::Index>(stop - start), data.cols());
            for (std::size_t r = start; r < stop; ++r)
                batch.row(static_cast<Eigen::Index>(r - start)) = data.row(order[r]);

            const double loss = sae_loss_and_grad(params, batch, grads);
            if (!std::isfinite(loss))
                throw Error(ErrorCode::Divergence, "non-finite SAE loss at epoch " + std::to_string(epoch) +
                                                       ", batch " + std::to_string(batches));
            fired += (grads.b_enc.array() != 0.0).cast<int>().matrix();
            adam.begin_step();
            adam.update(params.w_enc, grads.w_enc);
            adam.update(params.b_enc, grads.b_enc);
            adam.update(params.w_dec, grads.w_dec);
            adam.update(params.b_dec, grads.b_dec);
            loss_sum += loss;
            ++batches;
        }
        result.loss_trace.push_back(loss_sum / batches);
        const auto dead = (fired.array() == 0).count();
        if (dead > 0) spdlog::debug("sae epoch {}: {} dead latents", epoch, dead);
    }
    params.validate();
    return result;
}

TrainResult train_sae(const Corpus& shard, const TrainConfig& config) { return train_sae(joint_matrix(shard), config); }

EnsembleResult train_ensemble(const std::vector<Corpus>& shards, const TrainConfig& config, unsigned max_threads) {
    if (shards.empty()) throw Error(ErrorCode::InvalidArgument, "ensemble needs at least one shard");
    if (max_threads == 0) max_threads = std::max(1u, std::thread::hardware_concurrency());

    EnsembleResult out;
    out.members.resize(shards.size());
    std::vector<std::string> errors(shards.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t s = next++; s < shards.size(); s = next++) {
            TrainConfig member = config;
            member.seed = config.seed + s;
            try {
                out.members[s] = train_sae(shards[s], member);
            } catch (const std::exception& e) {
                errors[s] = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    const auto n = std::min<std::size_t>(max_threads, shards.size());
    for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    for (std::size_t s = 0; s < shards.size(); ++s) {
        if (!out.members[s]) {
            spdlog::error("ensemble shard {} failed: {}", s, errors[s]);
            out.failures.emplace_back(s, errors[s]);
        }
    }
    return out;
}

// --- checkpoint ------------------------------------------------------------

std::vector<std::uint8_t> encode_checkpoint(const SaeParams& params) {
    params.validate();
    detail::ByteWriter w;
    w.magic("LSAE");
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(params.d()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(params.latent_dim()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(params.k));
    for (Eigen::Index i = 0; i < params.w_enc.size(); ++i) w.put_f32(params.w_enc.data()[i]);
    for (Eigen::Index i = 0; i < params.b_enc.size(); ++i) w.put_f32(params.b_enc[i]);
    for (Eigen::Index i = 0; i < params.w_dec.size(); ++i) w.put_f32(params.w_dec.data()[i]);
    for (Eigen::Index i = 0; i < params.b_dec.size(); ++i) w.put_f32(params.b_dec[i]);
    w.seal();
    return std::move(w.bytes());
}

SaeParams decode_checkpoint(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(detail::verify_sealed(bytes));
    r.expect_magic("LSAE");
    auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw Error(ErrorCode::Format, "unsupported checkpoint version " + std::to_string(version));
    const auto d = static_cast<Eigen::Index>(r.get<std::uint32_t>());
    const auto latent = static_cast<Eigen::Index>(r.get<std::uint32_t>());
    SaeParams p;
    p.k = static_cast<int>(r.get<std::uint32_t>());
    p.w_enc.resize(latent, d);
    p.b_enc.resize(latent);
    p.w_dec.resize(d, latent);
    p.b_dec.resize(d);
    for (Eigen::Index i = 0; i < p.w_enc.size(); ++i) p.w_enc.data()[i] = r.get_f32();
    for (Eigen::Index i = 0; i < p.b_enc.size(); ++i) p.b_enc[i] = r.get_f32();
    for (Eigen::Index i = 0; i < p.w_dec.size(); ++i) p.w_dec.data()[i] = r.get_f32();
    for (Eigen::Index i = 0; i < p.b_dec.size(); ++i) p.b_dec[i] = r.get_f32();
    if (r.remaining() != 0) throw Error(ErrorCode::Format, "trailing bytes in checkpoint");
    p.validate();
    return p;
}

void save_checkpoint(const SaeParams& params, const std::string& path) {
    detail::write_binary_file(path, encode_checkpoint(params));
}

SaeParams load_checkpoint(const std::string& path) { return decode_checkpoint(detail::read_binary_file(path)); }

}  // namespace lanse
