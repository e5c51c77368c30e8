#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lanse/common.hpp"

namespace lanse {

class Corpus;

/// Weights of one k-sparse autoencoder. Encoder rows are candidate neurons.
struct SaeParams {
    Mat w_enc;  // latent_dim x d
    Vec b_enc;  // latent_dim
    Mat w_dec;  // d x latent_dim
    Vec b_dec;  // d
    int k = 1;

    std::size_t latent_dim() const { return static_cast<std::size_t>(w_enc.rows()); }
    std::size_t d() const { return static_cast<std::size_t>(w_enc.cols()); }
    /// Throws if shapes disagree, k is out of range, or any weight is non-finite.
    void validate() const;
};

struct TrainConfig {
    int epochs = 10;
    int batch_size = 64;
    double step_size = 1e-3;
    std::uint64_t seed = 0;
    int latent_dim = 15000;
    int k = 32;

    void validate() const;
};

struct TrainResult {
    SaeParams params;
    /// Entry 0 is the full-data loss at initialization; entry e is the mean batch loss of epoch e.
    std::vector<double> loss_trace;
};

/// Keeps the k largest-magnitude entries (ties go to the lower index), zeroes the rest.
Vec top_k_mask(const Vec& v, int k);

/// ReLU(W_enc e + b_enc) without the top-k mask.
Vec encode_dense(const SaeParams& params, const Vec& e);
/// top_k_mask(ReLU(W_enc e + b_enc), k).
Vec encode(const SaeParams& params, const Vec& e);
/// ReLU(W_dec z + b_dec).
Vec decode(const SaeParams& params, const Vec& z);
/// ReLU(W_enc[row] . e + b_enc[row]); no top-k.
double neuron_activation(std::size_t neuron_index, const SaeParams& params, const Vec& e);

/// Random encoder rows in [-1/sqrt(d), 1/sqrt(d)], decoder = encoder transpose, zero biases.
SaeParams init_sae(std::size_t d, std::size_t latent_dim, int k, std::uint64_t seed);

struct SaeGradients {
    Mat w_enc;
    Vec b_enc;
    Mat w_dec;
    Vec b_dec;
};

/// 0/1 matrix (rows = samples) marking the latents that survive ReLU and top-k.
Mat top_k_gates(const SaeParams& params, const Mat& batch);

/// Mean over rows of ||Dec(TopK(Enc(e))) - e||^2. When `gates` is given the
/// top-k selection is replaced by that fixed gate (used for gradient checks).
double sae_loss(const SaeParams& params, const Mat& batch, const Mat* gates = nullptr);

/// Loss and its gradient; the top-k mask is treated as a constant gate.
double sae_loss_and_grad(const SaeParams& params, const Mat& batch, SaeGradients& grads);

/// Trains on the rows of `data` with Adam. Throws ErrorCode::Divergence on a non-finite loss.
TrainResult train_sae(const Mat& data, const TrainConfig& config);
TrainResult train_sae(const Corpus& shard, const TrainConfig& config);

struct EnsembleResult {
    /// One slot per shard; empty where that shard failed.
    std::vector<std::optional<TrainResult>> members;
    std::vector<std::pair<std::size_t, std::string>> failures;
};

/// Trains one SAE per shard with seed = config.seed + shard index. Shards
/// train concurrently (up to `max_threads`, 0 = hardware concurrency).
EnsembleResult train_ensemble(const std::vector<Corpus>& shards, const TrainConfig& config,
                              unsigned max_threads = 0);

// "LSAE" checkpoint: header, row-major float32 blocks, trailing SHA-256.
std::vector<std::uint8_t> encode_checkpoint(const SaeParams& params);
SaeParams decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const SaeParams& params, const std::string& path);
SaeParams load_checkpoint(const std::string& path);

}  // namespace lanse
