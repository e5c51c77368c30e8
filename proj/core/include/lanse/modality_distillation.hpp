#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lanse/common.hpp"
#include "lanse/lanse_encoder.hpp"

namespace lanse {

class Corpus;

struct HeadSlice {
    Category group;
    std::size_t offset = 0;
    std::vector<std::string> ids;  // same order as the joint model's group
};

/// Single-modality encoder onto the joint model's semantic latent space:
/// u = x + A x + a (residual adapter), out = ReLU(H u + h).
struct ModalityEncoder {
    Modality modality = Modality::ImageOnly;
    std::size_t d_single = 0;
    Mat adapter;     // d_single x d_single
    Vec adapter_bias;
    Mat head_w;      // (sum of semantic group sizes) x d_single
    Vec head_b;
    std::vector<HeadSlice> slices;
    std::string source_checksum;

    std::size_t outputs() const { return static_cast<std::size_t>(head_w.rows()); }
    /// All semantic outputs concatenated in slice order.
    Vec forward(const Vec& x) const;
    const HeadSlice& slice(Category group) const;
};

enum class DistillInit : std::uint8_t {
    // Head = the joint weights' slice for this modality; the other modality
    // is folded into the bias at its corpus mean. Adapter starts at zero.
    JointSlice,
    // Uniform in [-1/sqrt(d), 1/sqrt(d)], zero biases.
    Random,
};

struct DistillConfig {
    int epochs = 50;
    int batch_size = 64;
    double step_size = 1e-3;
    std::uint64_t seed = 0;
    DistillInit init = DistillInit::JointSlice;
    bool train_adapter = true;
};

struct DistillResult {
    ModalityEncoder encoder;
    /// Entry 0 is the loss at initialization, then one mean loss per epoch.
    /// Loss is the per-pair squared error summed over all semantic neurons.
    std::vector<double> loss_trace;
};

/// Rows = pairs, columns = joint real activations of the semantic groups.
Mat distill_targets(const LanseModel& joint, const Corpus& corpus);

struct DistillGradients {
    Mat adapter;
    Vec adapter_bias;
    Mat head_w;
    Vec head_b;
};

/// Mean over rows of ||forward(x) - target||^2.
double distill_loss(const ModalityEncoder& enc, const Mat& inputs, const Mat& targets);
double distill_loss_and_grad(const ModalityEncoder& enc, const Mat& inputs, const Mat& targets,
                             DistillGradients& grads);

ModalityEncoder init_modality_encoder(const LanseModel& joint, const Corpus& corpus, Modality modality,
                                      DistillInit init, std::uint64_t seed);

/// Fits the encoder to the joint model's real semantic activations with Adam.
DistillResult distill(const LanseModel& joint, const Corpus& corpus, Modality modality, const DistillConfig& config);

/// ReLU output for one semantic group; non-semantic groups throw.
Vec activate_single(const ModalityEncoder& enc, const Vec& emb, Category group);
/// Same, binarized with the joint model's thresholds for that group.
Bits activate_single_bits(const ModalityEncoder& enc, const LanseModel& joint, const Vec& emb, Category group);

void save_modality_encoder(const ModalityEncoder& enc, const std::string& dir);
ModalityEncoder load_modality_encoder(const std::string& dir);

}  // namespace lanse
