#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lanse/common.hpp"

namespace lanse {

class Corpus;
struct Neuron;
struct ModalityEncoder;

/// Binary indicator vector, one byte per neuron (0 or 1).
using Bits = std::vector<std::uint8_t>;

/// Stacked neurons of one category.
struct NeuronGroup {
    Mat w;    // d_c x d
    Vec b;    // d_c
    Vec tau;  // d_c, per-neuron activation threshold
    std::vector<std::string> ids;

    std::size_t size() const { return ids.size(); }
};

/// The deployable evaluator. All nine groups are always present (possibly empty).
struct LanseModel {
    std::map<Category, NeuronGroup> groups;
    std::size_t d = 0;
    std::string provenance;  // checksum of the registry it was assembled from

    const NeuronGroup& group(Category c) const;
    std::size_t total_neurons() const;
    /// Throws if ids repeat, shapes disagree, or any tau is negative.
    void validate() const;
};

/// Stacks the registry into per-category groups in registry order. Thresholds start at zero.
LanseModel assemble(const std::vector<Neuron>& registry);

/// ReLU(W_c x + b_c).
Vec activate(const LanseModel& model, const Vec& joint, Category group);

/// 1 where real[i] > tau[i] (strict).
Bits binarize(const Vec& real, const Vec& tau);

/// Linear-interpolation percentile (numpy's default) of a sample, p in [0, 100].
double percentile(std::vector<double> values, double p);

/// Sets each tau to the given percentile of that neuron's activations over the
/// reference corpus. Neurons that never fire get tau = 0 and a warning.
void calibrate_tau(LanseModel& model, const Corpus& reference, double percentile_value = 99.5);

/// Returns a copy with every threshold multiplied by `scale` (scale = inf -> inf).
LanseModel scale_tau(const LanseModel& model, double scale);

enum class Modality : std::uint8_t { Joint, ImageOnly, TextOnly };
std::string_view to_string(Modality m);
Modality parse_modality(std::string_view name);

struct GroupActivation {
    Vec real;
    Bits bits;
};

struct ActivationRecord {
    std::string pair_id;
    Modality modality = Modality::Joint;
    std::map<Category, GroupActivation> groups;
};

struct ModalityEncoders {
    const ModalityEncoder* image = nullptr;
    const ModalityEncoder* text = nullptr;
};

/// One record per pair for the requested modality, in corpus order.
/// Joint records carry all nine groups. Image-only records carry the
/// semantic groups (distilled image encoder) and the physics groups (joint
/// model with the text half zeroed). Text-only records carry the semantic
/// groups only.
std::vector<ActivationRecord> encode_corpus(const LanseModel& model, const Corpus& corpus, Modality modality,
                                            const ModalityEncoders& encoders = {});

// --- files ------------------------------------------------------------------

/// Directory with manifest.json (groups, ids, tau, checksums) and weights.bin.
void save_model(const LanseModel& model, const std::string& dir);
LanseModel load_model(const std::string& dir);

/// Bits packed LSB-first into bytes, base64 encoded.
std::string pack_bits(const Bits& bits);
Bits unpack_bits(const std::string& encoded, std::size_t length);

/// One JSON object per line: {id, modality, groups: {name: {real, bits}}}.
void write_activations(const std::vector<ActivationRecord>& records, const std::string& path);
std::vector<ActivationRecord> read_activations(const std::string& path);

}  // namespace lanse
