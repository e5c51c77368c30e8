#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lanse/common.hpp"
#include "lanse/neuron_curation.hpp"
#include "lanse/sparse_autoencoder.hpp"

namespace lanse {

class Corpus;

/// Two-layer classifier on image embeddings: sigmoid(w2 . ReLU(W1 e + b1) + b2).
struct ProbeParams {
    Mat w1;  // h x d_img
    Vec b1;
    Vec w2;
    double b2 = 0.0;

    std::size_t hidden() const { return static_cast<std::size_t>(w1.rows()); }
    std::size_t d() const { return static_cast<std::size_t>(w1.cols()); }
    void validate() const;
};

Vec probe_hidden(const ProbeParams& probe, const Vec& image_emb);
double probe_logit(const ProbeParams& probe, const Vec& image_emb);
/// Always strictly inside (0, 1).
double probe_score(const ProbeParams& probe, const Vec& image_emb);

enum class Label : std::uint8_t { Violation, Clean };
enum class Labeler : std::uint8_t { Seed, Human, Ui };
std::string_view to_string(Label l);
std::string_view to_string(Labeler l);
Label parse_label(std::string_view s);
Labeler parse_labeler(std::string_view s);

struct LabelRecord {
    std::string pair_id;
    Label label = Label::Clean;
    Labeler labeler = Labeler::Seed;
    int round = 0;
};

/// Append-only. The effective label of a pair is its most recently added record.
class LabelPool {
public:
    void add(const LabelRecord& record);
    void add(const std::vector<LabelRecord>& records);
    /// One record per pair, in order of first appearance.
    std::vector<LabelRecord> resolved() const;
    bool contains(const std::string& pair_id) const { return latest_.count(pair_id) > 0; }
    const std::vector<LabelRecord>& log() const { return log_; }
    std::size_t pairs() const { return latest_.size(); }

private:
    std::vector<LabelRecord> log_;
    std::map<std::string, std::size_t> latest_;  // pair -> index into log_
    std::vector<std::string> first_seen_;
};

struct ProbeConfig {
    std::size_t hidden = 256;
    int epochs = 200;
    int batch_size = 32;
    double step_size = 1e-3;
    std::uint64_t seed = 0;
};

struct ProbeTraining {
    ProbeParams probe;
    /// Entry 0 is the full-data loss at initialization, then one per epoch.
    std::vector<double> loss_trace;
};

struct ProbeGradients {
    Mat w1;
    Vec b1;
    Vec w2;
    double b2 = 0.0;
};

ProbeParams init_probe(std::size_t d_img, std::size_t hidden, std::uint64_t seed);
/// Mean binary cross-entropy; rows of `x` are image embeddings, y in {0, 1}.
double probe_loss(const ProbeParams& probe, const Mat& x, const Vec& y);
double probe_loss_and_grad(const ProbeParams& probe, const Mat& x, const Vec& y, ProbeGradients& grads);

/// Throws InvalidArgument unless both classes are present.
ProbeTraining train_probe(const Mat& x, const Vec& y, const ProbeConfig& config);
/// Trains on the image embeddings of the labeled pairs (violation = 1).
ProbeTraining train_probe(const Corpus& corpus, const std::vector<LabelRecord>& labels, const ProbeConfig& config);

struct FlagEntry {
    std::string pair_id;
    double score;
};

/// Unlabeled pairs scoring above the threshold, highest first, at most `budget`.
std::vector<FlagEntry> flag_candidates(const ProbeParams& probe, const Corpus& corpus, double score_threshold = 0.5,
                                       std::size_t budget = 200, const std::set<std::string>& labeled = {});

struct BootstrapConfig {
    ProbeConfig probe;
    double score_threshold = 0.5;
    std::size_t budget = 200;
};

struct BootstrapState {
    int round = 0;
    LabelPool pool;
    ProbeParams probe;
    std::vector<double> loss_trace;
    std::vector<FlagEntry> queue;
};

/// Round 0: trains on the seed labels and emits the first queue.
BootstrapState init_bootstrap(const Corpus& corpus, const std::vector<LabelRecord>& seed_labels,
                              const BootstrapConfig& config);
/// Adds the labels, retrains from scratch with seed + round, advances the round, re-flags.
void run_round(BootstrapState& state, const Corpus& corpus, const std::vector<LabelRecord>& new_labels,
               const BootstrapConfig& config);

struct TranscoderResult {
    SaeParams sae;
    std::vector<double> loss_trace;
    /// Composed to the joint input space (text part zero), ids "tc<index>-n<row>".
    std::vector<Neuron> candidates;
};

/// Post-ReLU probe hidden features, one row per pair.
Mat probe_hidden_matrix(const ProbeParams& probe, const Corpus& corpus);

/// Trains a top-k SAE on the probe's hidden features and composes each latent
/// back onto the image embedding. The composition matches the chained map
/// wherever every hidden pre-activation is non-negative.
TranscoderResult extract_transcoder_neurons(const ProbeParams& probe, const Corpus& corpus,
                                            const TrainConfig& sae_config, std::uint32_t index = 0);

// --- files ------------------------------------------------------------------

void append_labels(const std::vector<LabelRecord>& records, const std::string& path);
std::vector<LabelRecord> read_labels(const std::string& path);

void save_probe(const ProbeParams& probe, const std::string& path);
ProbeParams load_probe(const std::string& path);

/// Directory with labels.jsonl, probe.bin and state.json (round, queue).
void save_bootstrap_state(const BootstrapState& state, const std::string& dir);
BootstrapState load_bootstrap_state(const std::string& dir);

}  // namespace lanse
