#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lanse/bootstrap.hpp"
#include "lanse/embedding_store.hpp"
#include "lanse/judge.hpp"
#include "lanse/metrics.hpp"
#include "lanse/modality_distillation.hpp"
#include "lanse/neuron_curation.hpp"
#include "lanse/sparse_autoencoder.hpp"

namespace lanse {

enum class Stage : std::uint8_t { Ingest, Train, Bootstrap, Curate, Build, Calibrate, Distill, Encode, Evaluate };
std::string_view to_string(Stage s);
Stage parse_stage(std::string_view name);
/// Every stage in execution order.
std::vector<Stage> all_stages();

/// One declarative run. Relative paths resolve against data_dir.
struct RunConfig {
    std::string data_dir = "lanse-data";

    // ingest
    std::string input;
    std::string input_format = "jsonl";  // jsonl | bin
    std::uint32_t d_img = 0;             // 0: take from the first record
    std::uint32_t d_txt = 0;
    bool normalize = false;

    // train
    std::size_t ensemble_size = 4;
    std::uint64_t shard_seed = 0;
    TrainConfig sae;

    // bootstrap (skipped with a warning when seed_labels is empty)
    std::string seed_labels;
    BootstrapConfig bootstrap;
    TrainConfig transcoder{.epochs = 20, .batch_size = 64, .step_size = 1e-3, .seed = 0, .latent_dim = 64, .k = 4};

    // curate
    CurationConfig curation;
    std::string transcript = "transcript.jsonl";
    std::string human_verdicts;
    bool replay_only = false;
    std::optional<HttpJudgeConfig> lmm;

    // calibrate / distill / evaluate
    double tau_percentile = 99.5;
    DistillConfig distill;
    PairSampler sampler;
    std::vector<double> sweep_grid;
    std::string model_tag = "corpus";

    int port = 8080;

    /// Unknown keys are rejected. Env overrides: LANSE_DATA_DIR and the LANSE_LMM_* trio.
    static RunConfig from_json(const std::string& text);
    static RunConfig load(const std::string& path);
    void apply_env();
    void validate() const;
    std::string to_json() const;

    std::string path(const std::string& relative) const;
};

/// Reads a record file and validates it into a corpus.
IngestResult ingest_file(const std::string& path, const std::string& format, std::uint32_t d_img, std::uint32_t d_txt,
                         const IngestOptions& options = {});

struct StageOutcome {
    Stage stage;
    bool skipped = false;
    std::vector<std::string> outputs;
};

struct PipelineResult {
    std::vector<StageOutcome> stages;
    std::optional<MetricReport> report;
};

/// Runs the requested stages in execution order. Each stage records the
/// checksums of its inputs and outputs under <data_dir>/manifests and is
/// skipped when both still match. A missing input names the stage that
/// produces it (ErrorCode::Dependency). `live_judge` is consulted on
/// transcript misses; without it the configured LMM endpoint is used, or
/// replay-only mode when none is configured.
PipelineResult run_pipeline(const RunConfig& config, const std::vector<Stage>& stages,
                            std::shared_ptr<JudgeBackend> live_judge = nullptr);

/// SHA-256 over a file, or over the sorted (name, digest) list of a directory.
std::string artifact_checksum(const std::string& path);

}  // namespace lanse
