#include "lanse/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "binary_io.hpp"
#include "lanse/lanse_encoder.hpp"

namespace lanse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array kStageNames{"ingest", "train", "bootstrap", "curate", "build",
                                 "calibrate", "distill", "encode", "evaluate"};

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw Error(ErrorCode::Format, where + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
            throw Error(ErrorCode::Format, "unknown config key \"" + where + key + "\"");
    }
}

template <typename T>
void take(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void read_train(const json& j, TrainConfig& c, const std::string& where) {
    reject_unknown(j, {"epochs", "batch_size", "step_size", "seed", "latent_dim", "k"}, where);
    take(j, "epochs", c.epochs);
    take(j, "batch_size", c.batch_size);
    take(j, "step_size", c.step_size);
    take(j, "seed", c.seed);
    take(j, "latent_dim", c.latent_dim);
    take(j, "k", c.k);
}

json train_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},     {"batch_size", c.batch_size}, {"step_size", c.step_size},
            {"seed", c.seed},         {"latent_dim", c.latent_dim}, {"k", c.k}};
}

std::string timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

}  // namespace

std::string_view to_string(Stage s) { return kStageNames[static_cast<std::size_t>(s)]; }

Stage parse_stage(std::string_view name) {
    std::string n(name);
    if (n == "train-sae") n = "train";
    for (std::size_t i = 0; i < kStageNames.size(); ++i)
        if (n == kStageNames[i]) return static_cast<Stage>(i);
    throw Error(ErrorCode::InvalidArgument, "unknown stage \"" + std::string(name) + "\"");
}

std::vector<Stage> all_stages() {
    std::vector<Stage> out;
    for (std::size_t i = 0; i < kStageNames.size(); ++i) out.push_back(static_cast<Stage>(i));
    return out;
}

RunConfig RunConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Format, std::string("config is not valid JSON: ") + e.what());
    }
    reject_unknown(j,
                   {"data_dir", "input", "input_format", "d_img", "d_txt", "normalize", "ensemble_size", "shard_seed",
                    "sae", "seed_labels", "bootstrap", "transcoder", "curation", "transcript", "human_verdicts",
                    "replay_only", "lmm", "tau_percentile", "distill", "metrics", "sweep_grid", "model_tag", "port"},
                   "");
    RunConfig c;
    try {
        take(j, "data_dir", c.data_dir);
        take(j, "input", c.input);
        take(j, "input_format", c.input_format);
        take(j, "d_img", c.d_img);
        take(j, "d_txt", c.d_txt);
        take(j, "normalize", c.normalize);
        take(j, "ensemble_size", c.ensemble_size);
        take(j, "shard_seed", c.shard_seed);
        if (j.contains("sae")) read_train(j["sae"], c.sae, "sae.");
        take(j, "seed_labels", c.seed_labels);
        if (j.contains("bootstrap")) {
            const auto& b = j["bootstrap"];
            reject_unknown(b, {"hidden", "epochs", "batch_size", "step_size", "seed", "score_threshold", "budget"},
                           "bootstrap.");
            take(b, "hidden", c.bootstrap.probe.hidden);
            take(b, "epochs", c.bootstrap.probe.epochs);
            take(b, "batch_size", c.bootstrap.probe.batch_size);
            take(b, "step_size", c.bootstrap.probe.step_size);
            take(b, "seed", c.bootstrap.probe.seed);
            take(b, "score_threshold", c.bootstrap.score_threshold);
            take(b, "budget", c.bootstrap.budget);
        }
        if (j.contains("transcoder")) read_train(j["transcoder"], c.transcoder, "transcoder.");
        if (j.contains("curation")) {
            const auto& k = j["curation"];
            reject_unknown(k,
                           {"summary_samples", "accuracy_samples", "n_min", "retries", "threshold", "dedup_cosine",
                            "realism_fraction", "max_in_flight"},
                           "curation.");
            take(k, "summary_samples", c.curation.summary_samples);
            take(k, "accuracy_samples", c.curation.accuracy_samples);
            take(k, "n_min", c.curation.n_min);
            take(k, "retries", c.curation.retries);
            take(k, "threshold", c.curation.filter.threshold);
            take(k, "dedup_cosine", c.curation.filter.dedup_cosine);
            take(k, "realism_fraction", c.curation.realism_fraction);
            take(k, "max_in_flight", c.curation.max_in_flight);
        }
        take(j, "transcript", c.transcript);
        take(j, "human_verdicts", c.human_verdicts);
        take(j, "replay_only", c.replay_only);
        if (j.contains("lmm")) {
            const auto& l = j["lmm"];
            reject_unknown(l, {"url", "model", "timeout_seconds"}, "lmm.");
            HttpJudgeConfig h;
            take(l, "url", h.url);
            take(l, "model", h.model);
            take(l, "timeout_seconds", h.timeout_seconds);
            c.lmm = h;
        }
        take(j, "tau_percentile", c.tau_percentile);
        if (j.contains("distill")) {
            const auto& d = j["distill"];
            reject_unknown(d, {"epochs", "batch_size", "step_size", "seed", "init", "train_adapter"}, "distill.");
            take(d, "epochs", c.distill.epochs);
            take(d, "batch_size", c.distill.batch_size);
            take(d, "step_size", c.distill.step_size);
            take(d, "seed", c.distill.seed);
            take(d, "train_adapter", c.distill.train_adapter);
            if (d.contains("init")) {
                const auto init = d["init"].get<std::string>();
                if (init == "joint-slice") c.distill.init = DistillInit::JointSlice;
                else if (init == "random") c.distill.init = DistillInit::Random;
                else throw Error(ErrorCode::Format, "distill.init must be joint-slice or random");
            }
        }
        if (j.contains("metrics")) {
            const auto& m = j["metrics"];
            reject_unknown(m, {"exhaustive_limit", "samples", "seed"}, "metrics.");
            take(m, "exhaustive_limit", c.sampler.exhaustive_limit);
            take(m, "samples", c.sampler.samples);
            take(m, "seed", c.sampler.seed);
        }
        take(j, "sweep_grid", c.sweep_grid);
        take(j, "model_tag", c.model_tag);
        take(j, "port", c.port);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Format, std::string("config value has the wrong type: ") + e.what());
    }
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    auto c = from_json(read_text_file(path));
    c.apply_env();
    c.validate();
    return c;
}

void RunConfig::apply_env() {
    if (const char* dir = std::getenv("LANSE_DATA_DIR"); dir && *dir) data_dir = dir;
    if (auto env = HttpJudgeConfig::from_env()) {
        if (!lmm) lmm = HttpJudgeConfig{};
        lmm->url = env->url;
        if (!env->model.empty()) lmm->model = env->model;
        lmm->api_key = env->api_key;
    } else if (lmm) {
        if (const char* key = std::getenv("LANSE_LMM_KEY")) lmm->api_key = key;
        if (const char* model = std::getenv("LANSE_LMM_MODEL"); model && *model) lmm->model = model;
    }
}

void RunConfig::validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidArgument, "config: " + m); };
    if (data_dir.empty()) fail("data_dir must be set");
    if (input_format != "jsonl" && input_format != "bin") fail("input_format must be jsonl or bin");
    if (ensemble_size < 1) fail("ensemble_size must be >= 1");
    sae.validate();
    transcoder.validate();
    if (bootstrap.probe.hidden < 1) fail("bootstrap.hidden must be >= 1");
    if (bootstrap.probe.epochs < 1 || bootstrap.probe.batch_size < 1 || !(bootstrap.probe.step_size > 0))
        fail("bootstrap epochs, batch_size and step_size must be positive");
    if (curation.summary_samples < 1 || curation.accuracy_samples < 1) fail("curation sample counts must be >= 1");
    if (curation.retries < 0) fail("curation.retries must be >= 0");
    if (curation.filter.threshold < 0 || curation.filter.threshold > 1) fail("curation.threshold must be in [0, 1]");
    if (curation.filter.dedup_cosine < -1 || curation.filter.dedup_cosine > 1)
        fail("curation.dedup_cosine must be in [-1, 1]");
    if (curation.realism_fraction < 0 || curation.realism_fraction > 1) fail("curation.realism_fraction must be in [0, 1]");
    if (curation.max_in_flight < 1) fail("curation.max_in_flight must be >= 1");
    if (!(tau_percentile >= 0 && tau_percentile <= 100)) fail("tau_percentile must be in [0, 100]");
    if (distill.epochs < 0 || distill.batch_size < 1 || !(distill.step_size > 0)) fail("invalid distill settings");
    if (sampler.samples < 1) fail("metrics.samples must be >= 1");
    if (!std::is_sorted(sweep_grid.begin(), sweep_grid.end())) fail("sweep_grid must be ascending");
    if (port < 0 || port > 65535) fail("port must be in [0, 65535]");
}

std::string RunConfig::to_json() const {
    json j = {{"data_dir", data_dir},
              {"input", input},
              {"input_format", input_format},
              {"d_img", d_img},
              {"d_txt", d_txt},
              {"normalize", normalize},
              {"ensemble_size", ensemble_size},
              {"shard_seed", shard_seed},
              {"sae", train_json(sae)},
              {"seed_labels", seed_labels},
              {"bootstrap",
               {{"hidden", bootstrap.probe.hidden},
                {"epochs", bootstrap.probe.epochs},
                {"batch_size", bootstrap.probe.batch_size},
                {"step_size", bootstrap.probe.step_size},
                {"seed", bootstrap.probe.seed},
                {"score_threshold", bootstrap.score_threshold},
                {"budget", bootstrap.budget}}},
              {"transcoder", train_json(transcoder)},
              {"curation",
               {{"summary_samples", curation.summary_samples},
                {"accuracy_samples", curation.accuracy_samples},
                {"n_min", curation.n_min},
                {"retries", curation.retries},
                {"threshold", curation.filter.threshold},
                {"dedup_cosine", curation.filter.dedup_cosine},
                {"realism_fraction", curation.realism_fraction},
                {"max_in_flight", curation.max_in_flight}}},
              {"transcript", transcript},
              {"human_verdicts", human_verdicts},
              {"replay_only", replay_only},
              {"tau_percentile", tau_percentile},
              {"distill",
               {{"epochs", distill.epochs},
                {"batch_size", distill.batch_size},
                {"step_size", distill.step_size},
                {"seed", distill.seed},
                {"init", distill.init == DistillInit::JointSlice ? "joint-slice" : "random"},
                {"train_adapter", distill.train_adapter}}},
              {"metrics",
               {{"exhaustive_limit", sampler.exhaustive_limit}, {"samples", sampler.samples}, {"seed", sampler.seed}}},
              {"sweep_grid", sweep_grid},
              {"model_tag", model_tag},
              {"port", port}};
    if (lmm) j["lmm"] = {{"url", lmm->url}, {"model", lmm->model}, {"timeout_seconds", lmm->timeout_seconds}};
    return j.dump(2);
}

std::string RunConfig::path(const std::string& relative) const {
    if (relative.empty()) return relative;
    const fs::path p(relative);
    return p.is_absolute() ? relative : (fs::path(data_dir) / p).string();
}

IngestResult ingest_file(const std::string& path, const std::string& format, std::uint32_t d_img, std::uint32_t d_txt,
                         const IngestOptions& options) {
    RawRecords raw;
    if (format == "jsonl") {
        raw = read_records_jsonl(path);
        if ((d_img == 0 || d_txt == 0)) {
            auto first = std::find_if(raw.records.begin(), raw.records.end(),
                                      [](const EmbeddingPair& p) { return !p.image_emb.empty() && !p.text_emb.empty(); });
            if (first == raw.records.end()) throw Error(ErrorCode::CorpusEmpty, path + " has no usable records");
            if (d_img == 0) d_img = static_cast<std::uint32_t>(first->image_emb.size());
            if (d_txt == 0) d_txt = static_cast<std::uint32_t>(first->text_emb.size());
        }
    } else if (format == "bin") {
        std::uint32_t fi = 0, ft = 0;
        raw = decode_records_binary(detail::read_binary_file(path), &fi, &ft);
        if (d_img == 0) d_img = fi;
        if (d_txt == 0) d_txt = ft;
    } else {
        throw Error(ErrorCode::InvalidArgument, "unknown input format \"" + format + "\"");
    }
    auto result = ingest_pairs(std::move(raw.records), d_img, d_txt, options);
    // Malformed lines also surface as "missing id"; report the parse error instead.
    std::set<std::size_t> bad;
    for (const auto& m : raw.malformed) bad.insert(m.index);
    std::erase_if(result.rejected, [&](const Rejection& r) { return bad.count(r.index) > 0; });
    result.rejected.insert(result.rejected.end(), raw.malformed.begin(), raw.malformed.end());
    std::sort(result.rejected.begin(), result.rejected.end(),
              [](const Rejection& a, const Rejection& b) { return a.index < b.index; });
    return result;
}

std::string artifact_checksum(const std::string& path) {
    if (!fs::is_directory(path)) return sha256_file(path);
    std::vector<std::string> names;
    for (const auto& entry : fs::recursive_directory_iterator(path))
        if (entry.is_regular_file()) names.push_back(fs::relative(entry.path(), path).generic_string());
    std::sort(names.begin(), names.end());
    std::string listing;
    for (const auto& n : names) listing += n + ":" + sha256_file((fs::path(path) / n).string()) + "\n";
    return sha256_hex(listing);
}

namespace {

struct Input {
    std::string path;
    Stage producer;
    bool optional = false;
};

struct StageSpec {
    std::vector<Input> inputs;
    std::vector<std::string> outputs;
    json config;
    std::function<std::vector<std::string>()> run;  // returns the outputs it wrote
};

class Runner {
public:
    Runner(const RunConfig& config, std::shared_ptr<JudgeBackend> live) : c_(config), live_(std::move(live)) {
        fs::create_directories(c_.data_dir);
        fs::create_directories(c_.path("manifests"));
        fs::create_directories(c_.path("logs"));
        log_path_ = c_.path("logs/pipeline.log");
    }

    PipelineResult run(std::vector<Stage> stages) {
        std::sort(stages.begin(), stages.end());
        stages.erase(std::unique(stages.begin(), stages.end()), stages.end());
        PipelineResult result;
        for (Stage s : stages) {
            auto spec = make(s);
            result.stages.push_back(execute(s, spec));
        }
        const auto report = c_.path("report.json");
        if (fs::exists(report)) result.report = report_from_json(read_text_file(report));
        return result;
    }

private:
    const RunConfig& c_;
    std::shared_ptr<JudgeBackend> live_;
    std::string log_path_;

    void log(const std::string& line) {
        std::ofstream out(log_path_, std::ios::app);
        out << timestamp() << ' ' << line << '\n';
    }

    std::string sae_path(std::size_t s) const { return c_.path("ensemble/sae-" + std::to_string(s) + ".bin"); }

    StageOutcome execute(Stage s, StageSpec& spec) {
        const std::string name(to_string(s));
        json inputs = json::object();
        for (const auto& in : spec.inputs) {
            if (!fs::exists(in.path)) {
                if (in.optional) {
                    inputs[in.path] = "absent";
                    continue;
                }
                // Inputs "produced" by the consuming stage itself are user-supplied files.
                const auto msg = "stage " + name + " requires " + in.path +
                                 (in.producer == s ? std::string(" (not found)")
                                                   : " (produced by stage " + std::string(to_string(in.producer)) + ")");
                log(msg);
                throw Error(ErrorCode::Dependency, msg);
            }
            inputs[in.path] = artifact_checksum(in.path);
        }
        const auto manifest_path = c_.path("manifests/" + name + ".json");
        if (fs::exists(manifest_path)) {
            try {
                const auto m = json::parse(read_text_file(manifest_path));
                bool fresh = m.at("inputs") == inputs && m.at("config") == spec.config;
                for (const auto& [out, sum] : m.at("outputs").items())
                    fresh = fresh && fs::exists(out) && artifact_checksum(out) == sum.get<std::string>();
                if (fresh) {
                    spdlog::info("stage {}: up to date, skipped", name);
                    log("stage " + name + " skipped (up to date)");
                    StageOutcome o{s, true, {}};
                    for (const auto& [out, sum] : m.at("outputs").items()) o.outputs.push_back(out);
                    return o;
                }
            } catch (const json::exception&) {
                spdlog::warn("stage {}: unreadable manifest, rerunning", name);
            }
        }

        spdlog::info("stage {}: running", name);
        log("stage " + name + " started");
        std::vector<std::string> outputs;
        try {
            outputs = spec.run();
        } catch (const Error& e) {
            log("stage " + name + " failed: " + e.what());
            throw Error(e.code(), "stage " + name + " failed: " + e.what() + " (log: " + log_path_ + ")");
        } catch (const std::exception& e) {
            log("stage " + name + " failed: " + e.what());
            throw Error(ErrorCode::InvalidArgument,
                        "stage " + name + " failed: " + e.what() + " (log: " + log_path_ + ")");
        }
        if (outputs.empty()) {
            log("stage " + name + " produced nothing");
            return {s, true, {}};
        }
        json out_sums = json::object();
        for (const auto& o : outputs) out_sums[o] = artifact_checksum(o);
        write_text_file(manifest_path, json{{"stage", name},
                                            {"completed_at", timestamp()},
                                            {"inputs", inputs},
                                            {"config", spec.config},
                                            {"outputs", out_sums}}
                                           .dump(2));
        log("stage " + name + " finished");
        return {s, false, outputs};
    }

    StageSpec make(Stage s) {
        const auto corpus = c_.path("corpus.bin");
        switch (s) {
            case Stage::Ingest: {
                if (c_.input.empty()) throw Error(ErrorCode::InvalidArgument, "config: input is required for ingest");
                const auto input = c_.path(c_.input);
                return {{{input, Stage::Ingest}},
                        {corpus},
                        {{"format", c_.input_format}, {"d_img", c_.d_img}, {"d_txt", c_.d_txt}, {"normalize", c_.normalize}},
                        [this, corpus, input] {
                            auto r = ingest_file(input, c_.input_format, c_.d_img, c_.d_txt, {c_.normalize});
                            for (const auto& rej : r.rejected)
                                spdlog::warn("ingest: record {} ({}) rejected: {}", rej.index, rej.id, rej.reason);
                            write_corpus(r.corpus, corpus);
                            log("ingest: " + std::to_string(r.corpus.size()) + " pairs, " +
                                std::to_string(r.rejected.size()) + " rejected");
                            return std::vector<std::string>{corpus};
                        }};
            }
            case Stage::Train: {
                std::vector<std::string> outs;
                for (std::size_t i = 0; i < c_.ensemble_size; ++i) outs.push_back(sae_path(i));
                return {{{corpus, Stage::Ingest}},
                        outs,
                        {{"sae", train_json(c_.sae)}, {"ensemble_size", c_.ensemble_size}, {"shard_seed", c_.shard_seed}},
                        [this, corpus, outs] {
                            const auto shards = shard_corpus(read_corpus(corpus), c_.ensemble_size, c_.shard_seed);
                            auto ens = train_ensemble(shards, c_.sae);
                            for (const auto& [idx, msg] : ens.failures) log("train: member " + std::to_string(idx) + " failed: " + msg);
                            if (!ens.failures.empty())
                                throw Error(ErrorCode::Divergence, std::to_string(ens.failures.size()) +
                                                                       " ensemble member(s) failed; first: " +
                                                                       ens.failures.front().second);
                            fs::remove_all(c_.path("ensemble"));
                            for (std::size_t i = 0; i < outs.size(); ++i) save_checkpoint(ens.members[i]->params, outs[i]);
                            return outs;
                        }};
            }
            case Stage::Bootstrap: {
                const auto labels = c_.path(c_.seed_labels);
                const auto state_dir = c_.path("bootstrap");
                const auto candidates = c_.path("transcoder.json");
                StageSpec spec{{{corpus, Stage::Ingest}},
                               {state_dir, candidates},
                               {{"hidden", c_.bootstrap.probe.hidden},
                                {"epochs", c_.bootstrap.probe.epochs},
                                {"batch_size", c_.bootstrap.probe.batch_size},
                                {"step_size", c_.bootstrap.probe.step_size},
                                {"seed", c_.bootstrap.probe.seed},
                                {"score_threshold", c_.bootstrap.score_threshold},
                                {"budget", c_.bootstrap.budget},
                                {"transcoder", train_json(c_.transcoder)}},
                               {}};
                if (c_.seed_labels.empty()) {
                    spec.run = [this] {
                        spdlog::warn("stage bootstrap: no seed_labels configured; no physics candidates");
                        return std::vector<std::string>{};
                    };
                    return spec;
                }
                spec.inputs.push_back({labels, Stage::Bootstrap});
                spec.run = [this, corpus, labels, state_dir, candidates] {
                    const auto cp = read_corpus(corpus);
                    const auto all = read_labels(labels);
                    std::map<int, std::vector<LabelRecord>> by_round;
                    for (const auto& l : all) by_round[l.round].push_back(l);
                    if (by_round.empty()) throw Error(ErrorCode::InvalidArgument, "seed label file is empty");
                    auto it = by_round.begin();
                    auto state = init_bootstrap(cp, it->second, c_.bootstrap);
                    for (++it; it != by_round.end(); ++it) run_round(state, cp, it->second, c_.bootstrap);
                    fs::remove_all(state_dir);
                    save_bootstrap_state(state, state_dir);
                    auto tc = extract_transcoder_neurons(state.probe, cp, c_.transcoder);
                    write_registry(tc.candidates, candidates);
                    return std::vector<std::string>{state_dir, candidates};
                };
                return spec;
            }
            case Stage::Curate: {
                std::vector<Input> inputs{{corpus, Stage::Ingest}};
                for (std::size_t i = 0; i < c_.ensemble_size; ++i) inputs.push_back({sae_path(i), Stage::Train});
                const auto candidates = c_.path("transcoder.json");
                inputs.push_back({candidates, Stage::Bootstrap, true});
                const auto human = c_.path(c_.human_verdicts);
                if (!c_.human_verdicts.empty()) inputs.push_back({human, Stage::Curate});
                const auto registry = c_.path("registry.json");
                const auto report = c_.path("curation.json");
                json cfg = {{"summary_samples", c_.curation.summary_samples},
                            {"accuracy_samples", c_.curation.accuracy_samples},
                            {"n_min", c_.curation.n_min},
                            {"retries", c_.curation.retries},
                            {"threshold", c_.curation.filter.threshold},
                            {"dedup_cosine", c_.curation.filter.dedup_cosine},
                            {"realism_fraction", c_.curation.realism_fraction}};
                return {inputs, {registry, report}, cfg, [this, corpus, candidates, human, registry, report] {
                            const auto cp = read_corpus(corpus);
                            std::vector<SaeParams> ensemble;
                            for (std::size_t i = 0; i < c_.ensemble_size; ++i) ensemble.push_back(load_checkpoint(sae_path(i)));
                            std::vector<Neuron> physics;
                            if (fs::exists(candidates)) physics = read_registry(candidates);
                            std::vector<JudgeVerdict> human_verdicts;
                            if (!c_.human_verdicts.empty()) human_verdicts = read_verdicts(human);

                            std::shared_ptr<JudgeBackend> live = live_;
                            if (!live && !c_.replay_only && c_.lmm && !c_.lmm->url.empty())
                                live = std::make_shared<HttpJudge>(*c_.lmm);
                            auto transcript = std::make_shared<Transcript>(c_.path(c_.transcript));
                            TranscriptJudge judge(transcript, c_.replay_only ? nullptr : live);
                            auto result = curate(pool_neurons(ensemble), physics, cp, judge, human_verdicts, c_.curation);
                            log("curate: " + std::to_string(result.registry.size()) + " neurons kept, transcript hits " +
                                std::to_string(judge.hits()) + ", misses " + std::to_string(judge.misses()));
                            write_registry(result.registry, registry);
                            json cands = json::array();
                            for (const auto& r : result.candidates)
                                cands.push_back({{"id", r.neuron_id},
                                                 {"branch", to_string(r.branch)},
                                                 {"status", to_string(r.status)},
                                                 {"retries", r.retries}});
                            write_text_file(report, cands.dump(1));
                            const auto verdicts = c_.path("verdicts.jsonl");
                            fs::remove(verdicts);
                            append_verdicts(result.verdicts, verdicts);
                            return std::vector<std::string>{registry, report};
                        }};
            }
            case Stage::Build: {
                const auto registry = c_.path("registry.json");
                const auto raw = c_.path("model-raw");
                return {{{registry, Stage::Curate}}, {raw}, json::object(), [registry, raw] {
                            auto model = assemble(read_registry(registry));
                            fs::remove_all(raw);
                            save_model(model, raw);
                            return std::vector<std::string>{raw};
                        }};
            }
            case Stage::Calibrate: {
                const auto raw = c_.path("model-raw");
                const auto model = c_.path("model");
                return {{{raw, Stage::Build}, {corpus, Stage::Ingest}},
                        {model},
                        {{"percentile", c_.tau_percentile}},
                        [this, raw, model, corpus] {
                            auto m = load_model(raw);
                            calibrate_tau(m, read_corpus(corpus), c_.tau_percentile);
                            fs::remove_all(model);
                            save_model(m, model);
                            return std::vector<std::string>{model};
                        }};
            }
            case Stage::Distill: {
                const auto model = c_.path("model");
                const auto img = c_.path("enc-image"), txt = c_.path("enc-text");
                return {{{model, Stage::Calibrate}, {corpus, Stage::Ingest}},
                        {img, txt},
                        {{"epochs", c_.distill.epochs},
                         {"batch_size", c_.distill.batch_size},
                         {"step_size", c_.distill.step_size},
                         {"seed", c_.distill.seed},
                         {"init", c_.distill.init == DistillInit::JointSlice ? "joint-slice" : "random"},
                         {"train_adapter", c_.distill.train_adapter}},
                        [this, model, corpus, img, txt] {
                            const auto m = load_model(model);
                            const auto cp = read_corpus(corpus);
                            for (auto [modality, dir] : {std::pair{Modality::ImageOnly, img}, std::pair{Modality::TextOnly, txt}}) {
                                auto r = distill(m, cp, modality, c_.distill);
                                log("distill " + std::string(to_string(modality)) + ": loss " +
                                    std::to_string(r.loss_trace.front()) + " -> " + std::to_string(r.loss_trace.back()));
                                fs::remove_all(dir);
                                save_modality_encoder(r.encoder, dir);
                            }
                            return std::vector<std::string>{img, txt};
                        }};
            }
            case Stage::Encode: {
                const auto model = c_.path("model");
                const auto img = c_.path("enc-image"), txt = c_.path("enc-text");
                const auto aj = c_.path("acts-joint.jsonl"), ai = c_.path("acts-image.jsonl"),
                           at = c_.path("acts-text.jsonl");
                return {{{model, Stage::Calibrate}, {corpus, Stage::Ingest}, {img, Stage::Distill}, {txt, Stage::Distill}},
                        {aj, ai, at},
                        json::object(),
                        [model, corpus, img, txt, aj, ai, at] {
                            const auto m = load_model(model);
                            const auto cp = read_corpus(corpus);
                            const auto ie = load_modality_encoder(img);
                            const auto te = load_modality_encoder(txt);
                            write_activations(encode_corpus(m, cp, Modality::Joint), aj);
                            write_activations(encode_corpus(m, cp, Modality::ImageOnly, {&ie, &te}), ai);
                            write_activations(encode_corpus(m, cp, Modality::TextOnly, {&ie, &te}), at);
                            return std::vector<std::string>{aj, ai, at};
                        }};
            }
            case Stage::Evaluate: {
                const auto aj = c_.path("acts-joint.jsonl"), ai = c_.path("acts-image.jsonl"),
                           at = c_.path("acts-text.jsonl");
                const auto model = c_.path("model");
                const auto report = c_.path("report.json");
                std::vector<Input> inputs{{aj, Stage::Encode}, {ai, Stage::Encode}, {at, Stage::Encode}, {model, Stage::Calibrate}};
                std::vector<std::string> outs{report};
                if (!c_.sweep_grid.empty()) {
                    inputs.push_back({corpus, Stage::Ingest});
                    inputs.push_back({c_.path("enc-image"), Stage::Distill});
                    inputs.push_back({c_.path("enc-text"), Stage::Distill});
                    outs.push_back(c_.path("sweep.json"));
                }
                return {inputs,
                        outs,
                        {{"model_tag", c_.model_tag},
                         {"exhaustive_limit", c_.sampler.exhaustive_limit},
                         {"samples", c_.sampler.samples},
                         {"seed", c_.sampler.seed},
                         {"sweep_grid", c_.sweep_grid}},
                        [this, aj, ai, at, model, report, corpus, outs] {
                            const auto m = load_model(model);
                            const auto r = groupwise_report(read_activations(aj), read_activations(ai),
                                                            read_activations(at), c_.model_tag, m.provenance, c_.sampler);
                            write_text_file(report, report_to_json(r));
                            if (!c_.sweep_grid.empty()) {
                                const auto ie = load_modality_encoder(c_.path("enc-image"));
                                const auto te = load_modality_encoder(c_.path("enc-text"));
                                const auto rows = tau_sweep(m, read_corpus(corpus), c_.sweep_grid, {&ie, &te},
                                                            c_.model_tag, c_.sampler);
                                json arr = json::array();
                                for (const auto& row : rows)
                                    arr.push_back({{"scale", row.scale}, {"report", json::parse(report_to_json(row.report))}});
                                write_text_file(c_.path("sweep.json"), arr.dump(2));
                            }
                            return outs;
                        }};
            }
        }
        throw Error(ErrorCode::InvalidArgument, "unknown stage");
    }
};

}  // namespace

PipelineResult run_pipeline(const RunConfig& config, const std::vector<Stage>& stages,
                            std::shared_ptr<JudgeBackend> live_judge) {
    config.validate();
    if (stages.empty()) throw Error(ErrorCode::InvalidArgument, "no stages requested");
    Runner runner(config, std::move(live_judge));
    return runner.run(stages);
}

}  // namespace lanse
