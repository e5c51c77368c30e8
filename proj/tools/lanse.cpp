// lanse: command-line front end over the core library.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "lanse/bootstrap.hpp"
#include "lanse/embedding_store.hpp"
#include "lanse/judge.hpp"
#include "lanse/lanse_encoder.hpp"
#include "lanse/metrics.hpp"
#include "lanse/modality_distillation.hpp"
#include "lanse/neuron_curation.hpp"
#include "lanse/pipeline.hpp"
#include "lanse/service.hpp"
#include "lanse/sparse_autoencoder.hpp"
#include "lanse/synthetic.hpp"

#include <CLI11.hpp>

using namespace lanse;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::vector<double> parse_grid(const std::string& s) {
    std::vector<double> grid;
    for (const auto& tok : split(s, ',')) {
        if (tok == "inf") grid.push_back(std::numeric_limits<double>::infinity());
        else grid.push_back(std::stod(tok));
    }
    return grid;
}

std::optional<std::string> data_dir_env() {
    if (const char* d = std::getenv("LANSE_DATA_DIR"); d && *d) return std::string(d);
    return std::nullopt;
}

// The synthetic judge reads concept names from synth:// locators; only names and categories matter.
std::shared_ptr<JudgeBackend> synthetic_judge() {
    return std::make_shared<SyntheticJudge>(make_synthetic_corpus({.n_pairs = 8}).concepts);
}

std::shared_ptr<JudgeBackend> live_judge(bool replay_only, bool synthetic) {
    if (replay_only) return nullptr;
    if (synthetic) return synthetic_judge();
    if (auto cfg = HttpJudgeConfig::from_env()) return std::make_shared<HttpJudge>(*cfg);
    spdlog::warn("LANSE_LMM_URL unset: judge requests must be served from the transcript");
    return nullptr;
}

ModalityEncoders load_encoders(const std::string& image_dir, const std::string& text_dir,
                               std::optional<ModalityEncoder>& ie, std::optional<ModalityEncoder>& te) {
    if (!image_dir.empty()) ie = load_modality_encoder(image_dir);
    if (!text_dir.empty()) te = load_modality_encoder(text_dir);
    return {ie ? &*ie : nullptr, te ? &*te : nullptr};
}

volatile std::sig_atomic_t g_stop = 0;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse, interpretable neuron evaluator for image-caption corpora"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Validate embedding records into a corpus file");
    std::string in_path, in_format = "jsonl", out_path;
    std::uint32_t d_img = 0, d_txt = 0;
    bool normalize = false;
    ingest->add_option("--input", in_path, "Record file")->required();
    ingest->add_option("--format", in_format, "jsonl or bin")->check(CLI::IsMember({"jsonl", "bin"}));
    ingest->add_option("--out", out_path, "Corpus output path")->required();
    ingest->add_option("--d-img", d_img, "Image embedding width (default: first record)");
    ingest->add_option("--d-txt", d_txt, "Text embedding width (default: first record)");
    ingest->add_flag("--normalize", normalize, "L2-normalize each half");

    // train-sae
    auto* train = app.add_subcommand("train-sae", "Train the SAE ensemble, one member per shard");
    std::string corpus_path, out_dir;
    std::size_t shards = 4;
    std::uint64_t shard_seed = 0;
    TrainConfig tc;
    train->add_option("--corpus", corpus_path)->required();
    train->add_option("--shards", shards)->check(CLI::PositiveNumber);
    train->add_option("--latent", tc.latent_dim)->capture_default_str();
    train->add_option("--k", tc.k)->capture_default_str();
    train->add_option("--epochs", tc.epochs)->capture_default_str();
    train->add_option("--batch", tc.batch_size)->capture_default_str();
    train->add_option("--lr", tc.step_size)->capture_default_str();
    train->add_option("--seed", tc.seed)->capture_default_str();
    train->add_option("--shard-seed", shard_seed);
    train->add_option("--out", out_dir, "Directory for sae-<i>.bin checkpoints")->required();

    // curate
    auto* cur = app.add_subcommand("curate", "Explain, categorize and filter candidate neurons");
    std::string ensemble_dir, transcript_path = "transcript.jsonl", physics_path, human_path, verdicts_out;
    CurationConfig cc;
    bool replay_only = false;
    cur->add_option("--ensemble", ensemble_dir)->required()->check(CLI::ExistingDirectory);
    cur->add_option("--corpus", corpus_path)->required();
    cur->add_option("--m", cc.summary_samples, "Samples shown for summarization")->capture_default_str();
    cur->add_option("--accuracy-samples", cc.accuracy_samples)->capture_default_str();
    cur->add_option("--threshold", cc.filter.threshold, "Keep accuracy strictly above this")->capture_default_str();
    cur->add_option("--transcript", transcript_path)->capture_default_str();
    cur->add_option("--physics", physics_path, "Transcoder candidate list");
    cur->add_option("--human-verdicts", human_path);
    cur->add_option("--verdicts-out", verdicts_out);
    bool use_synthetic = false;
    cur->add_flag("--replay-only", replay_only, "Fail on transcript misses instead of calling the LMM");
    cur->add_flag("--synthetic-judge", use_synthetic, "Answer from synth:// locators instead of an LMM (demo corpora)");
    cur->add_option("--out", out_path)->required();

    // build
    auto* build = app.add_subcommand("build", "Assemble a registry into a model directory");
    std::string registry_path, model_dir;
    build->add_option("--registry", registry_path)->required();
    build->add_option("--out", out_dir)->required();

    // calibrate
    auto* cal = app.add_subcommand("calibrate", "Set per-neuron thresholds from a reference corpus");
    double pct = 99.5;
    cal->add_option("--model", model_dir)->required();
    cal->add_option("--reference", corpus_path)->required();
    cal->add_option("--percentile", pct)->capture_default_str();
    cal->add_option("--out", out_dir, "Output model directory (default: overwrite --model)");

    // distill
    auto* dis = app.add_subcommand("distill", "Fit a single-modality encoder to the joint model");
    std::string modality_name;
    DistillConfig dc;
    std::string init_name = "joint-slice";
    dis->add_option("--model", model_dir)->required();
    dis->add_option("--corpus", corpus_path)->required();
    dis->add_option("--modality", modality_name)->required()->check(CLI::IsMember({"image", "text"}));
    dis->add_option("--epochs", dc.epochs)->capture_default_str();
    dis->add_option("--batch", dc.batch_size)->capture_default_str();
    dis->add_option("--lr", dc.step_size)->capture_default_str();
    dis->add_option("--seed", dc.seed);
    dis->add_option("--init", init_name)->check(CLI::IsMember({"joint-slice", "random"}));
    dis->add_option("--out", out_dir)->required();

    // encode
    auto* enc = app.add_subcommand("encode", "Write per-pair activations");
    std::string image_enc, text_enc;
    enc->add_option("--model", model_dir)->required();
    enc->add_option("--corpus", corpus_path)->required();
    enc->add_option("--modality", modality_name)->required()->check(CLI::IsMember({"joint", "image", "text"}));
    enc->add_option("--image-encoder", image_enc);
    enc->add_option("--text-encoder", text_enc);
    enc->add_option("--out", out_path)->required();

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "Compute the four metrics from activation files");
    std::string acts, image_acts, text_acts, tag = "corpus";
    PairSampler sampler;
    eval->add_option("--model", model_dir, "Model directory (for threshold provenance)");
    eval->add_option("--acts", acts, "Joint activations")->required();
    eval->add_option("--image-acts", image_acts);
    eval->add_option("--text-acts", text_acts);
    eval->add_option("--tag", tag)->capture_default_str();
    eval->add_option("--samples", sampler.samples)->capture_default_str();
    eval->add_option("--exhaustive-limit", sampler.exhaustive_limit)->capture_default_str();
    eval->add_option("--out", out_path)->required();

    // correlate
    auto* corr = app.add_subcommand("correlate", "Cross-model correlation of neuron frequencies");
    std::string acts_dir;
    corr->add_option("--acts-dir", acts_dir, "One joint activation file per model; tag = file stem")
        ->required()
        ->check(CLI::ExistingDirectory);
    corr->add_option("--out", out_path)->required();

    // sweep
    auto* sweep = app.add_subcommand("sweep", "Metrics over a grid of threshold scales");
    std::string grid = "0.5,1,2,4";
    sweep->add_option("--model", model_dir)->required();
    sweep->add_option("--corpus", corpus_path)->required();
    sweep->add_option("--grid", grid, "Ascending, comma separated; 'inf' allowed")->capture_default_str();
    sweep->add_option("--image-encoder", image_enc);
    sweep->add_option("--text-encoder", text_enc);
    sweep->add_option("--tag", tag)->capture_default_str();
    sweep->add_option("--out", out_path)->required();

    // bootstrap
    auto* boot = app.add_subcommand("bootstrap", "Active-learning loop for physics violations");
    boot->require_subcommand(1);
    std::string state_dir, labels_path;
    BootstrapConfig bc;
    bc.probe.hidden = 256;
    auto probe_opts = [&](CLI::App* sub) {
        sub->add_option("--hidden", bc.probe.hidden)->capture_default_str();
        sub->add_option("--epochs", bc.probe.epochs)->capture_default_str();
        sub->add_option("--lr", bc.probe.step_size)->capture_default_str();
        sub->add_option("--seed", bc.probe.seed);
        sub->add_option("--threshold", bc.score_threshold)->capture_default_str();
        sub->add_option("--budget", bc.budget)->capture_default_str();
    };
    auto* b_init = boot->add_subcommand("init", "Train on seed labels and emit the first queue");
    b_init->add_option("--corpus", corpus_path)->required();
    b_init->add_option("--labels", labels_path, "Seed label file")->required();
    b_init->add_option("--out", state_dir)->required();
    probe_opts(b_init);
    auto* b_round = boot->add_subcommand("round", "Apply new labels, retrain and re-flag");
    b_round->add_option("--corpus", corpus_path)->required();
    b_round->add_option("--state", state_dir)->required()->check(CLI::ExistingDirectory);
    b_round->add_option("--labels", labels_path, "New labels (default: labels submitted through serve)");
    probe_opts(b_round);
    auto* b_extract = boot->add_subcommand("extract", "Compose transcoder neurons from the probe");
    TrainConfig tcc{.epochs = 20, .batch_size = 64, .step_size = 1e-3, .seed = 0, .latent_dim = 64, .k = 4};
    b_extract->add_option("--corpus", corpus_path)->required();
    b_extract->add_option("--state", state_dir)->required()->check(CLI::ExistingDirectory);
    b_extract->add_option("--latent", tcc.latent_dim)->capture_default_str();
    b_extract->add_option("--k", tcc.k)->capture_default_str();
    b_extract->add_option("--epochs", tcc.epochs)->capture_default_str();
    b_extract->add_option("--out", out_path)->required();

    // serve
    auto* serve = app.add_subcommand("serve", "Annotation and report HTTP service");
    ServicePaths sp;
    ServiceOptions so;
    std::string config_path;
    serve->add_option("--config", config_path, "Take paths and port from a run config");
    serve->add_option("--corpus", sp.corpus);
    serve->add_option("--registry", sp.registry);
    serve->add_option("--bootstrap", sp.bootstrap_dir);
    serve->add_option("--verdicts", sp.human_verdicts, "Where validation answers are appended");
    serve->add_option("--reports", sp.reports_dir);
    serve->add_option("--host", so.host)->capture_default_str();
    serve->add_option("--port", so.port)->capture_default_str();
    serve->add_option("--lease", so.lease_seconds, "Task lease in seconds")->capture_default_str();

    // run
    auto* run = app.add_subcommand("run", "Run pipeline stages from a declarative config");
    std::string stages_arg;
    run->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
    run->add_option("--stages", stages_arg, "Comma separated subset (default: all)");
    run->add_flag("--replay-only", replay_only);
    run->add_flag("--synthetic-judge", use_synthetic, "Answer from synth:// locators instead of an LMM (demo corpora)");

    // synth
    auto* synth = app.add_subcommand("synth", "Write a synthetic corpus with planted concepts");
    SyntheticConfig sc;
    std::string seeds_out;
    std::size_t seed_pos = 30, seed_neg = 60;
    synth->add_option("--pairs", sc.n_pairs)->capture_default_str();
    synth->add_option("--seed", sc.seed);
    synth->add_option("--out", out_path, "JSONL records")->required();
    synth->add_option("--seed-labels", seeds_out, "Also write bootstrap seed labels here");
    synth->add_option("--seed-positives", seed_pos)->capture_default_str();
    synth->add_option("--seed-negatives", seed_neg)->capture_default_str();

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

    try {
        if (*ingest) {
            auto r = ingest_file(in_path, in_format, d_img, d_txt, {normalize});
            for (const auto& rej : r.rejected)
                std::cerr << "rejected record " << rej.index << " (" << rej.id << "): " << rej.reason << "\n";
            write_corpus(r.corpus, out_path);
            std::cout << r.corpus.size() << " pairs written to " << out_path << ", " << r.rejected.size()
                      << " rejected\n";
        } else if (*train) {
            const auto parts = shard_corpus(read_corpus(corpus_path), shards, shard_seed);
            auto ens = train_ensemble(parts, tc);
            fs::create_directories(out_dir);
            for (std::size_t i = 0; i < ens.members.size(); ++i) {
                if (!ens.members[i]) continue;
                const auto p = (fs::path(out_dir) / ("sae-" + std::to_string(i) + ".bin")).string();
                save_checkpoint(ens.members[i]->params, p);
                std::cout << p << ": loss " << ens.members[i]->loss_trace.front() << " -> "
                          << ens.members[i]->loss_trace.back() << "\n";
            }
            for (const auto& [i, msg] : ens.failures) std::cerr << "member " << i << " failed: " << msg << "\n";
            if (!ens.failures.empty()) return 1;
        } else if (*cur) {
            const auto corpus = read_corpus(corpus_path);
            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(ensemble_dir))
                if (e.path().extension() == ".bin") files.push_back(e.path());
            std::sort(files.begin(), files.end());
            std::vector<SaeParams> ensemble;
            for (const auto& f : files) ensemble.push_back(load_checkpoint(f.string()));
            std::vector<Neuron> physics;
            if (!physics_path.empty()) physics = read_registry(physics_path);
            std::vector<JudgeVerdict> human;
            if (!human_path.empty() && fs::exists(human_path)) human = read_verdicts(human_path);
            TranscriptJudge judge(std::make_shared<Transcript>(transcript_path), live_judge(replay_only, use_synthetic));
            const auto r = curate(pool_neurons(ensemble), physics, corpus, judge, human, cc);
            write_registry(r.registry, out_path);
            if (!verdicts_out.empty()) append_verdicts(r.verdicts, verdicts_out);
            std::map<std::string, int> by_status;
            for (const auto& c : r.candidates) ++by_status[std::string(to_string(c.status))];
            std::cout << r.registry.size() << " neurons kept of " << r.candidates.size() << " candidates";
            for (const auto& [s, n] : by_status) std::cout << ", " << s << " " << n;
            std::cout << " (transcript hits " << judge.hits() << ", misses " << judge.misses() << ")\n";
        } else if (*build) {
            const auto m = assemble(read_registry(registry_path));
            save_model(m, out_dir);
            std::cout << m.total_neurons() << " neurons assembled into " << out_dir << "\n";
        } else if (*cal) {
            auto m = load_model(model_dir);
            calibrate_tau(m, read_corpus(corpus_path), pct);
            save_model(m, out_dir.empty() ? model_dir : out_dir);
            std::cout << "thresholds set at percentile " << pct << "\n";
        } else if (*dis) {
            dc.init = init_name == "random" ? DistillInit::Random : DistillInit::JointSlice;
            const auto modality = modality_name == "image" ? Modality::ImageOnly : Modality::TextOnly;
            const auto r = distill(load_model(model_dir), read_corpus(corpus_path), modality, dc);
            save_modality_encoder(r.encoder, out_dir);
            std::cout << "loss " << r.loss_trace.front() << " -> " << r.loss_trace.back() << "\n";
        } else if (*enc) {
            std::optional<ModalityEncoder> ie, te;
            const auto encs = load_encoders(image_enc, text_enc, ie, te);
            const auto modality = parse_modality(modality_name == "image"  ? "image_only"
                                                 : modality_name == "text" ? "text_only"
                                                                           : "joint");
            const auto recs = encode_corpus(load_model(model_dir), read_corpus(corpus_path), modality, encs);
            write_activations(recs, out_path);
            std::cout << recs.size() << " records written to " << out_path << "\n";
        } else if (*eval) {
            std::string provenance;
            if (!model_dir.empty()) provenance = load_model(model_dir).provenance;
            const auto r = groupwise_report(read_activations(acts),
                                            image_acts.empty() ? std::vector<ActivationRecord>{} : read_activations(image_acts),
                                            text_acts.empty() ? std::vector<ActivationRecord>{} : read_activations(text_acts),
                                            tag, provenance, sampler);
            const auto text = report_to_json(r);
            write_text_file(out_path, text);
            std::cout << text << "\n";
        } else if (*corr) {
            std::map<std::string, std::vector<ActivationRecord>> by_model;
            for (const auto& e : fs::directory_iterator(acts_dir))
                if (e.path().extension() == ".jsonl") by_model[e.path().stem().string()] = read_activations(e.path().string());
            if (by_model.size() < 2) throw Error(ErrorCode::InvalidArgument, "correlate needs at least two activation files");
            json out = json::array();
            for (Category g : kAllGroups) out.push_back(json::parse(correlation_to_json(model_correlation(by_model, g))));
            write_text_file(out_path, out.dump(2));
            std::cout << "correlation over " << by_model.size() << " models written to " << out_path << "\n";
        } else if (*sweep) {
            std::optional<ModalityEncoder> ie, te;
            const auto encs = load_encoders(image_enc, text_enc, ie, te);
            const auto rows = tau_sweep(load_model(model_dir), read_corpus(corpus_path), parse_grid(grid), encs, tag);
            json out = json::array();
            for (const auto& r : rows) out.push_back({{"scale", r.scale}, {"report", json::parse(report_to_json(r.report))}});
            write_text_file(out_path, out.dump(2));
            for (const auto& r : rows)
                std::cout << "scale " << r.scale << ": realism " << r.report.visual_realism.value_or(NAN) << ", physics "
                          << r.report.physical_plausibility.value_or(NAN) << "\n";
        } else if (*boot) {
            const auto corpus = read_corpus(corpus_path);
            if (*b_init) {
                auto state = init_bootstrap(corpus, read_labels(labels_path), bc);
                save_bootstrap_state(state, state_dir);
                std::cout << "round 0: " << state.queue.size() << " pairs flagged\n";
            } else if (*b_round) {
                auto state = load_bootstrap_state(state_dir);
                const bool from_service = labels_path.empty();
                const auto src = from_service ? pending_labels_path(state_dir) : labels_path;
                std::vector<LabelRecord> fresh;
                if (fs::exists(src)) fresh = read_labels(src);
                for (auto& l : fresh) l.round = state.round + 1;
                run_round(state, corpus, fresh, bc);
                save_bootstrap_state(state, state_dir);
                if (from_service) fs::remove(src);
                std::cout << "round " << state.round << ": " << fresh.size() << " labels applied, " << state.queue.size()
                          << " pairs flagged\n";
            } else if (*b_extract) {
                const auto state = load_bootstrap_state(state_dir);
                const auto r = extract_transcoder_neurons(state.probe, corpus, tcc);
                write_registry(r.candidates, out_path);
                std::cout << r.candidates.size() << " physics candidates written to " << out_path << "\n";
            }
        } else if (*serve) {
            if (!config_path.empty()) {
                auto c = RunConfig::load(config_path);
                c.apply_env();
                if (sp.corpus.empty()) sp.corpus = c.path("corpus.bin");
                if (sp.registry.empty() && fs::exists(c.path("registry.json"))) sp.registry = c.path("registry.json");
                if (sp.bootstrap_dir.empty() && fs::exists(c.path("bootstrap"))) sp.bootstrap_dir = c.path("bootstrap");
                if (sp.human_verdicts.empty())
                    sp.human_verdicts = c.path(c.human_verdicts.empty() ? "human-verdicts.jsonl" : c.human_verdicts);
                if (sp.reports_dir.empty()) sp.reports_dir = c.data_dir;
                if (serve->count("--port") == 0) so.port = c.port;
            } else if (auto d = data_dir_env(); d && sp.corpus.empty()) {
                sp.corpus = (fs::path(*d) / "corpus.bin").string();
            }
            if (sp.corpus.empty()) throw Error(ErrorCode::InvalidArgument, "serve needs --corpus or --config");
            AnnotationService svc(sp, so);
            const int port = svc.start();
            std::cout << "serving on http://" << so.host << ":" << port << "\n" << std::flush;
            std::signal(SIGINT, [](int) { g_stop = 1; });
            std::signal(SIGTERM, [](int) { g_stop = 1; });
            while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(200));
            svc.stop();
        } else if (*run) {
            auto c = RunConfig::load(config_path);
            c.apply_env();
            if (replay_only) c.replay_only = true;
            std::vector<Stage> stages;
            if (stages_arg.empty()) stages = all_stages();
            else
                for (const auto& s : split(stages_arg, ',')) stages.push_back(parse_stage(s));
            const auto r = run_pipeline(c, stages, use_synthetic && !c.replay_only ? synthetic_judge() : nullptr);
            for (const auto& s : r.stages) std::cout << to_string(s.stage) << (s.skipped ? ": skipped\n" : ": done\n");
            if (r.report) std::cout << report_to_json(*r.report) << "\n";
        } else if (*synth) {
            const auto s = make_synthetic_corpus(sc);
            write_corpus_jsonl(s.corpus, out_path);
            if (!seeds_out.empty()) {
                std::vector<LabelRecord> seeds;
                std::size_t pos = 0, neg = 0;
                for (const auto& p : s.corpus.pairs()) {
                    const bool v = s.violations.count(p.id) > 0;
                    if (v && pos < seed_pos) seeds.push_back({p.id, Label::Violation, Labeler::Seed, 0}), ++pos;
                    else if (!v && neg < seed_neg) seeds.push_back({p.id, Label::Clean, Labeler::Seed, 0}), ++neg;
                }
                fs::remove(seeds_out);
                append_labels(seeds, seeds_out);
            }
            std::cout << s.corpus.size() << " pairs (" << s.violations.size() << " planted violations) written to "
                      << out_path << "\n";
        }
    } catch (const Error& e) {
        std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
