// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "lanse/bootstrap.hpp"
#include "lanse/embedding_store.hpp"
#include "lanse/judge.hpp"
#include "lanse/lanse_encoder.hpp"
#include "lanse/metrics.hpp"
#include "lanse/modality_distillation.hpp"
#include "lanse/neuron_curation.hpp"
#include "lanse/pipeline.hpp"
#include "lanse/sparse_autoencoder.hpp"
#include "lanse/synthetic.hpp"
#include "oracles.hpp"

using namespace lanse;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    std::string name;
    double budget_seconds;
    std::function<Outcome()> run;
};

std::string fmt(double v, int precision = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    return buf;
}

lanse::BitRows to_rows(const oracle::BitMatrix& m) {
    lanse::BitRows out;
    for (const auto& r : m) out.emplace_back(r.begin(), r.end());
    return out;
}

// Gradient check over the parameter blocks of one instance; returns the worst relative error.
template <class Block, class Analytic, class Loss>
double fd_error(Block& block, const Analytic& analytic, Loss loss) {
    std::vector<double> x(block.data(), block.data() + block.size());
    auto f = [&](const std::vector<double>& v) {
        auto saved = block;
        std::copy(v.begin(), v.end(), block.data());
        const double l = loss();
        block = saved;
        return l;
    };
    std::vector<double> an(analytic.data(), analytic.data() + analytic.size());
    return oracle::max_relative_error(an, oracle::central_diff(f, x), 1e-6);
}

Corpus gaussian_corpus(std::size_t n, std::uint32_t di, std::uint32_t dt, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> g;
    std::vector<EmbeddingPair> pairs;
    for (std::size_t i = 0; i < n; ++i) {
        EmbeddingPair p;
        p.id = "g" + std::to_string(i);
        for (std::uint32_t k = 0; k < di; ++k) p.image_emb.push_back(g(rng));
        for (std::uint32_t k = 0; k < dt; ++k) p.text_emb.push_back(g(rng));
        pairs.push_back(std::move(p));
    }
    return Corpus(std::move(pairs), di, dt);
}

// Two semantic neurons per group plus one style neuron, reading only one half of the input.
LanseModel half_model(std::size_t di, std::size_t dt, bool image_half, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Neuron> reg;
    int i = 0;
    for (Category c : kSemanticGroups)
        for (int k = 0; k < 2; ++k) {
            Neuron n;
            n.id = "n" + std::to_string(i++);
            n.category = c;
            n.w = Vec::Zero(static_cast<Eigen::Index>(di + dt));
            if (image_half)
                n.w.head(static_cast<Eigen::Index>(di)) = oracle::random_vec(static_cast<Eigen::Index>(di), rng, 0.5);
            else
                n.w.tail(static_cast<Eigen::Index>(dt)) = oracle::random_vec(static_cast<Eigen::Index>(dt), rng, 0.5);
            n.b = 0.2;
            reg.push_back(n);
        }
    Neuron s;
    s.id = "style";
    s.category = Category::Style;
    s.w = Vec::Ones(static_cast<Eigen::Index>(di + dt));
    reg.push_back(s);
    return assemble(reg);
}

// One neuron per planted concept, reading the concept's joint direction.
LanseModel concept_model(const SyntheticCorpus& sc) {
    std::vector<Neuron> reg;
    for (const auto& c : sc.concepts) {
        Neuron n;
        n.id = c.name;
        n.category = c.category;
        n.w.resize(c.image_dir.size() + c.text_dir.size());
        n.w << c.image_dir, c.text_dir;
        n.b = -0.2;
        reg.push_back(n);
    }
    return assemble(reg);
}

// --- 1 ----------------------------------------------------------------------
Outcome sparsity_invariant() {
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<int> dim(1, 64), lat(1, 256);
    int encodes = 0, violations = 0;
    for (int m = 0; m < 100; ++m) {
        const int d = dim(rng), latent = lat(rng);
        const int k = std::uniform_int_distribution<int>(1, latent)(rng);
        SaeParams p = init_sae(static_cast<std::size_t>(d), static_cast<std::size_t>(latent), k, rng());
        p.w_enc = oracle::random_mat(latent, d, rng);
        p.b_enc = oracle::random_vec(latent, rng);
        for (int s = 0; s < 100; ++s) {
            const Vec z = encode(p, oracle::random_vec(d, rng, 2.0));
            ++encodes;
            const auto nnz = (z.array() != 0.0).count();
            if (nnz > k || (z.array() < 0.0).any() || !z.allFinite()) ++violations;
        }
    }
    return {violations == 0, std::to_string(encodes) + " encodes, " + std::to_string(violations) + " violations"};
}

// --- 2 ----------------------------------------------------------------------
Outcome gradient_checks() {
    std::mt19937_64 rng(202);
    double worst_sae = 0, worst_distill = 0, worst_probe = 0;
    const int instances = 12;
    for (int inst = 0; inst < instances; ++inst) {
        {
            const int d = 3 + inst % 6, latent = 8 + inst % 9;
            auto p = init_sae(static_cast<std::size_t>(d), static_cast<std::size_t>(latent), 1 + inst % 4, 300 + inst);
            p.b_enc = oracle::random_vec(latent, rng, 0.1);
            p.b_dec = oracle::random_vec(d, rng, 0.1);
            const Mat batch = oracle::random_mat(5, d, rng);
            const Mat gates = top_k_gates(p, batch);
            SaeGradients g;
            sae_loss_and_grad(p, batch, g);
            auto loss = [&] { return sae_loss(p, batch, &gates); };
            worst_sae = std::max({worst_sae, fd_error(p.w_enc, g.w_enc, loss), fd_error(p.b_enc, g.b_enc, loss),
                                  fd_error(p.w_dec, g.w_dec, loss), fd_error(p.b_dec, g.b_dec, loss)});
        }
        {
            const std::uint32_t di = 3 + static_cast<std::uint32_t>(inst % 5), dt = 2 + static_cast<std::uint32_t>(inst % 3);
            const auto c = gaussian_corpus(6, di, dt, 400 + inst);
            const auto m = half_model(di, dt, inst % 2 == 0, 500 + inst);
            auto enc = init_modality_encoder(m, c, Modality::ImageOnly, DistillInit::Random, inst);
            enc.adapter = oracle::random_mat(di, di, rng, 0.1);
            enc.adapter_bias = oracle::random_vec(di, rng, 0.1);
            enc.head_b = oracle::random_vec(enc.head_b.size(), rng, 0.3);
            const Mat x = image_matrix(c);
            const Mat t = distill_targets(m, c);
            DistillGradients g;
            distill_loss_and_grad(enc, x, t, g);
            auto loss = [&] { return distill_loss(enc, x, t); };
            worst_distill = std::max({worst_distill, fd_error(enc.adapter, g.adapter, loss),
                                      fd_error(enc.adapter_bias, g.adapter_bias, loss),
                                      fd_error(enc.head_w, g.head_w, loss), fd_error(enc.head_b, g.head_b, loss)});
        }
        {
            const int d = 2 + inst % 7;
            const std::size_t h = 4 + static_cast<std::size_t>(inst % 12);
            auto p = init_probe(static_cast<std::size_t>(d), h, 600 + inst);
            p.b1 = oracle::random_vec(static_cast<Eigen::Index>(h), rng, 0.2);
            p.b2 = 0.3;
            const Mat x = oracle::random_mat(9, d, rng);
            Vec y(9);
            for (int i = 0; i < 9; ++i) y[i] = (i + inst) % 3 == 0 ? 1.0 : 0.0;
            ProbeGradients g;
            probe_loss_and_grad(p, x, y, g);
            auto loss = [&] { return probe_loss(p, x, y); };
            Vec b2(1);
            b2[0] = p.b2;
            Vec gb2(1);
            gb2[0] = g.b2;
            auto loss_b2 = [&] {
                const double saved = p.b2;
                p.b2 = b2[0];
                const double l = probe_loss(p, x, y);
                p.b2 = saved;
                return l;
            };
            worst_probe = std::max({worst_probe, fd_error(p.w1, g.w1, loss), fd_error(p.b1, g.b1, loss),
                                    fd_error(p.w2, g.w2, loss), fd_error(b2, gb2, loss_b2)});
        }
    }
    const bool ok = worst_sae < 1e-3 && worst_distill < 1e-3 && worst_probe < 1e-3;
    return {ok, std::to_string(instances) + " instances each; max rel err sae " + fmt(worst_sae) + ", distill " +
                    fmt(worst_distill) + ", probe " + fmt(worst_probe)};
}

// --- 3 ----------------------------------------------------------------------
Outcome dictionary_recovery() {
    const auto dict = make_planted_dictionary(2048, 64, 16, 3, 7);
    TrainConfig cfg{.epochs = 100, .batch_size = 64, .step_size = 2e-3, .seed = 3, .latent_dim = 128, .k = 4};
    const auto r = train_sae(dict.data, cfg);
    const Mat columns = r.params.w_dec.transpose();
    const int matched = oracle::greedy_match(dict.directions, columns, 0.9);
    return {matched >= 13, std::to_string(matched) + "/16 planted directions matched at |cos| >= 0.9, final loss " +
                               fmt(r.loss_trace.back())};
}

// --- 4 ----------------------------------------------------------------------
Outcome metric_oracles() {
    std::mt19937_64 rng(404);
    int mismatches = 0, undefined = 0;
    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 50)(rng);
        const std::size_t d = std::uniform_int_distribution<std::size_t>(1, 32)(rng);
        const double density = std::uniform_real_distribution<double>(0.02, 0.6)(rng);
        const auto v = oracle::random_bits(n, d, density, rng);
        const auto tx = oracle::random_bits(n, d, density, rng);
        const auto vr = to_rows(v), tr = to_rows(tx);

        auto check = [&](double got, double want) {
            const double err = std::abs(got - want);
            worst = std::max(worst, err);
            if (!(err <= 1e-12)) ++mismatches;
        };
        check(prompt_match(vr, tr), oracle::prompt_match(v, tx));
        check(visual_realism(vr), oracle::mean_popcount(v));
        check(physical_plausibility(tr), oracle::mean_popcount(tx));
        const double want = oracle::content_diversity(v);
        if (std::isnan(want)) {
            ++undefined;
            try {
                content_diversity(vr);
                ++mismatches;
            } catch (const Error& e) {
                if (e.code() != ErrorCode::UndefinedMetric) ++mismatches;
            }
        } else {
            check(content_diversity(vr), want);
        }
    }
    return {mismatches == 0, "200 matrices, " + std::to_string(mismatches) + " mismatches, max abs diff " + fmt(worst) +
                                 ", " + std::to_string(undefined) + " undefined diversity cases agreed"};
}

// --- 5 ----------------------------------------------------------------------
Outcome trivial_identities() {
    std::vector<std::string> failed;
    std::mt19937_64 rng(505);
    for (int t = 0; t < 50; ++t) {
        const auto a = to_rows(oracle::random_bits(20, 16, 0.3, rng));
        if (prompt_match(a, a) != 0.0) {
            failed.push_back("prompt_match(a,a)");
            break;
        }
    }
    lanse::BitRows dup(30, lanse::Bits{1, 0, 1, 1, 0, 0, 1});
    if (content_diversity(dup) != 0.0) failed.push_back("duplicated diversity");

    const auto sc = make_synthetic_corpus({.n_pairs = 600, .seed = 5});
    auto model = concept_model(sc);
    calibrate_tau(model, sc.corpus, 50.0);
    const auto inf = scale_tau(model, std::numeric_limits<double>::infinity());
    const auto rep = groupwise_report(encode_corpus(inf, sc.corpus, Modality::Joint), {}, {}, "inf");
    if (rep.visual_realism.value_or(-1) != 0.0 || rep.physical_plausibility.value_or(-1) != 0.0)
        failed.push_back("tau=inf not zero");

    const std::vector<double> grid = {0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 4.0, 8.0, std::numeric_limits<double>::infinity()};
    const auto sweep = tau_sweep(model, sc.corpus, grid);
    for (std::size_t i = 1; i < sweep.size(); ++i) {
        if (*sweep[i].report.visual_realism > *sweep[i - 1].report.visual_realism)
            failed.push_back("realism sweep increases at " + fmt(grid[i]));
        if (*sweep[i].report.physical_plausibility > *sweep[i - 1].report.physical_plausibility)
            failed.push_back("physics sweep increases at " + fmt(grid[i]));
    }
    const bool informative = *sweep.front().report.visual_realism > 0 && *sweep.front().report.physical_plausibility > 0;
    if (!informative) failed.push_back("sweep starts at zero");
    std::string detail = failed.empty() ? "all identities hold; realism " + fmt(*sweep.front().report.visual_realism) +
                                              " -> 0 over " + std::to_string(grid.size()) + " scales"
                                        : failed.front();
    return {failed.empty(), detail};
}

// --- 6 ----------------------------------------------------------------------
std::vector<ActivationRecord> planted_records(const std::vector<int>& counts, int n) {
    std::vector<ActivationRecord> recs(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto& r = recs[static_cast<std::size_t>(i)];
        r.pair_id = "r" + std::to_string(i);
        for (Category c : kAllGroups) r.groups[c] = {};
        auto& g = r.groups[Category::Human];
        g.real = Vec::Zero(static_cast<Eigen::Index>(counts.size()));
        for (std::size_t j = 0; j < counts.size(); ++j) {
            const bool on = i < counts[j];
            g.bits.push_back(on ? 1 : 0);
            g.real[static_cast<Eigen::Index>(j)] = on ? 1.0 : 0.0;
        }
    }
    return recs;
}

Outcome correlation_sanity() {
    const int n = 40;
    const std::vector<std::vector<int>> counts = {
        {1, 5, 9, 12, 20, 33, 40, 2}, {3, 3, 10, 15, 18, 30, 39, 0}, {40, 30, 20, 10, 5, 4, 1, 7}, {2, 8, 8, 8, 16, 24, 32, 6}};
    std::map<std::string, std::vector<ActivationRecord>> by_model;
    for (std::size_t m = 0; m < counts.size(); ++m) by_model["m" + std::to_string(m)] = planted_records(counts[m], n);

    std::vector<std::string> failed;
    double worst = 0.0;
    for (std::size_t m = 0; m < counts.size(); ++m) {
        const Vec f = activation_frequencies(by_model["m" + std::to_string(m)], Category::Human);
        for (std::size_t j = 0; j < counts[m].size(); ++j)
            if (f[static_cast<Eigen::Index>(j)] != static_cast<double>(counts[m][j]) / n) failed.push_back("frequency");
    }
    const auto mat = model_correlation(by_model, Category::Human);
    const std::size_t k = mat.models.size();
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            const auto r = mat.at(i, j);
            if (!r) {
                failed.push_back("missing entry");
                continue;
            }
            if (i == j && std::abs(*r - 1.0) > 1e-12) failed.push_back("diagonal");
            if (mat.at(j, i) != r) failed.push_back("asymmetric");
            std::vector<double> a, b;
            const auto mi = std::stoul(mat.models[i].substr(1)), mj = std::stoul(mat.models[j].substr(1));
            for (std::size_t q = 0; q < counts[mi].size(); ++q) {
                a.push_back(static_cast<double>(counts[mi][q]) / n);
                b.push_back(static_cast<double>(counts[mj][q]) / n);
            }
            const double err = std::abs(*r - oracle::pearson(a, b));
            worst = std::max(worst, err);
            if (err > 1e-10) failed.push_back("pearson");
        }
    const auto self = model_correlation({{"x", by_model["m0"]}, {"y", by_model["m0"]}}, Category::Human);
    if (!self.at(0, 1) || std::abs(*self.at(0, 1) - 1.0) > 1e-12) failed.push_back("self correlation");
    return {failed.empty(), failed.empty() ? "4 models, max |r - oracle| " + fmt(worst) + ", self r = 1" : failed.front()};
}

// --- 7 ----------------------------------------------------------------------
Outcome distill_image_dependent() {
    const std::uint32_t di = 8, dt = 8;
    const auto c = gaussian_corpus(1000, di, dt, 71);
    const auto m = half_model(di, dt, true, 72);
    DistillConfig cfg{.epochs = 300, .batch_size = 64, .step_size = 1e-2, .seed = 1, .init = DistillInit::Random};
    const auto r = distill(m, c, Modality::ImageOnly, cfg);
    const Mat x = image_matrix(c);
    const Mat t = distill_targets(m, c);
    Vec mse = Vec::Zero(t.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        mse += (r.encoder.forward(x.row(i).transpose()) - t.row(i).transpose()).array().square().matrix();
    mse /= static_cast<double>(x.rows());
    return {mse.maxCoeff() < 1e-3, "random init, max per-neuron MSE " + fmt(mse.maxCoeff()) + " over " +
                                       std::to_string(t.cols()) + " neurons"};
}

Outcome distill_text_dependent() {
    const std::uint32_t di = 8, dt = 8;
    const auto c = gaussian_corpus(2000, di, dt, 73);
    const auto m = half_model(di, dt, false, 74);
    DistillConfig cfg{.epochs = 100, .batch_size = 64, .step_size = 1e-2, .seed = 2};
    const auto r = distill(m, c, Modality::ImageOnly, cfg);
    const Mat t = distill_targets(m, c);
    // Image and text halves are independent, so the best image-only predictor is the target mean.
    double floor = 0.0;
    for (Eigen::Index j = 0; j < t.cols(); ++j) floor += (t.col(j).array() - t.col(j).mean()).square().mean();
    const double loss = distill_loss(r.encoder, image_matrix(c), t);
    const double rel = std::abs(loss - floor) / floor;
    return {rel <= 0.10, "image-side loss " + fmt(loss) + " vs variance floor " + fmt(floor) + " (" + fmt(100 * rel, 3) +
                             "% off)"};
}

// --- 8 ----------------------------------------------------------------------
Outcome bootstrap_loop() {
    // Large enough that 150 labels cannot exhaust the violations in the pool.
    const auto sc = make_synthetic_corpus({.n_pairs = 8000, .seed = 8, .violation_fraction = 0.05});
    std::vector<EmbeddingPair> pool_pairs, held_pairs;
    for (std::size_t i = 0; i < sc.corpus.size(); ++i) (i % 4 == 3 ? held_pairs : pool_pairs).push_back(sc.corpus[i]);
    const Corpus pool(pool_pairs, sc.corpus.d_img(), sc.corpus.d_txt());
    const Corpus held(held_pairs, sc.corpus.d_img(), sc.corpus.d_txt());
    const auto truth = [&](const std::string& id) { return sc.violations.count(id) > 0; };

    double base = 0;
    for (const auto& p : pool.pairs()) base += truth(p.id);
    base /= static_cast<double>(pool.size());

    std::vector<LabelRecord> seeds;
    int pos = 0, neg = 0;
    for (const auto& p : pool.pairs()) {
        if (truth(p.id) && pos < 5) seeds.push_back({p.id, Label::Violation, Labeler::Seed, 0}), ++pos;
        else if (!truth(p.id) && neg < 20) seeds.push_back({p.id, Label::Clean, Labeler::Seed, 0}), ++neg;
    }
    BootstrapConfig cfg;
    cfg.probe = {.hidden = 64, .epochs = 200, .batch_size = 32, .step_size = 1e-3, .seed = 0};
    cfg.budget = 50;
    auto state = init_bootstrap(pool, seeds, cfg);

    std::string detail;
    bool ok = true;
    for (int round = 1; round <= 3; ++round) {
        std::vector<LabelRecord> labels;
        int hits = 0;
        for (const auto& f : state.queue) {
            hits += truth(f.pair_id);
            labels.push_back({f.pair_id, truth(f.pair_id) ? Label::Violation : Label::Clean, Labeler::Human, round});
        }
        const double precision = state.queue.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(state.queue.size());
        ok = ok && precision > base;
        detail += "round " + std::to_string(round) + " precision " + fmt(precision, 3) + " (" +
                  std::to_string(state.queue.size()) + " flagged); ";
        run_round(state, pool, labels, cfg);
    }
    std::size_t correct = 0;
    for (const auto& p : held.pairs()) {
        const Vec e = Eigen::Map<const Eigen::VectorXf>(p.image_emb.data(), static_cast<Eigen::Index>(p.image_emb.size()))
                          .cast<double>();
        correct += (probe_score(state.probe, e) > 0.5) == truth(p.id);
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(held.size());
    ok = ok && acc >= 0.95;
    return {ok, detail + "base rate " + fmt(base, 3) + ", held-out accuracy " + fmt(acc, 4)};
}

// --- 9 and 10 ---------------------------------------------------------------
const std::string kWork = oracle::temp_dir("acceptance");

SyntheticCorpus pipeline_corpus() { return make_synthetic_corpus({.n_pairs = 1200, .seed = 21}); }

RunConfig pipeline_config(const std::string& name) {
    RunConfig c;
    c.data_dir = kWork + "/" + name;
    c.input = kWork + "/input.jsonl";
    c.seed_labels = kWork + "/seed-labels.jsonl";
    c.ensemble_size = 4;
    c.sae = {.epochs = 40, .batch_size = 32, .step_size = 5e-3, .seed = 0, .latent_dim = 48, .k = 4};
    c.bootstrap.probe = {.hidden = 32, .epochs = 100, .batch_size = 32, .step_size = 1e-3, .seed = 0};
    c.bootstrap.budget = 50;
    c.transcoder = {.epochs = 20, .batch_size = 32, .step_size = 1e-3, .seed = 0, .latent_dim = 16, .k = 2};
    c.distill.epochs = 30;
    c.sampler.exhaustive_limit = 2000;
    c.model_tag = "synthetic";
    return c;
}

const std::vector<Stage> kCurateStages = {Stage::Ingest, Stage::Train, Stage::Bootstrap, Stage::Curate};

// Records the judge transcript once with the deterministic synthetic judge.
const std::string& transcript_fixture() {
    static const std::string path = [] {
        const auto sc = pipeline_corpus();
        write_corpus_jsonl(sc.corpus, kWork + "/input.jsonl");
        std::vector<LabelRecord> seeds;
        int pos = 0, neg = 0;
        for (const auto& p : sc.corpus.pairs()) {
            const bool v = sc.violations.count(p.id) > 0;
            if (v && pos < 10) seeds.push_back({p.id, Label::Violation, Labeler::Seed, 0}), ++pos;
            else if (!v && neg < 40) seeds.push_back({p.id, Label::Clean, Labeler::Seed, 0}), ++neg;
        }
        append_labels(seeds, kWork + "/seed-labels.jsonl");
        const auto rec = pipeline_config("record");
        run_pipeline(rec, kCurateStages, std::make_shared<SyntheticJudge>(sc.concepts));
        const std::string out = kWork + "/transcript-fixture.jsonl";
        fs::copy_file(rec.path("transcript.jsonl"), out, fs::copy_options::overwrite_existing);
        return out;
    }();
    return path;
}

RunConfig replay_config(const std::string& name) {
    auto c = pipeline_config(name);
    fs::create_directories(c.data_dir);
    fs::copy_file(transcript_fixture(), c.path("transcript.jsonl"), fs::copy_options::overwrite_existing);
    c.replay_only = true;
    return c;
}

// Answers "no" on a fixed set of accuracy samples for one explanation.
class FlippingJudge final : public JudgeBackend {
public:
    FlippingJudge(std::shared_ptr<JudgeBackend> inner, std::string explanation, std::set<std::string> flipped)
        : inner_(std::move(inner)), explanation_(std::move(explanation)), flipped_(std::move(flipped)) {}
    std::string complete(const JudgeRequest& r) override {
        const bool accuracy = r.prompt.find("explanation generally matches") != std::string::npos;
        if (accuracy && r.media.size() == 1 && flipped_.count(r.media[0].pair_id) &&
            r.prompt.find(explanation_) != std::string::npos)
            return "No.";
        return inner_->complete(r);
    }

private:
    std::shared_ptr<JudgeBackend> inner_;
    std::string explanation_;
    std::set<std::string> flipped_;
};

Outcome curation_replay() {
    std::vector<std::string> failed;

    // Full curate stage replayed twice from the recorded transcript.
    const auto a = replay_config("replay-a"), b = replay_config("replay-b");
    run_pipeline(a, kCurateStages);
    run_pipeline(b, kCurateStages);
    const auto reg_a = read_text_file(a.path("registry.json")), reg_b = read_text_file(b.path("registry.json"));
    if (reg_a != reg_b) failed.push_back("registry.json differs");
    if (read_text_file(a.path("registry.json.weights.bin")) != read_text_file(b.path("registry.json.weights.bin")))
        failed.push_back("registry weights differ");
    const auto kept = read_registry(a.path("registry.json")).size();
    if (kept == 0) failed.push_back("empty registry");

    // Strict threshold: one neuron judged at exactly 16/20, another at 17/20.
    const auto sc = pipeline_corpus();
    auto neuron_for = [&](const std::string& name) {
        for (const auto& c : sc.concepts)
            if (c.name == name) {
                Neuron n;
                n.id = "sae0-n" + std::to_string(&c - sc.concepts.data());
                n.w.resize(c.image_dir.size() + c.text_dir.size());
                n.w << c.image_dir, c.text_dir;
                n.b = -0.3;
                return n;
            }
        throw Error(ErrorCode::NotFound, name);
    };
    const Neuron dog = neuron_for("dog"), beach = neuron_for("beach");
    CurationConfig cc;
    cc.accuracy_samples = 20;
    auto top_ids = [&](const Neuron& n, std::size_t count) {
        std::set<std::string> ids;
        const auto sub = top_activating_subpopulation(n, sc.corpus, 20);
        for (std::size_t i = 0; i < count && i < sub.size(); ++i) ids.insert(sub.members[i].pair_id);
        return ids;
    };
    const std::string tpath = kWork + "/threshold-transcript.jsonl";
    fs::remove(tpath);
    {
        auto live = std::make_shared<FlippingJudge>(
            std::make_shared<FlippingJudge>(std::make_shared<SyntheticJudge>(sc.concepts), "dog", top_ids(dog, 4)),
            "beach", top_ids(beach, 3));
        TranscriptJudge recorder(std::make_shared<Transcript>(tpath), live);
        curate({dog, beach}, {}, sc.corpus, recorder, {}, cc);
    }
    std::string reg_bytes[2];
    CurationResult res;
    for (int run = 0; run < 2; ++run) {
        TranscriptJudge replay(std::make_shared<Transcript>(tpath));
        res = curate({dog, beach}, {}, sc.corpus, replay, {}, cc);
        // Same file name in separate directories: the registry names its weight sidecar.
        const auto dir = kWork + "/threshold-" + std::to_string(run);
        fs::create_directories(dir);
        const auto p = dir + "/registry.json";
        write_registry(res.registry, p);
        reg_bytes[run] = read_text_file(p) + read_text_file(p + ".weights.bin");
    }
    if (reg_bytes[0] != reg_bytes[1]) failed.push_back("threshold registry differs");
    const auto acc_dog = measure_accuracy(dog.id, res.verdicts), acc_beach = measure_accuracy(beach.id, res.verdicts);
    if (acc_dog != 0.8) failed.push_back("dog accuracy " + (acc_dog ? fmt(*acc_dog) : std::string("none")) + " != 0.80");
    if (acc_beach != 0.85) failed.push_back("beach accuracy " + (acc_beach ? fmt(*acc_beach) : std::string("none")));
    bool dog_excluded = true, beach_kept = false;
    for (const auto& n : res.registry) {
        if (n.id == dog.id) dog_excluded = false;
        if (n.id == beach.id) beach_kept = true;
    }
    if (!dog_excluded) failed.push_back("neuron at 0.80 kept");
    if (!beach_kept) failed.push_back("neuron at 0.85 dropped");
    return {failed.empty(), failed.empty() ? "two replays byte-identical (" + std::to_string(kept) +
                                                 " neurons); 0.80 excluded, 0.85 kept"
                                           : failed.front()};
}

Outcome pipeline_integration() {
    const auto c = replay_config("full");
    const auto r = run_pipeline(c, all_stages());
    if (!r.report) return {false, "no report"};
    const auto& rep = *r.report;
    const bool finite = rep.prompt_match && std::isfinite(*rep.prompt_match) && rep.visual_realism &&
                        std::isfinite(*rep.visual_realism) && rep.physical_plausibility &&
                        std::isfinite(*rep.physical_plausibility) && rep.content_diversity &&
                        std::isfinite(*rep.content_diversity);
    auto show = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string("absent"); };
    return {finite, std::to_string(r.stages.size()) + " stages, replay only; prompt_match " + show(rep.prompt_match) +
                        ", realism " + show(rep.visual_realism) + ", physics " + show(rep.physical_plausibility) +
                        ", diversity " + show(rep.content_diversity)};
}

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::warn);
    const std::vector<Criterion> criteria = {
        {"sparsity-invariant", 10, sparsity_invariant},
        {"gradient-checks", 30, gradient_checks},
        {"dictionary-recovery", 120, dictionary_recovery},
        {"metric-oracle-equivalence", 10, metric_oracles},
        {"trivial-identities", 60, trivial_identities},
        {"correlation-sanity", 60, correlation_sanity},
        {"distillation-image-dependent", 60, distill_image_dependent},
        {"distillation-text-dependent", 60, distill_text_dependent},
        {"bootstrap-loop", 60, bootstrap_loop},
        {"curation-replay", 300, curation_replay},
        {"pipeline-integration", 300, pipeline_integration},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = secs < c.budget_seconds;
        const bool pass = o.pass && in_time;
        failures += !pass;
        std::printf("%s %s: %s [%.2fs, budget %.0fs%s]\n", pass ? "PASS" : "FAIL", c.name.c_str(), o.detail.c_str(),
                    secs, c.budget_seconds, in_time ? "" : ", over budget");
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    fs::remove_all(kWork);
    return failures == 0 ? 0 : 1;
}
