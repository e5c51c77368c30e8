#include "lanse/service.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include "lanse/bootstrap.hpp"
#include "lanse/common.hpp"
#include "lanse/embedding_store.hpp"
#include "lanse/neuron_curation.hpp"

// After Eigen: resolv.h (pulled in by httplib) defines a macro named _res.
#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace lanse {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

std::string pending_labels_path(const std::string& bootstrap_dir) {
    return (fs::path(bootstrap_dir) / "pending.jsonl").string();
}

namespace {

constexpr const char* kBootstrap = "bootstrap";
constexpr const char* kValidation = "neuron-validation";

struct Task {
    std::string id;
    std::string kind;
    std::string pair_id;
    std::string uri;
    std::string caption;
    std::string neuron_id;
    std::string explanation;
    int round = 0;
    bool answered = false;
    Clock::time_point lease_until{};
};

std::string_view origin_name(OriginKind k) { return k == OriginKind::Sae ? "sae" : "transcoder"; }

json neuron_json(const Neuron& n) {
    return {{"id", n.id},
            {"category", to_string(n.category)},
            {"explanation", n.explanation},
            {"accuracy", n.accuracy ? json(*n.accuracy) : json(nullptr)},
            {"origin", {{"kind", origin_name(n.origin.kind)}, {"sae", n.origin.sae}, {"row", n.origin.row}}}};
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    res.status = status;
    res.set_content(json{{"error", message}}.dump(), "application/json");
}

}  // namespace

struct AnnotationService::Impl {
    ServicePaths paths;
    ServiceOptions options;
    httplib::Server server;
    std::thread thread;

    mutable std::mutex mutex;
    std::vector<Task> tasks;
    std::map<std::string, std::size_t> task_index;
    std::map<std::string, Neuron> neurons;
    int round = 0;
    std::size_t labeled_pairs = 0;
    std::size_t accepted_labels = 0;
    std::map<std::string, std::size_t> per_annotator;

    Impl(ServicePaths p, ServiceOptions o) : paths(std::move(p)), options(std::move(o)) {
        load();
        routes();
    }

    void add_task(Task t) {
        if (task_index.count(t.id)) return;
        task_index[t.id] = tasks.size();
        tasks.push_back(std::move(t));
    }

    void load() {
        const auto corpus = read_corpus(paths.corpus);
        if (!paths.bootstrap_dir.empty() && fs::exists(fs::path(paths.bootstrap_dir) / "state.json")) {
            const auto state = load_bootstrap_state(paths.bootstrap_dir);
            round = state.round;
            labeled_pairs = state.pool.pairs();
            std::set<std::string> pending;
            if (fs::exists(pending_labels_path(paths.bootstrap_dir)))
                for (const auto& l : read_labels(pending_labels_path(paths.bootstrap_dir)))
                    if (l.round == round + 1) pending.insert(l.pair_id);
            for (const auto& f : state.queue) {
                const auto idx = corpus.find(f.pair_id);
                if (!idx) continue;
                Task t;
                t.id = "b" + std::to_string(round + 1) + "-" + f.pair_id;
                t.kind = kBootstrap;
                t.pair_id = f.pair_id;
                t.uri = corpus[*idx].uri;
                t.caption = corpus[*idx].caption;
                t.round = round + 1;
                t.answered = pending.count(f.pair_id) > 0;
                add_task(std::move(t));
            }
        }
        if (!paths.registry.empty() && fs::exists(paths.registry)) {
            std::set<std::pair<std::string, std::string>> done;
            if (!paths.human_verdicts.empty() && fs::exists(paths.human_verdicts))
                for (const auto& v : read_verdicts(paths.human_verdicts)) done.insert({v.neuron_id, v.pair_id});
            const Mat joint = joint_matrix(corpus);
            for (const auto& n : read_registry(paths.registry)) {
                neurons[n.id] = n;
                const auto sub = top_activating_subpopulation(n, corpus, joint, options.validation_samples);
                for (const auto& m : sub.members) {
                    const auto& pair = corpus[*corpus.find(m.pair_id)];
                    Task t;
                    t.id = "v-" + n.id + "-" + m.pair_id;
                    t.kind = kValidation;
                    t.pair_id = m.pair_id;
                    t.uri = pair.uri;
                    t.caption = pair.caption;
                    t.neuron_id = n.id;
                    t.explanation = n.explanation;
                    t.round = round;
                    t.answered = done.count({n.id, m.pair_id}) > 0;
                    add_task(std::move(t));
                }
            }
        }
        spdlog::info("annotation service: {} tasks loaded", tasks.size());
    }

    json task_json(const Task& t) const {
        json j = {{"task_id", t.id}, {"kind", t.kind}, {"image_uri", t.uri}, {"caption", t.caption}, {"round", t.round}};
        if (t.kind == kValidation) j["explanation"] = t.explanation;
        return j;
    }

    void routes() {
        server.Get("/api/tasks", [this](const httplib::Request& req, httplib::Response& res) {
            const auto kind = req.has_param("kind") ? req.get_param_value("kind") : std::string(kBootstrap);
            if (kind != kBootstrap && kind != kValidation)
                return send_error(res, 400, "kind must be bootstrap or neuron-validation");
            std::size_t limit = 20;
            if (req.has_param("limit")) {
                try {
                    limit = std::stoul(req.get_param_value("limit"));
                } catch (const std::exception&) {
                    return send_error(res, 400, "limit must be a non-negative integer");
                }
            }
            json out = json::array();
            const auto now = Clock::now();
            const auto lease = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(options.lease_seconds));
            std::lock_guard lock(mutex);
            for (auto& t : tasks) {
                if (out.size() >= limit) break;
                if (t.kind != kind || t.answered || t.lease_until > now) continue;
                t.lease_until = now + lease;
                out.push_back(task_json(t));
            }
            res.set_content(out.dump(), "application/json");
        });

        server.Post("/api/labels", [this](const httplib::Request& req, httplib::Response& res) {
            json body;
            try {
                body = json::parse(req.body);
            } catch (const json::exception&) {
                return send_error(res, 400, "body must be JSON");
            }
            if (!body.is_object() || !body.contains("task_id") || !body.contains("verdict") ||
                !body["task_id"].is_string() || !body["verdict"].is_string())
                return send_error(res, 400, "task_id and verdict are required strings");
            const auto task_id = body["task_id"].get<std::string>();
            const auto verdict = body["verdict"].get<std::string>();
            const auto annotator = body.value("annotator", std::string("anonymous"));

            std::lock_guard lock(mutex);
            auto it = task_index.find(task_id);
            if (it == task_index.end()) return send_error(res, 404, "unknown task " + task_id);
            auto& t = tasks[it->second];
            if (t.answered) return send_error(res, 409, "task " + task_id + " already answered");
            try {
                if (t.kind == kBootstrap) {
                    if (verdict != "violation" && verdict != "clean")
                        return send_error(res, 400, "bootstrap verdict must be violation or clean");
                    append_labels({{t.pair_id, parse_label(verdict), Labeler::Ui, t.round}},
                                  pending_labels_path(paths.bootstrap_dir));
                } else {
                    if (verdict != "yes" && verdict != "no")
                        return send_error(res, 400, "validation verdict must be yes or no");
                    append_verdicts({{t.neuron_id, t.pair_id, verdict == "yes", JudgeKind::Human}}, paths.human_verdicts);
                }
            } catch (const std::exception& e) {
                return send_error(res, 500, e.what());
            }
            t.answered = true;
            ++accepted_labels;
            ++per_annotator[annotator];
            res.status = 204;
        });

        server.Get("/api/rounds/current", [this](const httplib::Request&, httplib::Response& res) {
            std::lock_guard lock(mutex);
            std::size_t queued = 0, answered = 0;
            for (const auto& t : tasks) {
                if (t.kind != kBootstrap) continue;
                ++queued;
                answered += t.answered ? 1 : 0;
            }
            res.set_content(json{{"round", round},
                                 {"next_round", round + 1},
                                 {"queued", queued},
                                 {"answered", answered},
                                 {"remaining", queued - answered},
                                 {"labeled_pairs", labeled_pairs},
                                 {"accepted_labels", accepted_labels},
                                 {"per_annotator", per_annotator}}
                                .dump(),
                            "application/json");
        });

        server.Get("/api/reports", [this](const httplib::Request&, httplib::Response& res) {
            json out = json::array();
            if (!paths.reports_dir.empty() && fs::is_directory(paths.reports_dir)) {
                std::vector<fs::path> files;
                for (const auto& e : fs::directory_iterator(paths.reports_dir))
                    if (e.is_regular_file() && e.path().extension() == ".json" &&
                        e.path().filename().string().rfind("report", 0) == 0)
                        files.push_back(e.path());
                std::sort(files.begin(), files.end());
                for (const auto& f : files) {
                    try {
                        out.push_back({{"name", f.filename().string()}, {"report", json::parse(read_text_file(f.string()))}});
                    } catch (const std::exception& e) {
                        spdlog::warn("skipping unreadable report {}: {}", f.string(), e.what());
                    }
                }
            }
            res.set_content(out.dump(), "application/json");
        });

        server.Get(R"(/api/neurons/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            const auto id = req.matches[1].str();
            std::lock_guard lock(mutex);
            auto it = neurons.find(id);
            if (it == neurons.end()) return send_error(res, 404, "unknown neuron " + id);
            res.set_content(neuron_json(it->second).dump(), "application/json");
        });
    }

    int bind() {
        server.new_task_queue = [n = options.threads] { return new httplib::ThreadPool(static_cast<std::size_t>(n)); };
        // httplib's default adds SO_REUSEPORT, which lets a second service
        // silently share a port already in use.
        server.set_socket_options([](socket_t sock) {
            int yes = 1;
            ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
        });
        int port = options.port;
        if (port == 0) {
            port = server.bind_to_any_port(options.host);
            if (port < 0) throw Error(ErrorCode::Io, "cannot bind " + options.host);
        } else if (!server.bind_to_port(options.host, port)) {
            throw Error(ErrorCode::Io, "cannot bind " + options.host + ":" + std::to_string(port) + " (port in use?)");
        }
        spdlog::info("annotation service listening on {}:{}", options.host, port);
        return port;
    }
};

AnnotationService::AnnotationService(ServicePaths paths, ServiceOptions options)
    : impl_(std::make_unique<Impl>(std::move(paths), std::move(options))) {}

AnnotationService::~AnnotationService() { stop(); }

int AnnotationService::start() {
    const int port = impl_->bind();
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return port;
}

void AnnotationService::serve() {
    impl_->bind();
    impl_->server.listen_after_bind();
}

void AnnotationService::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

std::size_t AnnotationService::pending_tasks(const std::string& kind) const {
    std::lock_guard lock(impl_->mutex);
    std::size_t n = 0;
    for (const auto& t : impl_->tasks) n += (t.kind == kind && !t.answered) ? 1 : 0;
    return n;
}

}  // namespace lanse
