#pragma once

#include <memory>
#include <string>

namespace lanse {

struct ServicePaths {
    std::string corpus;
    std::string registry;       // optional: neuron-validation tasks and /api/neurons
    std::string bootstrap_dir;  // optional: bootstrap tasks and round status
    std::string human_verdicts; // validation answers are appended here
    std::string reports_dir;    // *.json reports listed by /api/reports
};

struct ServiceOptions {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    double lease_seconds = 120.0;
    std::size_t validation_samples = 25;
    int threads = 8;
};

/// HTTP annotation service:
///   GET  /api/tasks?kind=bootstrap|neuron-validation&limit=N
///   POST /api/labels {task_id, verdict, annotator}  -> 204 | 400 | 404 | 409
///   GET  /api/rounds/current
///   GET  /api/reports
///   GET  /api/neurons/{id}
/// Bootstrap verdicts go to <bootstrap_dir>/pending.jsonl for the next round.
/// Each accepted label is appended exactly once before the 204 is sent.
class AnnotationService {
public:
    AnnotationService(ServicePaths paths, ServiceOptions options);
    ~AnnotationService();
    AnnotationService(const AnnotationService&) = delete;
    AnnotationService& operator=(const AnnotationService&) = delete;

    /// Binds and serves on a background thread; returns the bound port.
    /// Throws ErrorCode::Io when the port cannot be bound.
    int start();
    /// Binds and serves on the calling thread until stop().
    void serve();
    void stop();

    std::size_t pending_tasks(const std::string& kind) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Pending bootstrap labels written by the service.
std::string pending_labels_path(const std::string& bootstrap_dir);

}  // namespace lanse
