#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

namespace lanse {

struct AdamConfig {
    double step_size = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam with one moment pair per registered parameter block.
class Adam {
public:
    explicit Adam(AdamConfig config = {}) : config_(config) {}

    /// Apply one update to `param` given `grad`. Blocks are identified by call
    /// order within a step; call begin_step() once before each sweep.
    template <typename Param, typename Grad>
    void update(Param& param, const Grad& grad) {
        if (slot_ == moments_.size()) {
            moments_.push_back({Eigen::ArrayXd::Zero(param.size()), Eigen::ArrayXd::Zero(param.size())});
        }
        auto& [m, v] = moments_[slot_++];
        Eigen::Map<Eigen::ArrayXd> p(param.data(), param.size());
        Eigen::Map<const Eigen::ArrayXd> g(grad.data(), grad.size());
        m = config_.beta1 * m + (1.0 - config_.beta1) * g;
        v = config_.beta2 * v + (1.0 - config_.beta2) * g.square();
        const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
        p -= config_.step_size * (m / c1) / ((v / c2).sqrt() + config_.epsilon);
    }

    void begin_step() {
        ++t_;
        slot_ = 0;
    }

private:
    struct Moments {
        Eigen::ArrayXd m;
        Eigen::ArrayXd v;
    };
    AdamConfig config_;
    std::vector<Moments> moments_;
    std::size_t slot_ = 0;
    long t_ = 0;
};

}  // namespace lanse
