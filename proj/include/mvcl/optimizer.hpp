#pragma once

// AdamW with decoupled weight decay over the named parameter registry.

#include <cstdint>
#include <map>
#include <string>

#include "mvcl/encoders.hpp"

namespace mvcl {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.2;
};

class AdamW {
  public:
    struct Slot {
        Tensor m, v;
    };

    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    // Applies one update using each parameter's accumulated gradient.
    // Parameters whose gradient was never populated are treated as
    // zero-gradient (decay still applies).
    void step(Params& params);

    const AdamWConfig& config() const { return cfg_; }
    std::int64_t steps_taken() const { return t_; }

    std::map<std::string, Slot>& state() { return state_; }
    const std::map<std::string, Slot>& state() const { return state_; }
    void restore(std::map<std::string, Slot> state, std::int64_t t) {
        state_ = std::move(state);
        t_ = t;
    }

  private:
    AdamWConfig cfg_;
    std::map<std::string, Slot> state_;
    std::int64_t t_ = 0;
};

}  // namespace mvcl
