#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "wgpt/tensor.hpp"

namespace wgpt {

// A named parameter with its paired gradient accumulator.
struct Parameter {
    Tensor value;
    Tensor grad;

    explicit Parameter(Tensor v) : value(std::move(v)), grad(Tensor::zeros(value.shape())) {}
    Parameter() = default;
};

// Ordered (lexicographic) map of named parameters. Single-writer: the
// optimizer owns mutation, forward passes only read values and accumulate
// gradients.
class ParameterSet {
public:
    Parameter& add(const std::string& name, Tensor value) {
        auto [it, inserted] = params_.emplace(name, Parameter(std::move(value)));
        if (!inserted) fail_contract("ParameterSet: duplicate parameter name '", name, "'");
        return it->second;
    }

    Parameter& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) fail_contract("ParameterSet: unknown parameter '", name, "'");
        return it->second;
    }

    const Parameter& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) fail_contract("ParameterSet: unknown parameter '", name, "'");
        return it->second;
    }

    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    void zero_grads() {
        for (auto& [name, p] : params_) p.grad.fill(0.0);
    }

    std::int64_t count() const {
        std::int64_t n = 0;
        for (const auto& [name, p] : params_) n += p.value.numel();
        return n;
    }

    double grad_norm() const {
        double s = 0.0;
        for (const auto& [name, p] : params_)
            for (std::int64_t i = 0; i < p.grad.numel(); ++i) s += p.grad[i] * p.grad[i];
        return std::sqrt(s);
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    std::size_t size() const { return params_.size(); }

private:
    std::map<std::string, Parameter> params_;
};

// Adam moments, one pair per parameter, plus the shared step counter.
struct AdamState {
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    std::uint64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void init_for(const ParameterSet& params) {
        for (const auto& [name, p] : params) {
            m.emplace(name, Tensor::zeros(p.value.shape()));
            v.emplace(name, Tensor::zeros(p.value.shape()));
        }
    }

    bool empty() const { return m.empty() && v.empty(); }
};

// Scales gradients so their global L2 norm is at most max_norm. No-op when
// max_norm <= 0.
inline void clip_grad_norm(ParameterSet& params, double max_norm) {
    if (max_norm <= 0.0) return;
    const double norm = params.grad_norm();
    if (norm <= max_norm || norm == 0.0) return;
    const double s = max_norm / norm;
    for (auto& [name, p] : params)
        for (std::int64_t i = 0; i < p.grad.numel(); ++i) p.grad[i] *= s;
}

// Standard Adam with bias correction. Increments the step counter, updates
// parameters in place, then zeroes the gradients. weight_decay, when positive,
// is applied decoupled from the moment estimates.
inline void adam_step(ParameterSet& params, AdamState& state, double lr, double weight_decay = 0.0) {
    if (state.empty()) state.init_for(params);
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (auto& [name, p] : params) {
        auto mi = state.m.find(name);
        auto vi = state.v.find(name);
        if (mi == state.m.end() || vi == state.v.end())
            fail_contract("adam_step: optimizer state is missing moment tensors for '", name, "'");
        Tensor& m = mi->second;
        Tensor& v = vi->second;
        if (!m.same_shape(p.value) || !v.same_shape(p.value))
            fail_contract("adam_step: moment shape mismatch for '", name, "'");
        const std::int64_t n = p.value.numel();
        for (std::int64_t i = 0; i < n; ++i) {
            const double g = p.grad[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.value[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
            if (weight_decay > 0.0) p.value[i] -= lr * weight_decay * p.value[i];
        }
        p.grad.fill(0.0);
    }
}

} // namespace wgpt
