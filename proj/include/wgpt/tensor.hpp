#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "wgpt/common.hpp"

namespace wgpt {

// Dense row-major tensor of doubles. Treated as an immutable value once an op
// has produced it; mutation is reserved for construction and optimizer-owned
// parameter storage.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::int64_t> shape)
        : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

    Tensor(std::vector<std::int64_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<std::int64_t>(data_.size()) != checked_numel(shape_))
            fail_contract("Tensor: data length ", data_.size(), " does not match shape ", shape_str(shape_));
    }

    static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<std::int64_t> shape, double v) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    std::int64_t ndim() const { return static_cast<std::int64_t>(shape_.size()); }

    // 2-D accessors; most of the model works in [rows x cols].
    std::int64_t rows() const { return ndim() == 2 ? shape_[0] : (ndim() == 1 ? 1 : bad_2d()); }
    std::int64_t cols() const { return ndim() == 2 ? shape_[1] : (ndim() == 1 ? shape_[0] : bad_2d()); }

    double& at(std::int64_t r, std::int64_t c) { return data_[static_cast<std::size_t>(r * cols() + c)]; }
    double at(std::int64_t r, std::int64_t c) const { return data_[static_cast<std::size_t>(r * cols() + c)]; }
    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double item() const {
        if (numel() != 1) fail_contract("Tensor::item: tensor has ", numel(), " elements");
        return data_[0];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(double v) {
        for (auto& x : data_) x = v;
    }

    std::string shape_str() const { return shape_str(shape_); }

    static std::string shape_str(const std::vector<std::int64_t>& s) {
        std::string out = "[";
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) out += ",";
            out += std::to_string(s[i]);
        }
        return out + "]";
    }

private:
    static std::int64_t checked_numel(const std::vector<std::int64_t>& shape) {
        std::int64_t n = 1;
        for (auto d : shape) {
            if (d <= 0) fail_contract("Tensor: non-positive dimension in shape ", shape_str(shape));
            n *= d;
        }
        return n;
    }

    [[noreturn]] std::int64_t bad_2d() const {
        fail_contract("Tensor: expected a 1-D or 2-D tensor, got shape ", shape_str(shape_));
    }

    std::vector<std::int64_t> shape_;
    std::vector<double> data_;
};

} // namespace wgpt
