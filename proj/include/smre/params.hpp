#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "smre/tensor.hpp"

namespace smre {

/// Named parameter collection. Order is fixed by insertion and drives
/// checkpoint layout, optimizer state alignment, and seeded initialization.
template <typename S>
class ModelParams {
public:
    Tensor<S>& add(const std::string& name, Tensor<S> t) {
        if (has(name)) throw ContractError("duplicate parameter name " + name);
        t.set_requires_grad(true);
        items_.emplace_back(name, std::move(t));
        return items_.back().second;
    }

    bool has(const std::string& name) const {
        for (const auto& [n, t] : items_)
            if (n == name) return true;
        return false;
    }

    Tensor<S>& at(const std::string& name) {
        for (auto& [n, t] : items_)
            if (n == name) return t;
        throw ContractError("unknown parameter " + name);
    }

    const Tensor<S>& at(const std::string& name) const {
        for (const auto& [n, t] : items_)
            if (n == name) return t;
        throw ContractError("unknown parameter " + name);
    }

    std::vector<std::pair<std::string, Tensor<S>>>& items() { return items_; }
    const std::vector<std::pair<std::string, Tensor<S>>>& items() const { return items_; }
    std::size_t count() const { return items_.size(); }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& [name, t] : items_) n += t.size();
        return n;
    }

    void zero_grad() {
        for (auto& [name, t] : items_) t.zero_grad();
    }

    /// Deep copy in a possibly different precision.
    template <typename T>
    ModelParams<T> cast() const {
        ModelParams<T> out;
        for (const auto& [name, t] : items_) {
            std::vector<T> data(t.size());
            for (std::size_t i = 0; i < t.size(); ++i) data[i] = static_cast<T>(t.data()[i]);
            out.add(name, Tensor<T>::from(t.shape(), std::move(data)));
        }
        return out;
    }

    ModelParams clone() const { return cast<S>(); }

private:
    std::vector<std::pair<std::string, Tensor<S>>> items_;
};

/// Uniform fill in [-bound, bound] from the given engine.
/// FNV-1a over the raw value bytes of every parameter in order; used to
/// prove that runs share identical starting points.
template <typename S>
std::uint64_t params_hash(const ModelParams<S>& params) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](const unsigned char* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& [name, t] : params.items()) {
        mix(reinterpret_cast<const unsigned char*>(name.data()), name.size());
        mix(reinterpret_cast<const unsigned char*>(t.data()), t.size() * sizeof(S));
    }
    return h;
}

template <typename S>
void init_uniform(Tensor<S>& t, std::mt19937& rng, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < t.size(); ++i) t.mutable_data()[i] = static_cast<S>(dist(rng));
}

}  // namespace smre
