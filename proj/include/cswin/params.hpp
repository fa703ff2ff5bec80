#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cswin/rng.hpp"
#include "cswin/tensor.hpp"

namespace cswin {

// Named, ordered collection of trainable tensors. Iteration order is the
// registration order, which is fixed by model construction, so runs are
// reproducible and checkpoints lay out identically.
template <class T>
class ParamStore {
  public:
    explicit ParamStore(uint64_t seed) : seed_(seed), rng_(seed) {}

    Tensor<T> create(const std::string& name, Shape shape) {
        Tensor<T> t = Tensor<T>::zeros(std::move(shape));
        t.set_requires_grad(true);
        put(name, t);
        return t;
    }

    void put(const std::string& name, Tensor<T> t) {
        if (index_.count(name)) throw value_error("ParamStore: duplicate parameter '" + name + "'");
        index_[name] = names_.size();
        names_.push_back(name);
        tensors_.push_back(std::move(t));
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<T> get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw value_error("ParamStore: unknown parameter '" + name + "'");
        return tensors_[it->second];
    }

    const std::vector<std::string>& names() const { return names_; }
    size_t size() const { return names_.size(); }
    Tensor<T> at(size_t i) const { return tensors_.at(i); }

    void zero_grad() {
        for (auto& t : tensors_) {
            auto& g = t.grad();
            std::fill(g.begin(), g.end(), T(0));
        }
    }

    int64_t parameter_count() const {
        int64_t n = 0;
        for (const auto& t : tensors_) n += t.numel();
        return n;
    }

    uint64_t seed() const { return seed_; }
    Rng& rng() { return rng_; }

  private:
    uint64_t seed_;
    Rng rng_;
    std::vector<std::string> names_;
    std::vector<Tensor<T>> tensors_;
    std::unordered_map<std::string, size_t> index_;
};

// ---- initializers ----------------------------------------------------------

template <class T>
void fill_normal(Tensor<T>& t, Rng& rng, double stddev, double mean = 0.0) {
    for (auto& v : t.data()) v = static_cast<T>(rng.normal(mean, stddev));
}

// Normal(0, std) resampled into [-2std, 2std].
template <class T>
void fill_trunc_normal(Tensor<T>& t, Rng& rng, double stddev) {
    for (auto& v : t.data()) {
        double x = rng.normal() * stddev;
        while (std::fabs(x) > 2.0 * stddev) x = rng.normal() * stddev;
        v = static_cast<T>(x);
    }
}

template <class T>
void fill_constant(Tensor<T>& t, T value) {
    std::fill(t.data().begin(), t.data().end(), value);
}

// He initialization for conv kernels; fan_in = Ci * prod(kernel extents).
template <class T>
void fill_kaiming(Tensor<T>& t, Rng& rng, int64_t fan_in) {
    double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    fill_normal(t, rng, stddev);
}

}  // namespace cswin
