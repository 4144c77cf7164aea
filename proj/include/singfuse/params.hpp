#pragma once

// Ordered name -> tensor registry shared by encoder, adaptors and
// decoder. Checkpoint serialization walks it in registration order.

#include <string>
#include <utility>
#include <vector>

#include "singfuse/common.hpp"
#include "singfuse/tensor.hpp"

namespace singfuse {

template <class R>
class param_map {
  public:
    tensor<R> & add(const std::string & name, tensor<R> t) {
        items_.emplace_back(name, std::move(t));
        return items_.back().second;
    }

    tensor<R> & get(const std::string & name) {
        for (auto & [n, t] : items_)
            if (n == name) return t;
        throw config_error("param_map: unknown parameter " + name);
    }

    const tensor<R> & get(const std::string & name) const {
        for (const auto & [n, t] : items_)
            if (n == name) return t;
        throw config_error("param_map: unknown parameter " + name);
    }

    bool has(const std::string & name) const {
        for (const auto & [n, t] : items_)
            if (n == name) return true;
        return false;
    }

    std::vector<std::pair<std::string, tensor<R>>> & items() { return items_; }
    const std::vector<std::pair<std::string, tensor<R>>> & items() const { return items_; }

    // merge another map under a name prefix
    void adopt(const std::string & prefix, param_map<R> & other) {
        for (auto & [n, t] : other.items_) items_.emplace_back(prefix + n, t);
    }

    int64_t total_params() const {
        int64_t n = 0;
        for (const auto & [name, t] : items_) n += t.numel();
        return n;
    }

    int64_t trainable_params() const {
        int64_t n = 0;
        for (const auto & [name, t] : items_)
            if (t.requires_grad()) n += t.numel();
        return n;
    }

    void zero_grads() {
        for (auto & [n, t] : items_) t.zero_grad();
    }

  private:
    std::vector<std::pair<std::string, tensor<R>>> items_;
};

} // namespace singfuse
