#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "smoe/numkernel/tensor.hpp"

namespace smoe {

/// Named trainable tensors with matching gradient buffers.
///
/// Entries are kept in name order so iteration, serialization and gradient
/// reduction are deterministic.
class ParamSet {
public:
    struct Entry {
        Tensor value;
        Tensor grad;
        bool trainable = true;
    };

    void add(const std::string& name, Tensor init, bool trainable = true) {
        if (entries_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
        Tensor grad(init.shape());
        entries_.emplace(name, Entry{std::move(init), std::move(grad), trainable});
    }

    bool contains(std::string_view name) const { return entries_.find(std::string(name)) != entries_.end(); }

    Tensor& value(std::string_view name) { return entry(name).value; }
    const Tensor& value(std::string_view name) const { return entry(name).value; }
    Tensor& grad(std::string_view name) { return entry(name).grad; }
    const Tensor& grad(std::string_view name) const { return entry(name).grad; }

    bool trainable(std::string_view name) const { return entry(name).trainable; }
    void set_trainable(std::string_view name, bool on) { entry(name).trainable = on; }

    /// Overwrites a parameter value; the shape must not change.
    void assign(std::string_view name, Tensor v) {
        Entry& e = entry(name);
        e.value.require_same_shape(v, "ParamSet::assign");
        e.value = std::move(v);
    }

    void zero_grad() {
        for (auto& [_, e] : entries_) e.grad.fill(0.0);
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& [n, _] : entries_) out.push_back(n);
        return out;
    }

    std::size_t size() const noexcept { return entries_.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [_, e] : entries_) n += e.value.size();
        return n;
    }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    /// Values and trainable flags equal; gradients ignored.
    bool same_values(const ParamSet& other) const {
        if (entries_.size() != other.entries_.size()) return false;
        auto it = other.entries_.begin();
        for (const auto& [n, e] : entries_) {
            if (n != it->first || !(e.value == it->second.value) || e.trainable != it->second.trainable)
                return false;
            ++it;
        }
        return true;
    }

private:
    Entry& entry(std::string_view name) {
        auto it = entries_.find(std::string(name));
        if (it == entries_.end()) throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
        return it->second;
    }
    const Entry& entry(std::string_view name) const {
        auto it = entries_.find(std::string(name));
        if (it == entries_.end()) throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
        return it->second;
    }

    std::map<std::string, Entry, std::less<>> entries_;
};

}  // namespace smoe
