#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dasd/tensor.hpp"

namespace dasd {

// Named map of parameter tensors with per-entry frozen status. Frozen
// entries expose requires_grad=false tensors; updates to them are a hard
// failure. Updates are functional: the stored tensor is replaced, old
// graph nodes keep the values they were built with.
class ParamStore {
public:
    struct Entry {
        Tensor tensor;
        bool frozen = false;
    };

    void insert(const std::string& name, Tensor tensor, bool frozen = false);

    bool contains(const std::string& name) const { return entries_.count(name) > 0; }

    // Live handle: participates in autodiff unless frozen.
    Tensor param(const std::string& name) const;

    // Detached handle: same values, never receives gradients.
    Tensor constant(const std::string& name) const;

    bool is_frozen(const std::string& name) const;
    void set_frozen(const std::string& name, bool frozen);
    void freeze_prefix(const std::string& prefix);
    bool all_frozen_with_prefix(const std::string& prefix) const;

    // Replaces the value, keeping name/frozen status. Raises FrozenWrite
    // for frozen entries unless explicitly forced (checkpoint load path).
    void set_data(const std::string& name, std::vector<double> data, bool force = false);

    void erase_prefix(const std::string& prefix);

    std::vector<std::string> names() const;
    std::vector<std::string> names_with_prefix(const std::string& prefix) const;

    std::size_t size() const { return entries_.size(); }
    const std::map<std::string, Entry>& entries() const { return entries_; }

    std::size_t total_elements() const;
    std::size_t trainable_elements() const;
    std::size_t frozen_elements() const;

    // Raw bytes of every tensor whose name starts with prefix, in name
    // order; used for the frozen-immutability byte comparisons.
    std::vector<unsigned char> snapshot_bytes(const std::string& prefix) const;

private:
    const Entry& at(const std::string& name) const;
    std::map<std::string, Entry> entries_;
};

// Adam with bias correction. One state instance per optimizer (model and
// discriminator run separate instances); t advances once per update call.
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t t = 0;
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
};

// Applies one Adam step for every gradient in the map. Gradients for
// frozen parameters raise FrozenWrite before anything is touched.
void adam_update(ParamStore& params, const GradMap& grads, AdamState& state, double lr);

// Linear warm-up over the first `warmup_fraction` of total steps, then
// constant. step is zero-based.
double warmup_lr(double base_lr, std::uint64_t step, std::uint64_t total_steps,
                 double warmup_fraction);

}  // namespace dasd
