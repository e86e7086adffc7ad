#include "dasd/param_store.hpp"

#include <cmath>
#include <cstring>

#include "dasd/errors.hpp"

namespace dasd {

void ParamStore::insert(const std::string& name, Tensor tensor, bool frozen) {
    if (entries_.count(name)) throw InvalidValue("duplicate parameter name: " + name);
    Tensor stored = Tensor::from_data(tensor.shape(), tensor.data(), /*requires_grad=*/!frozen);
    stored.set_name(name);
    entries_[name] = Entry{std::move(stored), frozen};
}

const ParamStore::Entry& ParamStore::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw InvalidValue("unknown parameter: " + name);
    return it->second;
}

Tensor ParamStore::param(const std::string& name) const { return at(name).tensor; }

Tensor ParamStore::constant(const std::string& name) const { return at(name).tensor.detach(); }

bool ParamStore::is_frozen(const std::string& name) const { return at(name).frozen; }

void ParamStore::set_frozen(const std::string& name, bool frozen) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw InvalidValue("unknown parameter: " + name);
    if (it->second.frozen == frozen) return;
    Tensor replaced =
        Tensor::from_data(it->second.tensor.shape(), it->second.tensor.data(), !frozen);
    replaced.set_name(name);
    it->second.tensor = std::move(replaced);
    it->second.frozen = frozen;
}

void ParamStore::freeze_prefix(const std::string& prefix) {
    for (auto& [name, entry] : entries_) {
        if (name.rfind(prefix, 0) == 0 && !entry.frozen) set_frozen(name, true);
    }
}

bool ParamStore::all_frozen_with_prefix(const std::string& prefix) const {
    bool any = false;
    for (const auto& [name, entry] : entries_) {
        if (name.rfind(prefix, 0) != 0) continue;
        any = true;
        if (!entry.frozen) return false;
    }
    return any;
}

void ParamStore::set_data(const std::string& name, std::vector<double> data, bool force) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw InvalidValue("unknown parameter: " + name);
    if (it->second.frozen && !force) {
        throw FrozenWrite("attempt to write frozen parameter " + name);
    }
    if (data.size() != it->second.tensor.size()) {
        throw ShapeMismatch("set_data size mismatch for " + name);
    }
    Tensor replaced =
        Tensor::from_data(it->second.tensor.shape(), std::move(data), !it->second.frozen);
    replaced.set_name(name);
    it->second.tensor = std::move(replaced);
}

void ParamStore::erase_prefix(const std::string& prefix) {
    for (auto it = entries_.begin(); it != entries_.end();) {
        if (it->first.rfind(prefix, 0) == 0) it = entries_.erase(it);
        else ++it;
    }
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
}

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [name, _] : entries_) {
        if (name.rfind(prefix, 0) == 0) out.push_back(name);
    }
    return out;
}

std::size_t ParamStore::total_elements() const {
    std::size_t n = 0;
    for (const auto& [_, entry] : entries_) n += entry.tensor.size();
    return n;
}

std::size_t ParamStore::trainable_elements() const {
    std::size_t n = 0;
    for (const auto& [_, entry] : entries_) {
        if (!entry.frozen) n += entry.tensor.size();
    }
    return n;
}

std::size_t ParamStore::frozen_elements() const { return total_elements() - trainable_elements(); }

std::vector<unsigned char> ParamStore::snapshot_bytes(const std::string& prefix) const {
    std::vector<unsigned char> out;
    for (const auto& [name, entry] : entries_) {
        if (name.rfind(prefix, 0) != 0) continue;
        const auto& data = entry.tensor.data();
        std::size_t off = out.size();
        out.resize(off + data.size() * sizeof(double));
        std::memcpy(out.data() + off, data.data(), data.size() * sizeof(double));
    }
    return out;
}

void adam_update(ParamStore& params, const GradMap& grads, AdamState& state, double lr) {
    if (!(lr > 0.0)) throw InvalidValue("adam_update: learning rate must be positive");
    for (const auto& [name, grad] : grads) {
        if (!params.contains(name)) throw InvalidValue("adam_update: unknown parameter " + name);
        if (params.is_frozen(name)) {
            throw FrozenWrite("gradient supplied for frozen parameter " + name);
        }
        if (grad.shape() != params.param(name).shape()) {
            throw ShapeMismatch("adam_update: gradient shape mismatch for " + name);
        }
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (const auto& [name, grad] : grads) {
        const auto& g = grad.data();
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) m.assign(g.size(), 0.0);
        if (v.empty()) v.assign(g.size(), 0.0);
        std::vector<double> next = params.param(name).data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            double m_hat = m[i] / bc1;
            double v_hat = v[i] / bc2;
            next[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
        }
        params.set_data(name, std::move(next));
    }
}

double warmup_lr(double base_lr, std::uint64_t step, std::uint64_t total_steps,
                 double warmup_fraction) {
    if (warmup_fraction <= 0.0) return base_lr;
    auto warm = static_cast<std::uint64_t>(warmup_fraction * static_cast<double>(total_steps));
    if (warm == 0 || step >= warm) return base_lr;
    return base_lr * (static_cast<double>(step) + 1.0) / static_cast<double>(warm);
}

}  // namespace dasd
