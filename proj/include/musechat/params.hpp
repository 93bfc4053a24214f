#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "musechat/binio.hpp"
#include "musechat/errors.hpp"
#include "musechat/matrix.hpp"

namespace musechat {

/// A trainable tensor: value plus an additively-accumulated gradient of the
/// same shape. Gradients are exactly zero after zero_grad().
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(value.rows, value.cols) {}

    void zero_grad() { grad.fill(0.0); }
};

/// Owns parameters in creation order (std::deque keeps Parameter* stable).
/// Also implements the MCKP checkpoint container:
///   magic "MCKP", version u32, count u32, then per parameter:
///   name length u16, name bytes, rows u32, cols u32, row-major LE f64.
class ParameterStore {
  public:
    Parameter& add(const std::string& name, Matrix value) {
        if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
        params_.emplace_back(name, std::move(value));
        index_[name] = params_.size() - 1;
        return params_.back();
    }

    Parameter* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &params_[it->second];
    }
    const Parameter* find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &params_[it->second];
    }

    Parameter* require(const std::string& name) {
        Parameter* p = find(name);
        if (!p) throw ContractError("missing parameter: " + name);
        return p;
    }

    std::size_t size() const { return params_.size(); }
    Parameter& at(std::size_t i) { return params_[i]; }
    const Parameter& at(std::size_t i) const { return params_[i]; }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    std::size_t entry_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    void save(const std::string& path) const {
        BinWriter w(path);
        w.str("MCKP");
        w.u32(1);
        w.u32(static_cast<std::uint32_t>(params_.size()));
        for (const auto& p : params_) {
            w.u16(static_cast<std::uint16_t>(p.name.size()));
            w.str(p.name);
            w.u32(static_cast<std::uint32_t>(p.value.rows));
            w.u32(static_cast<std::uint32_t>(p.value.cols));
            for (double v : p.value.data) w.f64(v);
        }
        w.close();
    }

    /// Loads values into already-created parameters, matching by name and
    /// validating shapes. Every stored entry must exist in the store and
    /// every store entry must be present in the file.
    void load(const std::string& path) {
        BinReader r(path);
        r.expect_magic("MCKP");
        r.expect_version(1);
        std::uint32_t count = r.u32();
        if (count != params_.size()) {
            throw FormatError(path + ": checkpoint has " + std::to_string(count) + " parameters, model expects " +
                              std::to_string(params_.size()));
        }
        for (std::uint32_t i = 0; i < count; ++i) {
            std::uint16_t name_len = r.u16();
            std::string name = r.str(name_len);
            std::uint32_t rows = r.u32();
            std::uint32_t cols = r.u32();
            Parameter* p = find(name);
            if (!p) throw FormatError(path + ": unknown parameter \"" + name + "\"");
            if (p->value.rows != rows || p->value.cols != cols) {
                throw FormatError(path + ": parameter \"" + name + "\" is " + std::to_string(rows) + "x" +
                                  std::to_string(cols) + ", model expects " + p->value.shape_str());
            }
            for (double& v : p->value.data) v = r.f64();
        }
    }

    /// FNV-1a over names, shapes and value bytes; used by freeze contracts.
    std::uint64_t content_hash() const {
        std::uint64_t h = 1469598103934665603ull;
        auto feed = [&h](const void* p, std::size_t n) {
            const unsigned char* b = static_cast<const unsigned char*>(p);
            for (std::size_t i = 0; i < n; ++i) {
                h ^= b[i];
                h *= 1099511628211ull;
            }
        };
        for (const auto& p : params_) {
            feed(p.name.data(), p.name.size());
            std::uint64_t r = p.value.rows, c = p.value.cols;
            feed(&r, sizeof r);
            feed(&c, sizeof c);
            feed(p.value.data.data(), p.value.data.size() * sizeof(double));
        }
        return h;
    }

  private:
    std::deque<Parameter> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace musechat
