#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "musechat/errors.hpp"
#include "musechat/matrix.hpp"
#include "musechat/params.hpp"

namespace musechat {

struct AdamWConfig {
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// AdamW with decoupled weight decay:
///   m = b1 m + (1-b1) g;  v = b2 v + (1-b2) g^2
///   p = p * (1 - lr*wd) - lr * m_hat / (sqrt(v_hat) + eps)
class AdamW {
  public:
    AdamW(ParameterStore& store, AdamWConfig config) : store_(&store), cfg_(config) {
        for (auto& p : store) {
            m_.emplace_back(p.value.rows, p.value.cols);
            v_.emplace_back(p.value.rows, p.value.cols);
        }
    }

    const AdamWConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }
    std::uint64_t steps() const { return t_; }

    void step() {
        ++t_;
        double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        std::size_t i = 0;
        for (auto& p : *store_) {
            Matrix& m = m_[i];
            Matrix& v = v_[i];
            ++i;
            for (std::size_t k = 0; k < p.value.data.size(); ++k) {
                double g = p.grad.data[k];
                m.data[k] = cfg_.beta1 * m.data[k] + (1.0 - cfg_.beta1) * g;
                v.data[k] = cfg_.beta2 * v.data[k] + (1.0 - cfg_.beta2) * g * g;
                double mhat = m.data[k] / bc1;
                double vhat = v.data[k] / bc2;
                p.value.data[k] = p.value.data[k] * (1.0 - cfg_.lr * cfg_.weight_decay) -
                                  cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    /// Serialize moments and step count into a fresh checkpoint container.
    void save_state(const std::string& path) const {
        ParameterStore out;
        out.add("opt.t", Matrix::full(1, 1, static_cast<double>(t_)));
        std::size_t i = 0;
        for (const auto& p : *store_) {
            out.add("opt.m." + p.name, m_[i]);
            out.add("opt.v." + p.name, v_[i]);
            ++i;
        }
        out.save(path);
    }

    void load_state(const std::string& path) {
        ParameterStore in;
        in.add("opt.t", Matrix(1, 1));
        std::size_t i = 0;
        for (const auto& p : *store_) {
            in.add("opt.m." + p.name, Matrix(m_[i].rows, m_[i].cols));
            in.add("opt.v." + p.name, Matrix(v_[i].rows, v_[i].cols));
            ++i;
        }
        in.load(path);
        t_ = static_cast<std::uint64_t>(in.require("opt.t")->value.data[0]);
        i = 0;
        for (const auto& p : *store_) {
            m_[i] = in.require("opt.m." + p.name)->value;
            v_[i] = in.require("opt.v." + p.name)->value;
            ++i;
        }
    }

  private:
    ParameterStore* store_;
    AdamWConfig cfg_;
    std::uint64_t t_ = 0;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
};

}  // namespace musechat
