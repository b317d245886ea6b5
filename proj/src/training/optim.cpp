#include "cg3d/training/optim.hpp"

#include <cmath>
#include <numbers>

#include "cg3d/util/error.hpp"

namespace cg3d {

double cosine_lr(const OptimConfig& cfg, long step, long total) {
  if (total <= 0) return cfg.lr;
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return cfg.min_lr + 0.5 * (cfg.lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

void Optimizer::step(const ParamList<float>& params, double lr) {
  ++t_;
  const auto flr = static_cast<float>(lr);
  const auto wd = static_cast<float>(cfg_.weight_decay);
  if (cfg_.kind == OptimKind::adamw) {
    const auto b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
    const auto eps = static_cast<float>(cfg_.eps);
    const auto c1 = static_cast<float>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
    const auto c2 = static_cast<float>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
    for (auto* p : params) {
      if (!p->trainable || p->grad.empty()) continue;
      auto& s = slots_[p->name];
      if (s.m.empty()) s.m = s.v = nn::Tensor<float>(p->value.rows(), p->value.cols());
      float* w = p->value.data();
      const float* g = p->grad.data();
      float* m = s.m.data();
      float* v = s.v.data();
      for (std::size_t i = 0, n = p->value.size(); i < n; ++i) {
        m[i] = b1 * m[i] + (1 - b1) * g[i];
        v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
        const float mh = m[i] / c1, vh = v[i] / c2;
        w[i] -= flr * (mh / (std::sqrt(vh) + eps) + wd * w[i]);
      }
    }
  } else {
    const auto mu = static_cast<float>(cfg_.momentum);
    for (auto* p : params) {
      if (!p->trainable || p->grad.empty()) continue;
      auto& s = slots_[p->name];
      if (s.m.empty()) s.m = nn::Tensor<float>(p->value.rows(), p->value.cols());
      float* w = p->value.data();
      const float* g = p->grad.data();
      float* vel = s.m.data();
      for (std::size_t i = 0, n = p->value.size(); i < n; ++i) {
        vel[i] = mu * vel[i] + g[i] + wd * w[i];
        w[i] -= flr * vel[i];
      }
    }
  }
}

void Optimizer::reconfigure(const OptimConfig& cfg) {
  if (cfg.kind != cfg_.kind)
    throw ConfigError("optimizer state is " + to_string(cfg_.kind) + " but config asks for " + to_string(cfg.kind));
  cfg_ = cfg;
}

nlohmann::json Optimizer::header() const {
  nlohmann::json slots = nlohmann::json::array();
  for (const auto& [name, s] : slots_)
    slots.push_back({{"name", name}, {"rows", s.m.rows()}, {"cols", s.m.cols()}, {"has_v", !s.v.empty()}});
  return {{"kind", to_string(cfg_.kind)}, {"t", t_}, {"slots", slots}};
}

void Optimizer::append_payload(std::vector<float>& out) const {
  for (const auto& [name, s] : slots_) {
    out.insert(out.end(), s.m.storage().begin(), s.m.storage().end());
    out.insert(out.end(), s.v.storage().begin(), s.v.storage().end());
  }
}

Optimizer Optimizer::restore(OptimConfig cfg, const nlohmann::json& header, std::span<const float> payload,
                             std::size_t& pos) {
  Optimizer o(cfg);
  if (header.at("kind").get<std::string>() != to_string(cfg.kind))
    throw ConfigError("optimizer state is " + header.at("kind").get<std::string>() + " but config asks for " +
                      to_string(cfg.kind));
  o.t_ = header.at("t").get<long>();
  auto take = [&](std::size_t rows, std::size_t cols) {
    const std::size_t n = rows * cols;
    if (payload.size() - pos < n) throw FormatError("optimizer payload truncated", pos * sizeof(float));
    nn::Tensor<float> t(rows, cols, std::vector<float>(payload.begin() + static_cast<std::ptrdiff_t>(pos),
                                                       payload.begin() + static_cast<std::ptrdiff_t>(pos + n)));
    pos += n;
    return t;
  };
  for (const auto& s : header.at("slots")) {
    const auto rows = s.at("rows").get<std::size_t>(), cols = s.at("cols").get<std::size_t>();
    Slot slot;
    slot.m = take(rows, cols);
    if (s.at("has_v").get<bool>()) slot.v = take(rows, cols);
    o.slots_[s.at("name").get<std::string>()] = std::move(slot);
  }
  return o;
}

}  // namespace cg3d
