#include "mlp3d/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "mlp3d/errors.hpp"
#include "mlp3d/ops.hpp"

namespace mlp3d {

void validate_train(const TrainConfig& cfg) {
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (cfg.total_epochs == 0) throw ConfigError("total_epochs must be at least 1");
  if (cfg.warmup_epochs < 0.0 || cfg.warmup_epochs > static_cast<double>(cfg.total_epochs))
    throw ConfigError("warmup_epochs must lie in [0, total_epochs]");
  if (!(cfg.base_lr >= 0.0)) throw ConfigError("base_lr must be non-negative");
  if (!(cfg.weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (cfg.label_smoothing < 0.0 || cfg.label_smoothing >= 1.0)
    throw ConfigError("label_smoothing must lie in [0, 1)");
  if (cfg.grad_clip < 0.0) throw ConfigError("grad_clip must be non-negative");
  if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0 || cfg.eps <= 0.0)
    throw ConfigError("invalid AdamW moments");
}

double lr_at(std::size_t step, std::size_t steps_per_epoch, const TrainConfig& cfg) {
  const double warmup = cfg.warmup_epochs * static_cast<double>(steps_per_epoch);
  const double last = static_cast<double>(cfg.total_epochs * steps_per_epoch) - 1.0;
  const double s = static_cast<double>(step);
  if (s < warmup) return cfg.base_lr * s / warmup;
  if (last <= warmup) return s >= last && last > 0.0 ? 0.0 : cfg.base_lr;
  const double progress = std::min(1.0, (s - warmup) / (last - warmup));
  return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <class Real>
void adamw_step(std::vector<NamedTensor<Real>>& params, OptimizerState<Real>& state, double lr,
                const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), 0.0);
      state.v.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].tensor.has_grad()) continue;
    for (Real g : params[i].tensor.grad())
      if (!std::isfinite(static_cast<double>(g)))
        throw NumericError("non-finite gradient in parameter '" + params[i].name + "'");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t), c2 = 1.0 - std::pow(cfg.beta2, t);
  const double shrink = 1.0 - lr * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& tensor = params[i].tensor;
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != tensor.numel()) throw DimensionError("optimizer state shape mismatch for " + params[i].name);
    auto data = tensor.mutable_data();
    const bool has = tensor.has_grad();
    const auto grad = has ? tensor.grad() : std::span<const Real>{};
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = has ? static_cast<double>(grad[j]) : 0.0;
      double theta = static_cast<double>(data[j]) * shrink;
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      theta -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.eps);
      data[j] = static_cast<Real>(theta);
    }
  }
}

template <class Real>
double clip_grad_norm(std::vector<NamedTensor<Real>>& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params)
    if (p.tensor.has_grad())
      for (Real g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& p : params)
      if (p.tensor.has_grad())
        for (auto& g : p.tensor.mutable_grad()) g = static_cast<Real>(g * f);
  }
  return norm;
}

template <class Real>
Classifier<Real> make_classifier(const NetworkSpec& spec, ModelParams<Real>& params) {
  Classifier<Real> c;
  c.params = params.named_parameters();
  c.forward = [&spec, &params](const Tensor<Real>& clips, const ForwardOptions& options) {
    return network_forward(clips, spec, params, options);
  };
  return c;
}

template <class Real>
double evaluate_accuracy(const Classifier<Real>& model, const Dataset& data, std::size_t batch_size) {
  if (data.empty()) throw ConfigError("cannot evaluate on an empty dataset");
  NoGradGuard guard;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t first = 0; first < data.size(); first += batch_size) {
    const std::size_t n = std::min(batch_size, data.size() - first);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), first);
    const Tensor<Real> logits = model.forward(data.batch<Real>(idx), {});
    const std::size_t k = logits.dim(-1);
    const auto v = logits.data();
    for (std::size_t b = 0; b < n; ++b) {
      const auto row = v.subspan(b * k, k);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      correct += best == data.labels[first + b];
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
}

template <class Real>
double batch_loss(const Classifier<Real>& model, const Dataset& data,
                  std::span<const std::size_t> indices, double smoothing) {
  NoGradGuard guard;
  std::vector<std::size_t> labels;
  for (auto i : indices) labels.push_back(data.labels[i]);
  return static_cast<double>(
      cross_entropy(model.forward(data.batch<Real>(indices), {}), labels, static_cast<Real>(smoothing)).item());
}

template <class Real>
TrainResult train_model(Classifier<Real>& model, const Dataset& train, const Dataset& val,
                        const TrainConfig& cfg, const TrainHooks<Real>& hooks) {
  validate_train(cfg);
  if (train.empty() || val.empty()) throw ConfigError("training needs nonempty train and val splits");
  TrainResult result;
  std::mt19937_64 rng(cfg.seed);
  OptimizerState<Real> state;
  const std::size_t steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  std::vector<std::size_t> order(train.size());
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.total_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0, lr = 0.0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size, ++step) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - first);
      const std::span<const std::size_t> idx(order.data() + first, n);
      std::vector<std::size_t> labels;
      for (auto i : idx) labels.push_back(train.labels[i]);
      if (hooks.before_step) hooks.before_step(rng);
      for (auto& p : model.params) p.tensor.zero_grad();

      ForwardOptions options{.training = true, .rng = &rng};
      const Tensor<Real> loss =
          cross_entropy(model.forward(train.batch<Real>(idx), options), labels,
                        static_cast<Real>(cfg.label_smoothing));
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        result.diverged = true;
        result.message = fmt::format("non-finite loss at epoch {} step {}", epoch, step);
        return result;
      }
      loss.backward();
      if (hooks.after_backward) hooks.after_backward();
      if (cfg.grad_clip > 0.0) clip_grad_norm(model.params, cfg.grad_clip);
      lr = lr_at(step, steps_per_epoch, cfg);
      try {
        adamw_step(model.params, state, lr, cfg);
      } catch (const NumericError& e) {
        result.diverged = true;
        result.message = e.what();
        return result;
      }
      loss_sum += value * static_cast<double>(n);
    }
    if (hooks.before_eval) hooks.before_eval(rng);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(train.size()),
                    evaluate_accuracy(model, val, cfg.batch_size), lr};
    result.trace.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }
  for (auto& p : model.params) p.tensor.zero_grad();
  return result;
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "epoch,train_loss,val_acc,lr\n";
  for (const auto& r : trace) out << fmt::format("{},{},{},{}\n", r.epoch, r.train_loss, r.val_acc, r.lr);
}

std::vector<EpochRecord> read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "epoch,train_loss,val_acc,lr") throw FormatError(path.string() + ": unexpected trace header");
  std::vector<EpochRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell[4];
    for (auto& c : cell)
      if (!std::getline(row, c, ',')) throw FormatError(path.string() + ": short trace row");
    out.push_back({std::stoul(cell[0]), std::stod(cell[1]), std::stod(cell[2]), std::stod(cell[3])});
  }
  return out;
}

#define MLP3D_INSTANTIATE_TRAIN(R)                                                                 \
  template struct OptimizerState<R>;                                                               \
  template void adamw_step(std::vector<NamedTensor<R>>&, OptimizerState<R>&, double,               \
                           const TrainConfig&);                                                    \
  template double clip_grad_norm(std::vector<NamedTensor<R>>&, double);                            \
  template Classifier<R> make_classifier(const NetworkSpec&, ModelParams<R>&);                     \
  template double evaluate_accuracy(const Classifier<R>&, const Dataset&, std::size_t);            \
  template double batch_loss(const Classifier<R>&, const Dataset&, std::span<const std::size_t>,   \
                             double);                                                              \
  template TrainResult train_model(Classifier<R>&, const Dataset&, const Dataset&,                 \
                                   const TrainConfig&, const TrainHooks<R>&);

MLP3D_INSTANTIATE_TRAIN(float)
MLP3D_INSTANTIATE_TRAIN(double)

}  // namespace mlp3d
