#pragma once

// AdamW with linear warmup and cosine decay, and a deterministic epoch loop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mlp3d/dataset.hpp"
#include "mlp3d/network.hpp"
#include "mlp3d/tensor.hpp"

namespace mlp3d {

struct TrainConfig {
  double base_lr = 5e-4;
  double weight_decay = 0.05;
  double warmup_epochs = 1.0;
  std::size_t total_epochs = 10;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double label_smoothing = 0.0;
  Precision precision = Precision::f32;
  // Global L2 norm clip; 0 disables.
  double grad_clip = 0.0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  bool operator==(const TrainConfig&) const = default;
};

void validate_train(const TrainConfig& cfg);

// Linear ramp 0 -> base_lr over the warmup steps, then half-cosine decay
// reaching exactly 0 at the last step (total_epochs * steps_per_epoch - 1).
double lr_at(std::size_t step, std::size_t steps_per_epoch, const TrainConfig& cfg);

template <class Real>
struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m, v;
};

// One AdamW update. Weight decay is decoupled (theta *= 1 - lr*wd before the
// moment step) and applies to every parameter. Parameters without a gradient
// buffer are treated as having zero gradient. A non-finite gradient throws
// NumericError naming the parameter.
template <class Real>
void adamw_step(std::vector<NamedTensor<Real>>& params, OptimizerState<Real>& state, double lr,
                const TrainConfig& cfg);

// Rescales all gradients so their global L2 norm is at most max_norm;
// returns the norm before clipping.
template <class Real>
double clip_grad_norm(std::vector<NamedTensor<Real>>& params, double max_norm);

// Anything that maps a clip batch to logits through a fixed parameter list.
template <class Real>
struct Classifier {
  std::function<Tensor<Real>(const Tensor<Real>& clips, const ForwardOptions& options)> forward;
  std::vector<NamedTensor<Real>> params;
};

template <class Real>
Classifier<Real> make_classifier(const NetworkSpec& spec, ModelParams<Real>& params);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_acc = 0.0;  // percent
  double lr = 0.0;       // rate used by the last step of the epoch

  bool operator==(const EpochRecord&) const = default;
};

template <class Real>
struct TrainHooks {
  // Before every optimisation step and before each validation pass; used by
  // the supernet to draw a fresh architecture.
  std::function<void(std::mt19937_64&)> before_step;
  std::function<void(std::mt19937_64&)> before_eval;
  // Between backward and the update, e.g. to mask frozen weights.
  std::function<void()> after_backward;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochRecord> trace;
  bool diverged = false;
  std::string message;
};

// Epochs of shuffled mini-batches with the final partial batch kept.
// Validation accuracy is computed after every epoch in eval mode. A
// non-finite loss or gradient stops training with diverged = true and the
// trace of completed epochs.
template <class Real>
TrainResult train_model(Classifier<Real>& model, const Dataset& train, const Dataset& val,
                        const TrainConfig& cfg, const TrainHooks<Real>& hooks = {});

// Top-1 accuracy in percent; batches of `batch_size` under NoGradGuard.
template <class Real>
double evaluate_accuracy(const Classifier<Real>& model, const Dataset& data,
                         std::size_t batch_size = 32);

// Mean cross-entropy of one batch, for tests and probes.
template <class Real>
double batch_loss(const Classifier<Real>& model, const Dataset& data,
                  std::span<const std::size_t> indices, double smoothing = 0.0);

// CSV with header epoch,train_loss,val_acc,lr; values printed round-trip exact.
void write_trace_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& trace);
std::vector<EpochRecord> read_trace_csv(const std::filesystem::path& path);

}  // namespace mlp3d
