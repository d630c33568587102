#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "polytrans/error.hpp"
#include "polytrans/model.hpp"
#include "polytrans/params.hpp"
#include "polytrans/rng.hpp"

namespace polytrans {

struct OptimConfig {
  enum class Schedule { constant, plateau_isqrt, warmup_isqrt };

  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double clip_norm = 5.0;       // global L2; <= 0 disables clipping
  Schedule schedule = Schedule::plateau_isqrt;
  int decay_start = 16000;      // plateau_isqrt: constant until here, then decay
  int warmup_steps = 4000;      // warmup_isqrt: linear ramp length
};

// step is 1-based (the step about to be applied).
inline double lr_schedule(const OptimConfig& c, int step) {
  if (step < 1) throw Error("lr_schedule: step must be >= 1");
  switch (c.schedule) {
    case OptimConfig::Schedule::constant:
      return c.lr;
    case OptimConfig::Schedule::plateau_isqrt:
      if (step <= c.decay_start) return c.lr;
      return c.lr * std::sqrt(static_cast<double>(c.decay_start) / step);
    case OptimConfig::Schedule::warmup_isqrt:
      if (step < c.warmup_steps)
        return c.lr * static_cast<double>(step) / c.warmup_steps;
      return c.lr * std::sqrt(static_cast<double>(c.warmup_steps) / step);
  }
  throw Error("lr_schedule: unknown schedule");
}

template <typename S>
struct AdamState {
  std::vector<S> m, v;
  std::int64_t t = 0;
};

// Bias-corrected Adam update on flat buffers.
template <typename S>
void adam_step(std::vector<S>& w, const std::vector<S>& g, AdamState<S>& st,
               const OptimConfig& c, double lr) {
  if (w.size() != g.size()) throw Error("adam: param/grad size mismatch");
  if (st.m.size() != w.size()) {
    st.m.assign(w.size(), S(0));
    st.v.assign(w.size(), S(0));
    st.t = 0;
  }
  ++st.t;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double gi = static_cast<double>(g[i]);
    const double mi = c.beta1 * static_cast<double>(st.m[i]) + (1.0 - c.beta1) * gi;
    const double vi = c.beta2 * static_cast<double>(st.v[i]) + (1.0 - c.beta2) * gi * gi;
    st.m[i] = static_cast<S>(mi);
    st.v[i] = static_cast<S>(vi);
    const double mhat = mi / bc1;
    const double vhat = vi / bc2;
    w[i] = static_cast<S>(static_cast<double>(w[i]) - lr * mhat / (std::sqrt(vhat) + c.eps));
  }
}

// Rescales so the global L2 norm is at most max_norm; returns the pre-clip norm.
template <typename S>
double clip_gradients(ParamStore<S>& grads, double max_norm) {
  double ss = 0.0;
  for (S v : grads.flat()) ss += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(ss);
  if (max_norm > 0.0 && norm > max_norm) {
    const S scale = static_cast<S>(max_norm / norm);
    for (S& v : grads.flat()) v *= scale;
  }
  return norm;
}

// Stops after `patience` consecutive evaluations without strict improvement.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {
    if (patience < 1) throw Error("early stopper: patience must be >= 1");
  }

  // Returns true when this evaluation strictly improved on the best so far.
  bool observe(double value) {
    const int idx = evals_++;
    if (value < best_) {
      best_ = value;
      best_eval_ = idx;
      fails_ = 0;
      return true;
    }
    ++fails_;
    return false;
  }

  bool should_stop() const { return fails_ >= patience_; }
  double best() const { return best_; }
  int best_eval() const { return best_eval_; }
  int evals() const { return evals_; }

 private:
  int patience_;
  int evals_ = 0;
  int fails_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
  int best_eval_ = -1;
};

// --- checkpoints -------------------------------------------------------------

template <typename S>
struct Checkpoint {
  ModelConfig config;
  std::int64_t step = 0;
  std::vector<S> params;
  bool has_adam = false;
  AdamState<S> adam;
};

namespace detail {

inline void write_raw(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_raw(std::istream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) throw Error("checkpoint: truncated file");
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  write_raw(os, &v, sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  read_raw(is, &v, sizeof(T));
  return v;
}

inline constexpr char kCkptMagic[8] = {'P', 'T', 'C', 'H', 'K', 'P', 'T', '1'};

}  // namespace detail

// Native-endian binary container. Field order is fixed; the scalar width tag
// keeps float and double models from being confused for each other.
template <typename S>
void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const std::vector<S>& params, std::int64_t step,
                     const AdamState<S>* adam) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("checkpoint: cannot open '" + path + "' for writing");
  detail::write_raw(os, detail::kCkptMagic, sizeof(detail::kCkptMagic));
  detail::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(sizeof(S)));
  for (int v : {cfg.vocab_size, cfg.d_model, cfg.n_heads, cfg.d_ff, cfg.n_enc_layers,
                cfg.n_dec_layers, cfg.max_len})
    detail::write_pod<std::int32_t>(os, v);
  detail::write_pod<double>(os, cfg.dropout);
  detail::write_pod<double>(os, cfg.label_smoothing);
  detail::write_pod<std::int64_t>(os, step);
  detail::write_pod<std::uint64_t>(os, params.size());
  detail::write_raw(os, params.data(), params.size() * sizeof(S));
  const std::uint8_t has_adam = adam && adam->m.size() == params.size() ? 1 : 0;
  detail::write_pod<std::uint8_t>(os, has_adam);
  if (has_adam) {
    detail::write_pod<std::int64_t>(os, adam->t);
    detail::write_raw(os, adam->m.data(), adam->m.size() * sizeof(S));
    detail::write_raw(os, adam->v.data(), adam->v.size() * sizeof(S));
  }
  if (!os) throw Error("checkpoint: write to '" + path + "' failed");
}

template <typename S>
void save_checkpoint(const std::string& path, const Transformer<S>& model, std::int64_t step,
                     const AdamState<S>* adam = nullptr) {
  save_checkpoint(path, model.config(), model.params().flat(), step, adam);
}

template <typename S>
Checkpoint<S> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("checkpoint: cannot open '" + path + "'");
  char magic[sizeof(detail::kCkptMagic)];
  detail::read_raw(is, magic, sizeof(magic));
  if (!std::equal(magic, magic + sizeof(magic), detail::kCkptMagic))
    throw Error("checkpoint: bad magic in '" + path + "'");
  const auto width = detail::read_pod<std::uint8_t>(is);
  if (width != sizeof(S))
    throw Error("checkpoint: scalar width " + std::to_string(width) + " does not match model (" +
                std::to_string(sizeof(S)) + ")");
  Checkpoint<S> ck;
  ck.config.vocab_size = detail::read_pod<std::int32_t>(is);
  ck.config.d_model = detail::read_pod<std::int32_t>(is);
  ck.config.n_heads = detail::read_pod<std::int32_t>(is);
  ck.config.d_ff = detail::read_pod<std::int32_t>(is);
  ck.config.n_enc_layers = detail::read_pod<std::int32_t>(is);
  ck.config.n_dec_layers = detail::read_pod<std::int32_t>(is);
  ck.config.max_len = detail::read_pod<std::int32_t>(is);
  ck.config.dropout = detail::read_pod<double>(is);
  ck.config.label_smoothing = detail::read_pod<double>(is);
  ck.step = detail::read_pod<std::int64_t>(is);
  const auto count = detail::read_pod<std::uint64_t>(is);
  ck.params.resize(count);
  detail::read_raw(is, ck.params.data(), count * sizeof(S));
  if (detail::read_pod<std::uint8_t>(is)) {
    ck.has_adam = true;
    ck.adam.t = detail::read_pod<std::int64_t>(is);
    ck.adam.m.resize(count);
    ck.adam.v.resize(count);
    detail::read_raw(is, ck.adam.m.data(), count * sizeof(S));
    detail::read_raw(is, ck.adam.v.data(), count * sizeof(S));
  }
  return ck;
}

template <typename S>
Transformer<S> model_from_checkpoint(const Checkpoint<S>& ck) {
  Transformer<S> model(ck.config);
  if (model.params().size() != ck.params.size())
    throw Error("checkpoint: parameter count does not match config");
  model.params().flat() = ck.params;
  return model;
}

// --- training loop -----------------------------------------------------------

struct TrainConfig {
  int epochs = 10;
  int batch_size = 500;
  std::uint64_t seed = 1;
  int patience = 5;          // early stopping on per-epoch validation loss
  OptimConfig optim;
};

struct TrainResult {
  int steps = 0;                 // total optimizer steps applied (global)
  double final_train_loss = 0.0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  bool early_stopped = false;
  std::vector<std::string> log;
};

namespace detail {

inline std::string train_log_line(int step, double lr, double loss, const double* val) {
  char buf[160];
  if (val)
    std::snprintf(buf, sizeof(buf), "%d\t%.8g\t%.6f\t%.6f", step, lr, loss, *val);
  else
    std::snprintf(buf, sizeof(buf), "%d\t%.8g\t%.6f", step, lr, loss);
  return buf;
}

}  // namespace detail

// Epoch-driven training with deterministic, resumable randomness: the shuffle
// stream depends only on (seed, epoch) and the dropout stream only on
// (seed, global step), so a run resumed from a checkpoint replays the exact
// trajectory of an uninterrupted run. Pass start_step = checkpoint step to
// resume; earlier steps are skipped, not recomputed.
//
// When validation examples are given, the per-epoch validation loss drives
// early stopping and the best-scoring parameters are restored at the end.
template <typename S>
TrainResult train_loop(Transformer<S>& model, const std::vector<TrainExample>& train,
                       const std::vector<TrainExample>& val, const TrainConfig& cfg,
                       std::ostream* log_stream = nullptr, AdamState<S>* adam_io = nullptr,
                       int start_step = 0) {
  if (train.empty()) throw Error("train: no training examples");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw Error("train: bad epochs/batch_size");

  const int n = static_cast<int>(train.size());
  const int steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;

  AdamState<S> local_adam;
  AdamState<S>& adam = adam_io ? *adam_io : local_adam;
  ParamStore<S> grads = model.zero_like();
  EarlyStopper stopper(cfg.patience);

  TrainResult res;
  res.steps = start_step;
  std::vector<S> best_params;
  const bool has_dropout = model.config().dropout > 0.0;

  auto emit = [&](const std::string& line) {
    res.log.push_back(line);
    if (log_stream) (*log_stream) << line << '\n';
  };

  int global_step = 0;  // completed steps counting from the very first epoch
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng shuffle_rng(mix_seed(cfg.seed, 0xE70C0000ULL + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    for (int b = 0; b < steps_per_epoch; ++b) {
      if (global_step < start_step) {  // fast-forward on resume
        ++global_step;
        continue;
      }
      std::vector<TrainExample> batch;
      const int lo = b * cfg.batch_size;
      const int hi = std::min(n, lo + cfg.batch_size);
      batch.reserve(static_cast<std::size_t>(hi - lo));
      for (int i = lo; i < hi; ++i)
        batch.push_back(train[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);

      const int step = global_step + 1;  // 1-based for the schedule
      const double lr = lr_schedule(cfg.optim, step);
      Rng drop_rng(mix_seed(cfg.seed, 0xD60B0000ULL + static_cast<std::uint64_t>(step)));
      const double loss =
          batch_loss_and_grad(model, batch, grads, has_dropout ? &drop_rng : nullptr);
      if (!std::isfinite(loss))
        throw Error("train: non-finite loss at step " + std::to_string(step));
      clip_gradients(grads, cfg.optim.clip_norm);
      adam_step(model.params().flat(), grads.flat(), adam, cfg.optim, lr);

      ++global_step;
      res.steps = global_step;
      res.final_train_loss = loss;
      emit(detail::train_log_line(step, lr, loss, nullptr));
    }

    if (global_step <= start_step) continue;  // epoch fully skipped on resume

    if (!val.empty()) {
      const double val_loss = batch_loss(model, val);
      const double lr_now = lr_schedule(cfg.optim, std::max(1, global_step));
      emit(detail::train_log_line(global_step, lr_now, res.final_train_loss, &val_loss));
      if (stopper.observe(val_loss)) {
        res.best_val_loss = val_loss;
        res.best_epoch = epoch;
        best_params = model.params().flat();
      }
      if (stopper.should_stop()) {
        res.early_stopped = true;
        break;
      }
    }
  }

  if (!best_params.empty()) model.params().flat() = best_params;
  return res;
}

}  // namespace polytrans
