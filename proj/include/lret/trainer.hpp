#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lret/checkpoint.hpp"
#include "lret/loader.hpp"
#include "lret/model.hpp"

namespace lret {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double lr = 0.001;
  double epsilon = 1e-7;

  void validate() const {
    if (lr <= 0.0) throw std::invalid_argument("AdamConfig: lr must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
      throw std::invalid_argument("AdamConfig: betas must be in [0,1)");
    }
  }
};

/// Adam over a ParamStore's trainable parameters. Moments are f32 like the
/// parameters; the update math runs in double.
class Adam {
 public:
  explicit Adam(ParamStore& params, AdamConfig cfg = {}) : params_(params), cfg_(cfg) {
    cfg_.validate();
    params_.for_each([&](Param& p) {
      if (!p.trainable) return;
      m_[p.name] = Tensor::zeros(p.value.shape());
      v_[p.name] = Tensor::zeros(p.value.shape());
    });
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    params_.for_each([&](Param& p) {
      if (!p.trainable) return;
      Tensor& m = m_.at(p.name);
      Tensor& v = v_.at(p.name);
      for (int64_t i = 0; i < p.value.size(); ++i) {
        double g = p.grad[i];
        if (!std::isfinite(g)) {
          throw std::runtime_error("adam: non-finite gradient in parameter " + p.name);
        }
        double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        m[i] = float(mi);
        v[i] = float(vi);
        double mhat = mi / bc1;
        double vhat = vi / bc2;
        p.value[i] = float(double(p.value[i]) - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon));
      }
    });
  }

  int64_t t() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  const Tensor& moment1(const std::string& name) const { return m_.at(name); }
  const Tensor& moment2(const std::string& name) const { return v_.at(name); }

  void set_moments(const std::string& name, const Tensor& m, const Tensor& v, int64_t t) {
    m_.at(name) = m;
    v_.at(name) = v;
    t_ = t;
  }

 private:
  ParamStore& params_;
  AdamConfig cfg_;
  std::map<std::string, Tensor> m_, v_;
  int64_t t_ = 0;
};

struct TrainConfig {
  int epochs = 10;
  AdamConfig optimizer;
  uint64_t seed = 0;
  std::string checkpoint_dir;
  std::string train_split = "train";
  std::string val_split = "val";
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double wall_seconds = 0.0;
  double data_wait_seconds = 0.0;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochLog> logs;
  std::string checkpoint_path;
};

inline void write_epoch_logs(const std::vector<EpochLog>& logs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("trainer: cannot write " + path);
  out << "epoch,train_loss,train_acc,val_loss,val_acc,wall_seconds,data_wait_seconds\n";
  out.precision(17);
  for (const auto& l : logs) {
    out << l.epoch << "," << l.train_loss << "," << l.train_acc << "," << l.val_loss << ","
        << l.val_acc << "," << l.wall_seconds << "," << l.data_wait_seconds << "\n";
  }
}

namespace detail {

inline int argmax_row(const Tensor& probs, int row) {
  const int k = probs.dim(1);
  int best = 0;
  for (int j = 1; j < k; ++j) {
    if (probs.at2(row, j) > probs.at2(row, best)) best = j;
  }
  return best;
}

}  // namespace detail

inline Checkpoint make_checkpoint(const Model& model, const Adam* opt, int epoch,
                                  double best_val_acc, nlohmann::json pipeline_meta) {
  Checkpoint ckpt;
  ckpt.spec = model.spec();
  ckpt.model_seed = model.seed();
  ckpt.epoch = epoch;
  ckpt.best_val_accuracy = best_val_acc;
  ckpt.pipeline_meta = std::move(pipeline_meta);
  model.params().for_each([&](const Param& p) {
    ckpt.tensors.push_back({"param:" + p.name, p.value});
    if (opt && p.trainable) {
      ckpt.tensors.push_back({"adam.m:" + p.name, opt->moment1(p.name)});
      ckpt.tensors.push_back({"adam.v:" + p.name, opt->moment2(p.name)});
    }
  });
  if (opt) {
    ckpt.tensors.push_back({"adam.t", Tensor::full({1}, float(opt->t()))});
  }
  return ckpt;
}

/// One full training run: per epoch a weighted-loss train pass then a full
/// validation pass in inference mode; the checkpoint on disk is replaced only
/// when validation accuracy strictly improves (ties keep the earlier epoch).
/// Returns the best checkpoint, not the last.
inline TrainResult train(Model& model, DataLoader& loader, const std::vector<float>& class_weights,
                         const TrainConfig& cfg, bool verbose = false) {
  cfg.optimizer.validate();
  if (cfg.epochs < 1) throw std::invalid_argument("trainer: epochs must be >= 1");
  Adam opt(model.params(), cfg.optimizer);
  Rng dropout_rng(mix_seed(cfg.seed, 0x64726f70ULL));

  nlohmann::json pipeline_meta = {{"pixel_scale", "1/255"},
                                  {"shuffle_seed", loader.config().shuffle_seed},
                                  {"batch_size", loader.config().batch_size},
                                  {"train_seed", cfg.seed}};
  std::string ckpt_path;
  if (!cfg.checkpoint_dir.empty()) {
    std::filesystem::create_directories(cfg.checkpoint_dir);
    ckpt_path = cfg.checkpoint_dir + "/best.lret";
  }

  TrainResult result;
  double best_acc = -1.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto wall0 = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = epoch;

    double loss_sum = 0.0;
    int64_t correct = 0, seen = 0, steps = 0;
    auto ep = loader.start_epoch(cfg.train_split, epoch);
    while (auto batch = ep->next()) {
      model.params().zero_grads();
      auto r = model.forward(batch->images, Mode::Train, &dropout_rng);
      auto [loss, probs] = softmax_cross_entropy(r.logits, batch->labels, class_weights);
      if (!std::isfinite(loss->val[0])) {
        throw std::runtime_error("trainer: loss is non-finite at epoch " + std::to_string(epoch) +
                                 " step " + std::to_string(steps));
      }
      backward(loss);
      r.tape.harvest();
      opt.step();
      loss_sum += loss->val[0] * double(batch->labels.size());
      for (size_t i = 0; i < batch->labels.size(); ++i) {
        correct += detail::argmax_row(probs, int(i)) == batch->labels[i];
      }
      seen += int64_t(batch->labels.size());
      ++steps;
    }
    log.train_loss = loss_sum / double(seen);
    log.train_acc = double(correct) / double(seen);
    log.data_wait_seconds = ep->stats().wait_ms / 1000.0;

    double vloss_sum = 0.0;
    int64_t vcorrect = 0, vseen = 0;
    auto vep = loader.start_epoch(cfg.val_split, 0);
    while (auto batch = vep->next()) {
      auto r = model.forward(batch->images, Mode::Infer);
      auto [loss, probs] = softmax_cross_entropy(r.logits, batch->labels, class_weights);
      vloss_sum += loss->val[0] * double(batch->labels.size());
      for (size_t i = 0; i < batch->labels.size(); ++i) {
        vcorrect += detail::argmax_row(probs, int(i)) == batch->labels[i];
      }
      vseen += int64_t(batch->labels.size());
    }
    log.val_loss = vloss_sum / double(vseen);
    log.val_acc = double(vcorrect) / double(vseen);
    log.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    result.logs.push_back(log);
    if (verbose) {
      std::fprintf(stderr, "epoch %d train_loss %.4f train_acc %.4f val_acc %.4f\n", epoch,
                   log.train_loss, log.train_acc, log.val_acc);
    }

    if (log.val_acc > best_acc) {
      best_acc = log.val_acc;
      result.best = make_checkpoint(model, &opt, epoch, best_acc, pipeline_meta);
      if (!ckpt_path.empty()) save_checkpoint(ckpt_path, result.best);
    }
  }
  result.checkpoint_path = ckpt_path;
  return result;
}

}  // namespace lret
