#pragma once

#include <chrono>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "lret/image_io.hpp"
#include "lret/manifest.hpp"
#include "lret/rng.hpp"
#include "lret/tensor.hpp"

namespace lret {

struct LoaderConfig {
  int batch_size = 32;
  uint64_t shuffle_seed = 0;
  bool cache = true;
  int prefetch_depth = 2;
  int decode_workers = 1;
  int class_cap = 0;  // 0 = no cap; applied by the caller via cap_classes
  double simulated_io_latency_ms = 0.0;
  int64_t cache_budget_bytes = int64_t(1) << 30;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("LoaderConfig: batch_size must be >= 1");
    if (prefetch_depth < 1) throw std::invalid_argument("LoaderConfig: prefetch_depth must be >= 1");
    if (decode_workers < 1) throw std::invalid_argument("LoaderConfig: decode_workers must be >= 1");
  }
};

struct Batch {
  Tensor images;  // N x H x W x 3, values in [0,1]
  std::vector<int> labels;
  std::vector<std::string> paths;
  int sequence_index = 0;
};

struct EpochStats {
  int epoch = 0;
  double wall_ms = 0.0;
  double decode_ms = 0.0;
  double wait_ms = 0.0;
  int64_t cache_hits = 0;
  int max_buffered = 0;
};

/// Manifest-driven batch loader: a decode worker pool feeds a reorder buffer
/// bounded by prefetch_depth; batches reach the consumer strictly in sequence
/// order, so the emitted stream is identical for any worker count. Decoded
/// tensors are cached across epochs against an explicit byte budget.
class DataLoader {
 public:
  DataLoader(const DatasetManifest& manifest, LoaderConfig cfg)
      : manifest_(manifest), cfg_(cfg) {
    cfg_.validate();
  }

  /// Per-epoch record order: a seeded shuffle keyed by (shuffle_seed, epoch)
  /// through the splitmix64 finalizer, so every implementation of this
  /// contract agrees on the sequence.
  std::vector<int> epoch_order(const std::string& split, int epoch) const {
    std::vector<int> idx = manifest_.split_indices(split);
    if (idx.empty()) throw std::invalid_argument("loader: split " + split + " is empty");
    Rng rng(mix_seed(cfg_.shuffle_seed, static_cast<uint64_t>(epoch)));
    rng.shuffle(idx);
    return idx;
  }

  class Epoch {
   public:
    Epoch(DataLoader& owner, std::string split, int epoch)
        : owner_(owner), epoch_(epoch), start_(Clock::now()) {
      std::vector<int> order = owner_.epoch_order(split, epoch);
      const int bs = owner_.cfg_.batch_size;
      for (size_t i = 0; i < order.size(); i += size_t(bs)) {
        size_t end = std::min(order.size(), i + size_t(bs));
        batches_.emplace_back(order.begin() + std::ptrdiff_t(i), order.begin() + std::ptrdiff_t(end));
      }
      stats_.epoch = epoch;
      const int workers = std::min<int>(owner_.cfg_.decode_workers, int(batches_.size()));
      for (int w = 0; w < std::max(workers, 1); ++w) {
        threads_.emplace_back([this] { work(); });
      }
    }

    ~Epoch() {
      {
        std::lock_guard<std::mutex> lk(mu_);
        aborted_ = true;
      }
      cv_space_.notify_all();
      for (auto& t : threads_) t.join();
    }

    Epoch(const Epoch&) = delete;
    Epoch& operator=(const Epoch&) = delete;

    /// Next batch in sequence order, or nullopt at end of epoch. Time spent
    /// blocked here is accounted as data wait.
    std::optional<Batch> next() {
      std::unique_lock<std::mutex> lk(mu_);
      if (next_to_emit_ >= int(batches_.size())) return std::nullopt;
      auto t0 = Clock::now();
      cv_ready_.wait(lk, [this] { return error_ || ready_.count(next_to_emit_) > 0; });
      stats_.wait_ms += ms_since(t0);
      if (error_) std::rethrow_exception(error_);
      Batch b = std::move(ready_.at(next_to_emit_));
      ready_.erase(next_to_emit_);
      ++next_to_emit_;
      if (next_to_emit_ >= int(batches_.size())) stats_.wall_ms = ms_since(start_);
      lk.unlock();
      cv_space_.notify_all();
      return b;
    }

    int num_batches() const { return int(batches_.size()); }

    /// Valid once next() has returned nullopt (wall_ms covers the full epoch).
    const EpochStats& stats() const { return stats_; }

   private:
    using Clock = std::chrono::steady_clock;

    static double ms_since(Clock::time_point t0) {
      return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    }

    void work() {
      for (;;) {
        int seq;
        {
          std::lock_guard<std::mutex> lk(mu_);
          if (aborted_ || error_ || next_to_claim_ >= int(batches_.size())) return;
          seq = next_to_claim_++;
        }
        try {
          Batch b = decode_batch(seq);
          std::unique_lock<std::mutex> lk(mu_);
          cv_space_.wait(lk, [this, seq] {
            return aborted_ || seq < next_to_emit_ + owner_.cfg_.prefetch_depth;
          });
          if (aborted_) return;
          ready_[seq] = std::move(b);
          stats_.max_buffered = std::max(stats_.max_buffered, int(ready_.size()));
          lk.unlock();
          cv_ready_.notify_all();
        } catch (...) {
          std::lock_guard<std::mutex> lk(mu_);
          if (!error_) error_ = std::current_exception();
          cv_ready_.notify_all();
          return;
        }
      }
    }

    Batch decode_batch(int seq) {
      const auto& idx = batches_[size_t(seq)];
      Batch b;
      b.sequence_index = seq;
      Tensor first;
      for (size_t i = 0; i < idx.size(); ++i) {
        const Record& rec = owner_.manifest_.records[size_t(idx[i])];
        Tensor img = owner_.fetch(rec, stats_, mu_);
        if (i == 0) {
          first = img;
          b.images = Tensor::zeros({int(idx.size()), img.dim(0), img.dim(1), 3});
        } else if (!img.same_shape(first)) {
          throw std::runtime_error("loader: image size mismatch at " + owner_.manifest_.resolve(rec));
        }
        std::copy(img.data(), img.data() + img.size(),
                  b.images.data() + int64_t(i) * img.size());
        b.labels.push_back(owner_.manifest_.label_of(rec));
        b.paths.push_back(rec.path);
      }
      return b;
    }

    DataLoader& owner_;
    int epoch_;
    Clock::time_point start_;
    std::vector<std::vector<int>> batches_;
    std::vector<std::thread> threads_;

    std::mutex mu_;
    std::condition_variable cv_ready_, cv_space_;
    std::map<int, Batch> ready_;
    int next_to_claim_ = 0;
    int next_to_emit_ = 0;
    bool aborted_ = false;
    std::exception_ptr error_;
    EpochStats stats_;
  };

  std::unique_ptr<Epoch> start_epoch(const std::string& split, int epoch) {
    return std::make_unique<Epoch>(*this, split, epoch);
  }

  const LoaderConfig& config() const { return cfg_; }
  const DatasetManifest& manifest() const { return manifest_; }
  int64_t cache_bytes() const { return cache_bytes_; }

 private:
  Tensor fetch(const Record& rec, EpochStats& stats, std::mutex& stats_mu) {
    const std::string path = owner_path(rec);
    if (cfg_.cache) {
      std::lock_guard<std::mutex> lk(cache_mu_);
      auto it = cache_.find(path);
      if (it != cache_.end()) {
        std::lock_guard<std::mutex> slk(stats_mu);
        stats.cache_hits++;
        return it->second;
      }
    }
    auto t0 = std::chrono::steady_clock::now();
    if (cfg_.simulated_io_latency_ms > 0.0) {
      std::this_thread::sleep_for(
          std::chrono::duration<double, std::milli>(cfg_.simulated_io_latency_ms));
    }
    Tensor img = read_image(path);
    double decoded_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    {
      std::lock_guard<std::mutex> slk(stats_mu);
      stats.decode_ms += decoded_ms;
    }
    if (cfg_.cache) {
      std::lock_guard<std::mutex> lk(cache_mu_);
      if (cache_.find(path) == cache_.end()) {
        int64_t bytes = img.size() * int64_t(sizeof(float));
        if (cache_bytes_ + bytes > cfg_.cache_budget_bytes) {
          throw std::runtime_error("loader: cache budget of " +
                                   std::to_string(cfg_.cache_budget_bytes) +
                                   " bytes exceeded at " + path);
        }
        cache_bytes_ += bytes;
        cache_.emplace(path, img);
      }
    }
    return img;
  }

  std::string owner_path(const Record& rec) const { return manifest_.resolve(rec); }

  const DatasetManifest& manifest_;
  LoaderConfig cfg_;
  std::mutex cache_mu_;
  std::map<std::string, Tensor> cache_;
  int64_t cache_bytes_ = 0;
};

}  // namespace lret
