#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lret/model.hpp"
#include "lret/tensor.hpp"

namespace lret {

/// CRC-64/ECMA-182 (polynomial 0x42F0E1EBA9EA3693, init 0, not reflected).
inline uint64_t crc64_ecma(const unsigned char* data, size_t len, uint64_t crc = 0) {
  static const auto table = [] {
    std::vector<uint64_t> t(256);
    for (uint64_t i = 0; i < 256; ++i) {
      uint64_t c = i << 56;
      for (int b = 0; b < 8; ++b) {
        c = (c & 0x8000000000000000ULL) ? (c << 1) ^ 0x42F0E1EBA9EA3693ULL : c << 1;
      }
      t[size_t(i)] = c;
    }
    return t;
  }();
  for (size_t i = 0; i < len; ++i) {
    crc = (crc << 8) ^ table[size_t(((crc >> 56) ^ data[i]) & 0xFF)];
  }
  return crc;
}

/// Everything needed to resume or serve a model: spec, all parameter tensors
/// (including batch-norm running stats), optimizer moments, training
/// position, and the data-pipeline metadata that shaped the inputs.
struct Checkpoint {
  ModelSpec spec;
  uint64_t model_seed = 0;
  int epoch = 0;
  double best_val_accuracy = 0.0;
  nlohmann::json pipeline_meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return &t;
    }
    return nullptr;
  }
};

namespace detail {

constexpr uint32_t kCheckpointVersion = 1;

template <typename T>
void put_le(std::string& out, T v) {
  for (size_t i = 0; i < sizeof(T); ++i) out.push_back(char((uint64_t(v) >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const std::string& buf, size_t off) {
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= uint64_t(uint8_t(buf[off + i])) << (8 * i);
  return T(v);
}

}  // namespace detail

/// File layout: "LRET" | u32 version | u64 header length | JSON header |
/// raw float32 little-endian payloads | trailing CRC-64/ECMA checksum over
/// everything before it. Writes are atomic (temp file + rename).
inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["model"] = ckpt.spec;
  header["model_seed"] = ckpt.model_seed;
  header["epoch"] = ckpt.epoch;
  header["best_val_accuracy"] = ckpt.best_val_accuracy;
  header["pipeline"] = ckpt.pipeline_meta;
  nlohmann::json dir = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    uint64_t bytes = uint64_t(t.size()) * 4;
    dir.push_back({{"name", name},
                   {"shape", t.shape()},
                   {"dtype", "f32"},
                   {"offset", offset},
                   {"length", bytes}});
    offset += bytes;
  }
  header["tensors"] = dir;
  std::string hj = header.dump();

  std::string buf;
  buf += "LRET";
  detail::put_le<uint32_t>(buf, detail::kCheckpointVersion);
  detail::put_le<uint64_t>(buf, hj.size());
  buf += hj;
  static_assert(sizeof(float) == 4);
  for (const auto& [name, t] : ckpt.tensors) {
    for (int64_t i = 0; i < t.size(); ++i) {
      uint32_t bits;
      float v = t[i];
      std::memcpy(&bits, &v, 4);
      detail::put_le<uint32_t>(buf, bits);
    }
  }
  uint64_t crc = crc64_ecma(reinterpret_cast<const unsigned char*>(buf.data()), buf.size());
  detail::put_le<uint64_t>(buf, crc);

  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + tmp);
    out.write(buf.data(), std::streamsize(buf.size()));
    if (!out) throw std::runtime_error("checkpoint: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), {});
  if (buf.size() < 4 + 4 + 8 + 8) throw std::runtime_error("checkpoint: truncated file " + path);
  if (buf.compare(0, 4, "LRET") != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  uint32_t version = detail::get_le<uint32_t>(buf, 4);
  if (version != detail::kCheckpointVersion) {
    throw std::runtime_error("checkpoint: version mismatch: file has " + std::to_string(version) +
                             ", expected " + std::to_string(detail::kCheckpointVersion));
  }
  uint64_t stored_crc = detail::get_le<uint64_t>(buf, buf.size() - 8);
  uint64_t crc =
      crc64_ecma(reinterpret_cast<const unsigned char*>(buf.data()), buf.size() - 8);
  if (crc != stored_crc) throw std::runtime_error("checkpoint: digest mismatch in " + path);

  uint64_t hlen = detail::get_le<uint64_t>(buf, 8);
  size_t hstart = 16;
  if (hstart + hlen + 8 > buf.size()) {
    throw std::runtime_error("checkpoint: truncated header in " + path);
  }
  nlohmann::json header = nlohmann::json::parse(buf.substr(hstart, hlen));
  Checkpoint ckpt;
  ckpt.spec = header.at("model").get<ModelSpec>();
  ckpt.model_seed = header.at("model_seed").get<uint64_t>();
  ckpt.epoch = header.at("epoch").get<int>();
  ckpt.best_val_accuracy = header.at("best_val_accuracy").get<double>();
  ckpt.pipeline_meta = header.at("pipeline");
  size_t payload = hstart + hlen;
  for (const auto& e : header.at("tensors")) {
    std::vector<int> shape = e.at("shape").get<std::vector<int>>();
    uint64_t off = e.at("offset").get<uint64_t>();
    uint64_t len = e.at("length").get<uint64_t>();
    if (e.at("dtype").get<std::string>() != "f32") {
      throw std::runtime_error("checkpoint: unsupported dtype in " + path);
    }
    if (payload + off + len + 8 > buf.size()) {
      throw std::runtime_error("checkpoint: truncated payload in " + path);
    }
    Tensor t = Tensor::zeros(shape);
    if (uint64_t(t.size()) * 4 != len) {
      throw std::runtime_error("checkpoint: tensor length mismatch in " + path);
    }
    for (int64_t i = 0; i < t.size(); ++i) {
      uint32_t bits = detail::get_le<uint32_t>(buf, payload + off + uint64_t(i) * 4);
      float v;
      std::memcpy(&v, &bits, 4);
      t[i] = v;
    }
    ckpt.tensors.push_back({e.at("name").get<std::string>(), std::move(t)});
  }
  return ckpt;
}

/// Copies every checkpointed "param:" tensor into the model's parameter
/// store (trainables and running stats alike).
inline void restore_params(Model& model, const Checkpoint& ckpt) {
  model.params().for_each([&](Param& p) {
    const Tensor* t = ckpt.find("param:" + p.name);
    if (!t) throw std::runtime_error("checkpoint: missing tensor for parameter " + p.name);
    if (!t->same_shape(p.value)) {
      throw std::runtime_error("checkpoint: shape mismatch for parameter " + p.name);
    }
    p.value = *t;
  });
}

inline Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model m(ckpt.spec, ckpt.model_seed);
  restore_params(m, ckpt);
  return m;
}

}  // namespace lret
