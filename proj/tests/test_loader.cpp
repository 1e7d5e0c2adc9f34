#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>
#include <thread>

#include "lret/loader.hpp"
#include "lret/synth.hpp"

using namespace lret;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("lret_loader_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

DatasetManifest make_dataset(const std::string& tag, int classes, int per_class, int patch) {
  SynthSpec spec;
  spec.classes = classes;
  spec.per_class = per_class;
  spec.patch = patch;
  spec.seed = 17;
  return synth_generate(spec, temp_dir(tag).string());
}

struct Digest {
  std::vector<int> labels;
  std::vector<float> pixels;
  bool operator==(const Digest&) const = default;
};

Digest drain(DataLoader& loader, const std::string& split, int epoch) {
  Digest d;
  auto ep = loader.start_epoch(split, epoch);
  while (auto b = ep->next()) {
    d.labels.insert(d.labels.end(), b->labels.begin(), b->labels.end());
    for (int64_t i = 0; i < b->images.size(); i += 97) d.pixels.push_back(b->images[i]);
  }
  return d;
}

}  // namespace

TEST_CASE("every record appears exactly once per epoch, short final batch kept") {
  DatasetManifest m = make_dataset("once", 3, 7, 32);
  LoaderConfig cfg;
  cfg.batch_size = 4;
  DataLoader loader(m, cfg);
  auto ep = loader.start_epoch("train", 0);
  std::multiset<std::string> seen;
  int total = 0, last = 0;
  while (auto b = ep->next()) {
    for (const auto& p : b->paths) seen.insert(p);
    total += int(b->labels.size());
    last = int(b->labels.size());
  }
  auto train = m.split_indices("train");
  REQUIRE(total == int(train.size()));
  REQUIRE(seen.size() == train.size());
  for (int i : train) REQUIRE(seen.count(m.records[size_t(i)].path) == 1);
  REQUIRE(last == int(train.size()) % 4);
}

TEST_CASE("epoch order reshuffles by epoch but is stable per (seed, epoch)") {
  DatasetManifest m = make_dataset("order", 3, 10, 32);
  LoaderConfig cfg;
  cfg.shuffle_seed = 5;
  DataLoader loader(m, cfg);
  auto e0 = loader.epoch_order("train", 0);
  auto e1 = loader.epoch_order("train", 1);
  REQUIRE(e0 != e1);
  REQUIRE(e0 == loader.epoch_order("train", 0));
}

TEST_CASE("batch stream is identical across worker counts and cache settings") {
  DatasetManifest m = make_dataset("det", 3, 8, 32);
  std::vector<Digest> digests;
  for (int workers : {1, 2, 4}) {
    for (bool cache : {false, true}) {
      LoaderConfig cfg;
      cfg.batch_size = 5;
      cfg.shuffle_seed = 9;
      cfg.decode_workers = workers;
      cfg.cache = cache;
      cfg.prefetch_depth = 3;
      DataLoader loader(m, cfg);
      digests.push_back(drain(loader, "train", 2));
    }
  }
  for (size_t i = 1; i < digests.size(); ++i) REQUIRE(digests[i] == digests[0]);
}

TEST_CASE("cached epochs reuse decoded tensors") {
  DatasetManifest m = make_dataset("cache", 2, 8, 32);
  LoaderConfig cfg;
  cfg.batch_size = 4;
  DataLoader loader(m, cfg);
  auto e1 = loader.start_epoch("train", 0);
  while (e1->next()) {
  }
  REQUIRE(e1->stats().cache_hits == 0);
  REQUIRE(loader.cache_bytes() > 0);
  auto e2 = loader.start_epoch("train", 1);
  while (e2->next()) {
  }
  REQUIRE(e2->stats().cache_hits == int64_t(m.split_indices("train").size()));
  REQUIRE(e2->stats().decode_ms == 0.0);
}

TEST_CASE("backpressure bounds the reorder buffer under a slow consumer") {
  DatasetManifest m = make_dataset("bp", 2, 12, 32);
  LoaderConfig cfg;
  cfg.batch_size = 2;
  cfg.decode_workers = 4;
  cfg.prefetch_depth = 2;
  DataLoader loader(m, cfg);
  auto ep = loader.start_epoch("train", 0);
  while (auto b = ep->next()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(3));
  }
  REQUIRE(ep->stats().max_buffered <= 2);
  REQUIRE(ep->stats().max_buffered >= 1);
}

TEST_CASE("simulated latency makes the cached second epoch much faster") {
  DatasetManifest m = make_dataset("timing", 2, 20, 32);
  LoaderConfig cfg;
  cfg.batch_size = 4;
  cfg.simulated_io_latency_ms = 5.0;
  DataLoader loader(m, cfg);
  auto e1 = loader.start_epoch("train", 0);
  while (e1->next()) {
  }
  auto e2 = loader.start_epoch("train", 1);
  while (e2->next()) {
  }
  REQUIRE(e2->stats().wall_ms < 0.5 * e1->stats().wall_ms);
  REQUIRE(e1->stats().wall_ms >= e1->stats().wait_ms);
}

TEST_CASE("unreadable images fail with the offending path") {
  DatasetManifest m = make_dataset("bad", 2, 3, 32);
  const Record& victim = m.records[size_t(m.split_indices("train")[0])];
  fs::path broken = fs::path(m.base_dir) / victim.path;
  std::ofstream(broken, std::ios::trunc) << "P6\n9999 9999\n255\nnope";
  LoaderConfig cfg;
  cfg.batch_size = 2;
  DataLoader loader(m, cfg);
  auto ep = loader.start_epoch("train", 0);
  REQUIRE_THROWS_WITH(
      [&] {
        while (ep->next()) {
        }
      }(),
      Catch::Matchers::ContainsSubstring(victim.path));
}

TEST_CASE("exceeding the cache budget is an error, not an eviction") {
  DatasetManifest m = make_dataset("budget", 2, 4, 32);
  LoaderConfig cfg;
  cfg.batch_size = 2;
  cfg.cache_budget_bytes = 32 * 32 * 3 * 4 * 3;  // room for three images only
  DataLoader loader(m, cfg);
  auto ep = loader.start_epoch("train", 0);
  REQUIRE_THROWS_WITH(
      [&] {
        while (ep->next()) {
        }
      }(),
      Catch::Matchers::ContainsSubstring("cache budget"));
}

TEST_CASE("loader config validation") {
  LoaderConfig cfg;
  cfg.prefetch_depth = 0;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.prefetch_depth = 1;
  cfg.decode_workers = 0;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
}
