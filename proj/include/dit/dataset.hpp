#pragma once

// Procedural pair datasets on disk: <root>/pair_NNNNN/{src,tgt,gt,...}.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "dit/io.hpp"
#include "dit/sampling.hpp"

namespace dit {

struct GenOptions {
  std::string shape = "mixed";  // a shape name or "mixed"
  std::size_t pairs = 10;
  std::size_t points = 128;
  PairMode mode = PairMode::kClean;
  std::uint64_t seed = 0;
  double min_scale = 1.0;  // < 1 enables random anisotropic scaling
  PairOptions ranges;
  std::size_t workers = 1;
};

/// Independent stream per pair so that generation order and worker count do
/// not affect the output.
inline Rng pair_rng(std::uint64_t seed, std::size_t index, std::uint64_t salt = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(salt)};
  return Rng(seq);
}

inline PairSample generate_pair(const GenOptions& opt, std::size_t index) {
  Rng rng = pair_rng(opt.seed, index);
  Shape shape;
  if (opt.shape == "mixed") {
    std::uniform_int_distribution<std::size_t> pick(0, std::size(kShapeNames) - 1);
    shape = static_cast<Shape>(pick(rng));
  } else {
    shape = parse_shape(opt.shape);
  }
  PointCloud cloud = sample_shape(shape, opt.points, rng);
  if (opt.min_scale < 1.0) cloud = random_anisotropic_scale(cloud, opt.min_scale, rng);
  return make_pair(cloud, opt.mode, rng, opt.ranges);
}

inline std::string pair_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "pair_%05zu", index);
  return buf;
}

/// Runs fn(i) for i in [0, n) on `workers` threads; rethrows the first failure.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline void generate_dataset(const std::filesystem::path& root, const GenOptions& opt) {
  if (opt.shape != "mixed") parse_shape(opt.shape);
  std::filesystem::create_directories(root);
  parallel_for(opt.pairs, opt.workers, [&](std::size_t i) { io::write_pair(root / pair_name(i), generate_pair(opt, i)); });
}

inline std::vector<PairSample> load_dataset(const std::filesystem::path& root) {
  std::vector<PairSample> out;
  for (const auto& dir : io::list_pairs(root)) out.push_back(io::read_pair(dir));
  return out;
}

}  // namespace dit
