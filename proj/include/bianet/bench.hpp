#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <vector>

#include "bianet/network.hpp"
#include "bianet/rng.hpp"

namespace bianet {

struct BenchResult {
  int iters = 0;
  double mean_s = 0, stddev_s = 0, p50_s = 0, p95_s = 0;
  double images_per_sec = 0;
};

// Wall-clock over repeated single-image forward passes at the configured
// input size.
inline BenchResult bench_throughput(const NetConfig& cfg, int warmup,
                                    int iters, std::uint64_t seed = 0,
                                    int threads = 1) {
  if (iters < 1) throw ConfigError("bench: iters must be >= 1");
  if (warmup < 0) throw ConfigError("bench: warmup must be >= 0");
  if (threads < 1) throw ConfigError("bench: threads must be >= 1");

  BiANet<float> model(cfg, seed);
  Rng rng(seed + 1);
  auto image = [&]() {
    std::vector<float> v(static_cast<std::size_t>(3) * cfg.input_h * cfg.input_w);
    for (auto& x : v) x = static_cast<float>(rng.uniform());
    return Tensor<float>::from({1, 3, cfg.input_h, cfg.input_w}, std::move(v));
  };
  const auto rgb = image();
  const auto depth = image();

  const int prev_threads = compute_threads();
  compute_threads() = threads;
  NoGradGuard off;
  std::vector<double> lat;
  lat.reserve(iters);
  for (int i = 0; i < warmup + iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    auto out = model.forward(rgb, depth);
    const auto t1 = std::chrono::steady_clock::now();
    if (i >= warmup) {
      lat.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
  }
  compute_threads() = prev_threads;

  BenchResult r;
  r.iters = iters;
  for (double v : lat) r.mean_s += v;
  r.mean_s /= lat.size();
  for (double v : lat) r.stddev_s += (v - r.mean_s) * (v - r.mean_s);
  r.stddev_s = std::sqrt(r.stddev_s / lat.size());
  std::sort(lat.begin(), lat.end());
  auto rank = [&](double q) {
    const auto idx = static_cast<std::size_t>(
        std::clamp(std::ceil(q * lat.size()) - 1.0, 0.0,
                   static_cast<double>(lat.size() - 1)));
    return lat[idx];
  };
  r.p50_s = rank(0.50);
  r.p95_s = rank(0.95);
  r.images_per_sec = 1.0 / r.mean_s;
  return r;
}

}  // namespace bianet
