#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "bianet/checkpoint.hpp"
#include "bianet/loss.hpp"
#include "bianet/network.hpp"
#include "bianet/optim.hpp"
#include "bianet/rng.hpp"

namespace bianet {

struct TrainConfig {
  int batch_size = 8;
  int epochs = 25;
  int max_steps = 0;  // 0: run all epochs
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs between extra checkpoints; 0: final only
  LossWeights<float> weights;
  AdamConfig<float> adam;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    weights.validate();
  }
};

template <typename T>
struct TrainSample {
  Tensor<T> rgb;    // [1,3,H,W]
  Tensor<T> depth;  // [1,3,H,W]
  Tensor<T> gt;     // [1,1,H,W], binary
};

struct TrainResult {
  std::vector<float> losses;  // one entry per optimizer step
  std::filesystem::path checkpoint_path;
  std::filesystem::path loss_log_path;
};

// Deep-supervised training over a fixed in-memory dataset. Deterministic for
// a fixed config: the shuffle order is seeded and gradients accumulate in
// sample-index order.
inline TrainResult train_loop(const TrainConfig& cfg,
                              const std::vector<TrainSample<float>>& dataset,
                              BiANet<float>& model,
                              const std::filesystem::path& out_dir) {
  cfg.validate();
  if (dataset.empty()) throw ConfigError("train: empty dataset");
  std::filesystem::create_directories(out_dir);

  TrainResult result;
  result.loss_log_path = out_dir / "loss.csv";
  std::FILE* log = std::fopen(result.loss_log_path.string().c_str(), "w");
  if (!log) {
    throw IoError(IoCode::generic,
                  "train: cannot write " + result.loss_log_path.string());
  }
  std::fputs("step,epoch,total_loss\n", log);

  Adam<float> opt(cfg.adam);
  Rng shuffle_rng(cfg.seed ^ 0x5eedc0de);
  std::vector<int> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  int step = 0;
  bool done = false;
  for (int epoch = 1; epoch <= cfg.epochs && !done; ++epoch) {
    shuffle_rng.shuffle(order.begin(), order.end());
    for (std::size_t at = 0; at < order.size() && !done;
         at += cfg.batch_size) {
      const std::size_t end =
          std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
      const float inv = 1.0f / static_cast<float>(end - at);
      model.params().zero_grads();
      float batch_loss = 0.0f;
      for (std::size_t k = at; k < end; ++k) {
        const TrainSample<float>& s = dataset[order[k]];
        auto out = model.forward(s.rgb, s.depth);
        auto loss = scalar_mul(total_loss(out, s.gt, cfg.weights), inv);
        backward(loss);
        batch_loss += loss.values()[0];
      }
      opt.step(model.params());
      ++step;
      result.losses.push_back(batch_loss);
      std::fprintf(log, "%d,%d,%.6f\n", step, epoch,
                   static_cast<double>(batch_loss));
      if (cfg.max_steps > 0 && step >= cfg.max_steps) done = true;
    }
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      save_checkpoint(out_dir / ("model_epoch" + std::to_string(epoch) + ".ckpt"),
                      model.config(), model.params());
    }
  }
  std::fclose(log);

  result.checkpoint_path = out_dir / "model.ckpt";
  save_checkpoint(result.checkpoint_path, model.config(), model.params());
  return result;
}

}  // namespace bianet
