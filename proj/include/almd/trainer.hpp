#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "almd/cgnet.hpp"

namespace almd {

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 16;
  int epochs = 50;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW); 0 gives plain Adam
  std::uint64_t rng_seed = 0;
  double val_fraction = 0.1;

  void validate() const;
};

/// Adam with bias correction and optional decoupled weight decay.
class AdamOptimizer {
 public:
  AdamOptimizer(Eigen::Index n, const TrainConfig& cfg);
  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad);
  long steps() const { return t_; }

 private:
  TrainConfig cfg_;
  Eigen::VectorXd m_, v_;
  long t_ = 0;
};

struct EpochRecord {
  int epoch = 0;  // 0 is the untrained starting point
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN without a validation split
};

struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// floor(val_fraction * n) frames, chosen by a seeded shuffle, go to
/// validation; both index lists come back sorted.
DataSplit split_dataset(std::size_t n, double val_fraction, std::uint64_t seed);

struct TrainResult {
  PotentialParams params;  // best validation loss (training loss without a split)
  int best_epoch = 0;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Minibatch Adam on fm_loss. Deterministic for a given rng_seed: the split
/// uses substream 0 and epoch e shuffles with substream e. Losses in the
/// history are full-set evaluations after each epoch. Throws NonFiniteError
/// naming the epoch and batch if the loss or gradient stops being finite.
TrainResult train(const PotentialParams& initial, std::span<const CGFrame> frames,
                  std::span<const int> types, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace almd
