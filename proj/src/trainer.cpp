#include "almd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "almd/rng.hpp"

namespace almd {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error("train: learning_rate must be positive");
  if (batch_size < 1) throw Error("train: batch_size must be at least 1");
  if (epochs < 0) throw Error("train: epochs must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw Error("train: moment coefficients must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw Error("train: epsilon must be positive");
  if (weight_decay < 0.0) throw Error("train: weight_decay must be non-negative");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw Error("train: val_fraction must lie in [0, 1)");
}

DataSplit split_dataset(std::size_t n, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n)));
  DataSplit s;
  s.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

AdamOptimizer::AdamOptimizer(Eigen::Index n, const TrainConfig& cfg)
    : cfg_(cfg), m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {}

void AdamOptimizer::step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
  ++t_;
  m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
  v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  if (cfg_.weight_decay > 0.0) theta *= 1.0 - cfg_.learning_rate * cfg_.weight_decay;
  theta.array() -= cfg_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.epsilon);
}

namespace {

std::vector<CGFrame> gather(std::span<const CGFrame> frames, const std::vector<std::size_t>& idx) {
  std::vector<CGFrame> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(frames[i]);
  return out;
}

}  // namespace

TrainResult train(const PotentialParams& initial, std::span<const CGFrame> frames,
                  std::span<const int> types, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  initial.validate();
  if (frames.empty()) throw Error("train: dataset is empty");
  const DataSplit split = split_dataset(frames.size(), cfg.val_fraction, cfg.rng_seed);
  if (split.train.empty()) throw Error("train: validation split leaves no training frames");
  std::vector<CGFrame> train_set = gather(frames, split.train);
  const std::vector<CGFrame> val_set = gather(frames, split.val);

  PotentialParams p = initial;
  AdamOptimizer adam(p.theta.size(), cfg);

  auto record = [&](int epoch) {
    EpochRecord r;
    r.epoch = epoch;
    r.train_loss = fm_loss(p, train_set, types);
    r.val_loss = val_set.empty() ? std::numeric_limits<double>::quiet_NaN() : fm_loss(p, val_set, types);
    return r;
  };
  auto score = [](const EpochRecord& r) { return std::isnan(r.val_loss) ? r.train_loss : r.val_loss; };

  TrainResult result;
  result.history.push_back(record(0));
  result.params = p;
  double best = score(result.history.back());
  if (on_epoch) on_epoch(result.history.back());

  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng = make_rng(cfg.rng_seed, static_cast<std::uint64_t>(epoch));
    std::shuffle(train_set.begin(), train_set.end(), rng);
    for (std::size_t start = 0, batch = 0; start < train_set.size(); start += bs, ++batch) {
      const std::span<const CGFrame> mb(train_set.data() + start, std::min(bs, train_set.size() - start));
      auto where = [&] { return "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch); };
      LossGradient lg;
      try {
        lg = fm_loss_and_grad(p, mb, types);
      } catch (const NonFiniteError& e) {
        throw NonFiniteError("train: diverged at " + where() + ": " + e.what());
      }
      if (!std::isfinite(lg.loss) || !lg.grad.allFinite())
        throw NonFiniteError("train: non-finite loss at " + where());
      adam.step(p.theta, lg.grad);
    }
    EpochRecord r;
    try {
      r = record(epoch);
    } catch (const NonFiniteError& e) {
      throw NonFiniteError("train: diverged after epoch " + std::to_string(epoch) + ": " + e.what());
    }
    result.history.push_back(r);
    if (on_epoch) on_epoch(r);
    if (score(r) < best) {
      best = score(r);
      result.params = p;
      result.best_epoch = epoch;
    }
  }
  return result;
}

}  // namespace almd
