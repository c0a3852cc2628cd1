#include "toremi/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "toremi/common.hpp"
#include "toremi/seeds.hpp"

namespace toremi {

namespace {

void check_sequence(std::span<const int> tokens, int vocab) {
  if (tokens.size() < 2)
    throw ValidationError("token sequence must have at least 2 tokens, got " +
                          std::to_string(tokens.size()));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= vocab)
      throw ValidationError("token id " + std::to_string(tokens[i]) + " at position " +
                            std::to_string(i) + " is outside vocab of size " +
                            std::to_string(vocab));
  }
}

// log(sum(exp(z))) with max subtraction; also fills probs when non-null.
double log_sum_exp(std::span<const double> z, std::vector<double>* probs) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - m);
  const double lse = m + std::log(sum);
  if (probs) {
    probs->resize(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) (*probs)[j] = std::exp(z[j] - lse);
  }
  return lse;
}

}  // namespace

// ---------------------------------------------------------------------------
// BigramModel

BigramModel::BigramModel(int vocab_size) : vocab_(vocab_size) {
  if (vocab_size < 2) throw ValidationError("vocab_size must be at least 2");
  logits_.assign(static_cast<std::size_t>(vocab_size) * vocab_size, 0.0);
}

void BigramModel::set_parameters(std::span<const double> params) {
  if (params.size() != logits_.size())
    throw ValidationError("parameter count mismatch for bigram model");
  std::copy(params.begin(), params.end(), logits_.begin());
}

double BigramModel::logit(int cur, int next) const {
  return logits_[static_cast<std::size_t>(cur) * vocab_ + next];
}

void BigramModel::set_logit(int cur, int next, double value) {
  logits_[static_cast<std::size_t>(cur) * vocab_ + next] = value;
}

double BigramModel::sequence_loss(std::span<const int> tokens) const {
  check_sequence(tokens, vocab_);
  const std::size_t positions = tokens.size() - 1;
  double nll = 0.0;
  for (std::size_t t = 0; t < positions; ++t) {
    const int cur = tokens[t];
    const int next = tokens[t + 1];
    std::span<const double> row(logits_.data() + static_cast<std::size_t>(cur) * vocab_,
                                static_cast<std::size_t>(vocab_));
    nll += log_sum_exp(row, nullptr) - row[static_cast<std::size_t>(next)];
  }
  return nll / static_cast<double>(positions);
}

double BigramModel::accumulate_loss_gradient(std::span<const int> tokens, double scale,
                                             std::span<double> grad) const {
  check_sequence(tokens, vocab_);
  if (grad.size() != logits_.size())
    throw ValidationError("gradient buffer size mismatch for bigram model");
  const std::size_t positions = tokens.size() - 1;
  const double inv_t = 1.0 / static_cast<double>(positions);
  std::vector<double> probs;
  double nll = 0.0;
  for (std::size_t t = 0; t < positions; ++t) {
    const int cur = tokens[t];
    const int next = tokens[t + 1];
    std::span<const double> row(logits_.data() + static_cast<std::size_t>(cur) * vocab_,
                                static_cast<std::size_t>(vocab_));
    const double lse = log_sum_exp(row, &probs);
    nll += lse - row[static_cast<std::size_t>(next)];
    double* grow = grad.data() + static_cast<std::size_t>(cur) * vocab_;
    const double w = scale * inv_t;
    for (int j = 0; j < vocab_; ++j) grow[j] += w * probs[static_cast<std::size_t>(j)];
    grow[next] -= w;
  }
  return nll * inv_t;
}

void BigramModel::apply_gradient(std::span<const double> grad, double lr) {
  for (std::size_t i = 0; i < logits_.size(); ++i) logits_[i] -= lr * grad[i];
}

std::unique_ptr<Model> BigramModel::clone() const {
  return std::make_unique<BigramModel>(*this);
}

// ---------------------------------------------------------------------------
// MlpModel

MlpModel::MlpModel(int vocab_size, int hidden_size, std::uint64_t seed)
    : vocab_(vocab_size), hidden_(hidden_size) {
  if (vocab_size < 2) throw ValidationError("vocab_size must be at least 2");
  if (hidden_size < 1) throw ValidationError("hidden_size must be positive");
  const std::size_t v = static_cast<std::size_t>(vocab_size);
  const std::size_t h = static_cast<std::size_t>(hidden_size);
  params_.assign(v * h + h + h * v + v, 0.0);
  std::mt19937_64 rng(seed);
  for (double& p : params_) p = 0.08 * (2.0 * next_unit(rng) - 1.0);
}

void MlpModel::set_parameters(std::span<const double> params) {
  if (params.size() != params_.size())
    throw ValidationError("parameter count mismatch for mlp model");
  std::copy(params.begin(), params.end(), params_.begin());
}

double MlpModel::sequence_loss(std::span<const int> tokens) const {
  check_sequence(tokens, vocab_);
  const std::size_t v = static_cast<std::size_t>(vocab_);
  const std::size_t h = static_cast<std::size_t>(hidden_);
  const double* w1 = params_.data();           // V x H
  const double* b1 = w1 + v * h;               // H
  const double* w2 = b1 + h;                   // H x V
  const double* b2 = w2 + h * v;               // V

  const std::size_t positions = tokens.size() - 1;
  std::vector<double> hidden(h), z(v);
  double nll = 0.0;
  for (std::size_t t = 0; t < positions; ++t) {
    const std::size_t cur = static_cast<std::size_t>(tokens[t]);
    const std::size_t next = static_cast<std::size_t>(tokens[t + 1]);
    for (std::size_t k = 0; k < h; ++k) hidden[k] = std::tanh(w1[cur * h + k] + b1[k]);
    for (std::size_t j = 0; j < v; ++j) {
      double acc = b2[j];
      for (std::size_t k = 0; k < h; ++k) acc += w2[k * v + j] * hidden[k];
      z[j] = acc;
    }
    nll += log_sum_exp(z, nullptr) - z[next];
  }
  return nll / static_cast<double>(positions);
}

double MlpModel::accumulate_loss_gradient(std::span<const int> tokens, double scale,
                                          std::span<double> grad) const {
  check_sequence(tokens, vocab_);
  if (grad.size() != params_.size())
    throw ValidationError("gradient buffer size mismatch for mlp model");
  const std::size_t v = static_cast<std::size_t>(vocab_);
  const std::size_t h = static_cast<std::size_t>(hidden_);
  const double* w1 = params_.data();
  const double* b1 = w1 + v * h;
  const double* w2 = b1 + h;
  const double* b2 = w2 + h * v;
  double* g_w1 = grad.data();
  double* g_b1 = g_w1 + v * h;
  double* g_w2 = g_b1 + h;
  double* g_b2 = g_w2 + h * v;

  const std::size_t positions = tokens.size() - 1;
  const double w = scale / static_cast<double>(positions);
  std::vector<double> hidden(h), z(v), probs, dz(v), dh(h);
  double nll = 0.0;
  for (std::size_t t = 0; t < positions; ++t) {
    const std::size_t cur = static_cast<std::size_t>(tokens[t]);
    const std::size_t next = static_cast<std::size_t>(tokens[t + 1]);
    for (std::size_t k = 0; k < h; ++k) hidden[k] = std::tanh(w1[cur * h + k] + b1[k]);
    for (std::size_t j = 0; j < v; ++j) {
      double acc = b2[j];
      for (std::size_t k = 0; k < h; ++k) acc += w2[k * v + j] * hidden[k];
      z[j] = acc;
    }
    const double lse = log_sum_exp(z, &probs);
    nll += lse - z[next];

    for (std::size_t j = 0; j < v; ++j) dz[j] = w * probs[j];
    dz[next] -= w;
    for (std::size_t j = 0; j < v; ++j) g_b2[j] += dz[j];
    for (std::size_t k = 0; k < h; ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j < v; ++j) {
        g_w2[k * v + j] += hidden[k] * dz[j];
        acc += w2[k * v + j] * dz[j];
      }
      dh[k] = acc * (1.0 - hidden[k] * hidden[k]);
    }
    for (std::size_t k = 0; k < h; ++k) {
      g_w1[cur * h + k] += dh[k];
      g_b1[k] += dh[k];
    }
  }
  return nll / static_cast<double>(positions);
}

void MlpModel::apply_gradient(std::span<const double> grad, double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i] -= lr * grad[i];
}

std::unique_ptr<Model> MlpModel::clone() const {
  return std::make_unique<MlpModel>(*this);
}

std::unique_ptr<Model> make_model(const std::string& kind, int vocab_size,
                                  int hidden_size, std::uint64_t seed) {
  if (kind == "bigram") return std::make_unique<BigramModel>(vocab_size);
  if (kind == "mlp") return std::make_unique<MlpModel>(vocab_size, hidden_size, seed);
  throw ValidationError("unknown model kind: '" + kind + "'");
}

}  // namespace toremi
