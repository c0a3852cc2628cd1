// Toy autoregressive next-token models with exact analytic gradients.
//
// Both models expose the same contract: the mean next-token NLL of a token
// sequence, and its gradient with respect to a flat parameter vector. The
// bigram model is a V x V logit table (row = current token); the MLP variant
// inserts one tanh hidden layer between the token embedding and the output
// logits.

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace toremi {

class Model {
 public:
  virtual ~Model() = default;

  virtual const char* kind() const = 0;
  virtual int vocab_size() const = 0;

  virtual std::span<const double> parameters() const = 0;
  virtual void set_parameters(std::span<const double> params) = 0;
  std::size_t parameter_count() const { return parameters().size(); }

  // Mean NLL over the len-1 predicted positions. Throws ValidationError on
  // sequences shorter than 2 or out-of-range token ids.
  virtual double sequence_loss(std::span<const int> tokens) const = 0;

  // Adds scale * d(sequence_loss)/d(params) into grad and returns the loss.
  virtual double accumulate_loss_gradient(std::span<const int> tokens, double scale,
                                          std::span<double> grad) const = 0;

  // params -= lr * grad
  virtual void apply_gradient(std::span<const double> grad, double lr) = 0;

  virtual std::unique_ptr<Model> clone() const = 0;
};

// Zero-initialized logit table: every row starts as the uniform distribution.
class BigramModel : public Model {
 public:
  explicit BigramModel(int vocab_size);

  const char* kind() const override { return "bigram"; }
  int vocab_size() const override { return vocab_; }
  std::span<const double> parameters() const override { return logits_; }
  void set_parameters(std::span<const double> params) override;
  double sequence_loss(std::span<const int> tokens) const override;
  double accumulate_loss_gradient(std::span<const int> tokens, double scale,
                                  std::span<double> grad) const override;
  void apply_gradient(std::span<const double> grad, double lr) override;
  std::unique_ptr<Model> clone() const override;

  double logit(int cur, int next) const;
  void set_logit(int cur, int next, double value);

 private:
  int vocab_;
  std::vector<double> logits_;  // row-major [cur * V + next]
};

// One-hidden-layer MLP: h = tanh(W1[cur] + b1), logits = W2^T h + b2.
// Parameters are flattened as [W1 (V*H), b1 (H), W2 (H*V), b2 (V)].
class MlpModel : public Model {
 public:
  MlpModel(int vocab_size, int hidden_size, std::uint64_t seed);

  const char* kind() const override { return "mlp"; }
  int vocab_size() const override { return vocab_; }
  int hidden_size() const { return hidden_; }
  std::span<const double> parameters() const override { return params_; }
  void set_parameters(std::span<const double> params) override;
  double sequence_loss(std::span<const int> tokens) const override;
  double accumulate_loss_gradient(std::span<const int> tokens, double scale,
                                  std::span<double> grad) const override;
  void apply_gradient(std::span<const double> grad, double lr) override;
  std::unique_ptr<Model> clone() const override;

 private:
  int vocab_;
  int hidden_;
  std::vector<double> params_;
};

// kind is "bigram" or "mlp"; hidden_size and seed only matter for the MLP.
std::unique_ptr<Model> make_model(const std::string& kind, int vocab_size,
                                  int hidden_size, std::uint64_t seed);

}  // namespace toremi
