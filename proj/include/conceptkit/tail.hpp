#pragma once

// The part of the model downstream of layer L, viewed as a map from a
// final-prompt-token hidden state to first-generated-token logits.

#include <filesystem>
#include <memory>
#include <string>

#include "conceptkit/npy.hpp"

namespace conceptkit {

class Tail {
 public:
  virtual ~Tail() = default;

  // Must be safe to call concurrently.
  virtual Vector forward(const Vector& hidden) const = 0;

  // -1 when not known ahead of the first request.
  virtual Eigen::Index hidden_dim() const = 0;
  virtual Eigen::Index vocab_size() const = 0;
};

// z = W h + b, W is vocab x d.
class AffineTail final : public Tail {
 public:
  AffineTail(Matrix w, Vector b);

  Vector forward(const Vector& hidden) const override;
  Eigen::Index hidden_dim() const override { return w_.cols(); }
  Eigen::Index vocab_size() const override { return w_.rows(); }

  const Matrix& weights() const { return w_; }
  const Vector& bias() const { return b_; }

 private:
  Matrix w_;
  Vector b_;
};

struct TailSpec {
  enum class Kind { affine_surrogate, remote };
  Kind kind = Kind::affine_surrogate;
  std::filesystem::path w_tail;
  std::filesystem::path b_tail;
  // "tcp://host:port" or "exec:<shell command>" speaking JSON lines
  std::string endpoint;
  int layer = 0;
  unsigned max_in_flight = 4;
};

std::unique_ptr<Tail> make_tail(const TailSpec& spec);

}  // namespace conceptkit
