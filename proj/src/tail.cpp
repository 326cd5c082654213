#include "conceptkit/tail.hpp"

#include "conceptkit/error.hpp"
#include "conceptkit/remote_tail.hpp"

namespace conceptkit {

AffineTail::AffineTail(Matrix w, Vector b) : w_(std::move(w)), b_(std::move(b)) {
  if (w_.rows() != b_.size())
    throw Error(ErrorKind::shape_mismatch,
                "affine tail: W has " + std::to_string(w_.rows()) + " rows but b has " +
                    std::to_string(b_.size()) + " entries");
}

Vector AffineTail::forward(const Vector& hidden) const {
  if (hidden.size() != w_.cols())
    throw Error(ErrorKind::shape_mismatch,
                "affine tail expects hidden size " + std::to_string(w_.cols()) + ", got " +
                    std::to_string(hidden.size()));
  return w_ * hidden + b_;
}

std::unique_ptr<Tail> make_tail(const TailSpec& spec) {
  switch (spec.kind) {
    case TailSpec::Kind::affine_surrogate:
      if (spec.w_tail.empty() || spec.b_tail.empty())
        throw Error(ErrorKind::missing_tail, "affine tail needs W_tail and b_tail files");
      return std::make_unique<AffineTail>(load_matrix(spec.w_tail), load_vector(spec.b_tail));
    case TailSpec::Kind::remote:
      if (spec.endpoint.empty())
        throw Error(ErrorKind::missing_tail, "remote tail needs an endpoint");
      return std::make_unique<RemoteTail>(spec.endpoint, spec.layer, spec.max_in_flight);
  }
  throw Error(ErrorKind::missing_tail, "unknown tail kind");
}

}  // namespace conceptkit
