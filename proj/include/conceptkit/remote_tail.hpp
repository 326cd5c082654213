#pragma once

// Client side of the extractor's JSON-lines tail protocol:
//   -> {"op":"tail","layer":L,"hidden":[...]}
//   <- {"logits":[...]}   or   {"error":"..."}
// One request is in flight per connection; up to max_in_flight connections
// are opened on demand and reused.

#include <condition_variable>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "conceptkit/tail.hpp"

namespace conceptkit {

class LineChannel {
 public:
  virtual ~LineChannel() = default;
  // Sends one line (newline appended) and returns the next line received.
  virtual std::string round_trip(const std::string& line) = 0;
};

// Opens a channel for "tcp://host:port" or "exec:<command>".
std::unique_ptr<LineChannel> open_channel(const std::string& endpoint);

std::string encode_tail_request(int layer, const Vector& hidden);
Vector decode_tail_response(const std::string& line);

class RemoteTail final : public Tail {
 public:
  RemoteTail(std::string endpoint, int layer, unsigned max_in_flight);
  ~RemoteTail() override;

  Vector forward(const Vector& hidden) const override;
  Eigen::Index hidden_dim() const override { return -1; }
  Eigen::Index vocab_size() const override { return -1; }

 private:
  std::unique_ptr<LineChannel> acquire() const;
  void release(std::unique_ptr<LineChannel> channel) const;

  std::string endpoint_;
  int layer_;
  unsigned max_in_flight_;
  mutable std::mutex mutex_;
  mutable std::condition_variable available_;
  mutable std::vector<std::unique_ptr<LineChannel>> idle_;
  mutable unsigned open_ = 0;
};

}  // namespace conceptkit
