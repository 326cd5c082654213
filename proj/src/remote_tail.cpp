#include "conceptkit/remote_tail.hpp"

#include <netdb.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include <nlohmann/json.hpp>

#include "conceptkit/error.hpp"

namespace conceptkit {
namespace {

class FdLineReader {
 public:
  explicit FdLineReader(int fd) : fd_(fd) {}

  std::string read_line() {
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      char chunk[4096];
      const ssize_t got = ::read(fd_, chunk, sizeof chunk);
      if (got < 0 && errno == EINTR) continue;
      if (got <= 0) throw Error(ErrorKind::remote, "tail connection closed by peer");
      buffer_.append(chunk, static_cast<std::size_t>(got));
    }
  }

 private:
  int fd_;
  std::string buffer_;
};

void write_all(int fd, const std::string& data) {
  std::size_t done = 0;
  while (done < data.size()) {
    const ssize_t n = ::write(fd, data.data() + done, data.size() - done);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw Error(ErrorKind::remote, "failed to write tail request");
    done += static_cast<std::size_t>(n);
  }
}

class TcpChannel final : public LineChannel {
 public:
  TcpChannel(const std::string& host, const std::string& port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0)
      throw Error(ErrorKind::remote, "cannot resolve " + host + ": " + gai_strerror(rc));
    for (addrinfo* a = res; a; a = a->ai_next) {
      fd_ = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
      if (fd_ < 0) continue;
      if (::connect(fd_, a->ai_addr, a->ai_addrlen) == 0) break;
      ::close(fd_);
      fd_ = -1;
    }
    ::freeaddrinfo(res);
    if (fd_ < 0) throw Error(ErrorKind::remote, "cannot connect to " + host + ":" + port);
    reader_ = std::make_unique<FdLineReader>(fd_);
  }
  ~TcpChannel() override {
    if (fd_ >= 0) ::close(fd_);
  }

  std::string round_trip(const std::string& line) override {
    write_all(fd_, line + "\n");
    return reader_->read_line();
  }

 private:
  int fd_ = -1;
  std::unique_ptr<FdLineReader> reader_;
};

class ProcessChannel final : public LineChannel {
 public:
  explicit ProcessChannel(const std::string& command) {
    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0 || ::pipe(from_child) != 0)
      throw Error(ErrorKind::remote, "pipe() failed");
    pid_ = ::fork();
    if (pid_ < 0) throw Error(ErrorKind::remote, "fork() failed");
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    in_ = to_child[1];
    out_ = from_child[0];
    reader_ = std::make_unique<FdLineReader>(out_);
  }
  ~ProcessChannel() override {
    ::close(in_);  // EOF asks the responder to exit
    ::close(out_);
    int status = 0;
    ::waitpid(pid_, &status, 0);
  }

  std::string round_trip(const std::string& line) override {
    write_all(in_, line + "\n");
    return reader_->read_line();
  }

 private:
  pid_t pid_ = -1;
  int in_ = -1;
  int out_ = -1;
  std::unique_ptr<FdLineReader> reader_;
};

}  // namespace

std::unique_ptr<LineChannel> open_channel(const std::string& endpoint) {
  // A responder that dies mid-write must surface as an error, not SIGPIPE.
  ::signal(SIGPIPE, SIG_IGN);
  if (endpoint.rfind("tcp://", 0) == 0) {
    const std::string rest = endpoint.substr(6);
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == rest.size())
      throw Error(ErrorKind::invalid_argument, "tcp endpoint must be tcp://host:port");
    return std::make_unique<TcpChannel>(rest.substr(0, colon), rest.substr(colon + 1));
  }
  if (endpoint.rfind("exec:", 0) == 0) return std::make_unique<ProcessChannel>(endpoint.substr(5));
  throw Error(ErrorKind::invalid_argument, "unsupported tail endpoint \"" + endpoint + "\"");
}

std::string encode_tail_request(int layer, const Vector& hidden) {
  nlohmann::json req;
  req["op"] = "tail";
  req["layer"] = layer;
  req["hidden"] = std::vector<double>(hidden.data(), hidden.data() + hidden.size());
  return req.dump();
}

Vector decode_tail_response(const std::string& line) {
  nlohmann::json resp;
  try {
    resp = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error&) {
    throw Error(ErrorKind::remote, "tail response is not JSON: " + line.substr(0, 120));
  }
  if (resp.contains("error"))
    throw Error(ErrorKind::remote, "tail error: " + resp["error"].dump());
  if (!resp.contains("logits") || !resp["logits"].is_array())
    throw Error(ErrorKind::remote, "tail response lacks \"logits\"");
  const auto& arr = resp["logits"];
  Vector logits(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) throw Error(ErrorKind::remote, "non-numeric logit in response");
    logits(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
  }
  return logits;
}

RemoteTail::RemoteTail(std::string endpoint, int layer, unsigned max_in_flight)
    : endpoint_(std::move(endpoint)), layer_(layer), max_in_flight_(std::max(1u, max_in_flight)) {}

RemoteTail::~RemoteTail() = default;

std::unique_ptr<LineChannel> RemoteTail::acquire() const {
  std::unique_lock lock(mutex_);
  available_.wait(lock, [&] { return !idle_.empty() || open_ < max_in_flight_; });
  if (!idle_.empty()) {
    auto ch = std::move(idle_.back());
    idle_.pop_back();
    return ch;
  }
  ++open_;
  lock.unlock();
  try {
    return open_channel(endpoint_);
  } catch (...) {
    std::lock_guard relock(mutex_);
    --open_;
    available_.notify_one();
    throw;
  }
}

void RemoteTail::release(std::unique_ptr<LineChannel> channel) const {
  std::lock_guard lock(mutex_);
  if (channel) idle_.push_back(std::move(channel));
  else --open_;
  available_.notify_one();
}

Vector RemoteTail::forward(const Vector& hidden) const {
  auto channel = acquire();
  try {
    const std::string reply = channel->round_trip(encode_tail_request(layer_, hidden));
    release(std::move(channel));
    return decode_tail_response(reply);
  } catch (const Error& e) {
    // A broken connection is dropped; an error reply leaves it usable.
    if (e.kind() == ErrorKind::remote && channel) release(nullptr);
    throw;
  }
}

}  // namespace conceptkit
