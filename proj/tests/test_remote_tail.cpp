#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptkit/causal.hpp"
#include "conceptkit/error.hpp"
#include "conceptkit/remote_tail.hpp"
#include "conceptkit/tail.hpp"
#include "helpers.hpp"

using namespace conceptkit;

namespace {

const std::string kFake = std::string("exec:") + CONCEPTKIT_FAKE_TAIL;

// Loopback server answering logits = W h + b, one thread per connection.
class TcpTailServer {
 public:
  TcpTailServer(Matrix w, Vector b) : w_(std::move(w)), b_(std::move(b)) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    REQUIRE(::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
    REQUIRE(::listen(fd_, 16) == 0);
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    acceptor_ = std::thread([this] { accept_loop(); });
  }
  ~TcpTailServer() {
    stop_ = true;
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    acceptor_.join();
    for (auto& t : workers_) t.join();
  }
  std::string endpoint() const { return "tcp://127.0.0.1:" + std::to_string(port_); }
  int connections() const { return connections_; }
  int peak() const { return peak_; }

 private:
  void accept_loop() {
    while (!stop_) {
      const int c = ::accept(fd_, nullptr, nullptr);
      if (c < 0) return;
      ++connections_;
      std::lock_guard lock(mutex_);
      workers_.emplace_back([this, c] { serve(c); });
    }
  }
  void serve(int c) {
    std::string buf;
    char chunk[4096];
    for (;;) {
      const auto nl = buf.find('\n');
      if (nl == std::string::npos) {
        const ssize_t got = ::read(c, chunk, sizeof chunk);
        if (got <= 0) break;
        buf.append(chunk, static_cast<std::size_t>(got));
        continue;
      }
      const auto req = nlohmann::json::parse(buf.substr(0, nl));
      buf.erase(0, nl + 1);
      const int now = ++active_;
      for (int p = peak_; now > p && !peak_.compare_exchange_weak(p, now);) {}
      const auto h = req.at("hidden").get<std::vector<double>>();
      const Vector logits = w_ * Eigen::Map<const Vector>(h.data(), static_cast<Eigen::Index>(h.size())) + b_;
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
      --active_;
      nlohmann::json out;
      if (req.at("layer") != 7) out["error"] = "wrong layer";
      else out["logits"] = std::vector<double>(logits.data(), logits.data() + logits.size());
      const std::string line = out.dump() + "\n";
      if (::write(c, line.data(), line.size()) < 0) break;
    }
    ::close(c);
  }

  Matrix w_;
  Vector b_;
  int fd_ = -1;
  int port_ = 0;
  std::atomic<bool> stop_{false};
  std::atomic<int> connections_{0}, active_{0}, peak_{0};
  std::mutex mutex_;
  std::thread acceptor_;
  std::vector<std::thread> workers_;
};

}  // namespace

TEST_CASE("request encoding") {
  Vector h(3);
  h << 0.5, -1.25, 1e-300;
  const auto j = nlohmann::json::parse(encode_tail_request(12, h));
  CHECK(j.at("op") == "tail");
  CHECK(j.at("layer") == 12);
  CHECK(j.at("hidden").get<std::vector<double>>() == std::vector<double>{0.5, -1.25, 1e-300});
  CHECK(encode_tail_request(0, h).find('\n') == std::string::npos);
}

TEST_CASE("response decoding") {
  const Vector v = decode_tail_response(R"({"logits":[1.5,-2,3e2]})");
  REQUIRE(v.size() == 3);
  CHECK(v(0) == 1.5);
  CHECK(v(1) == -2.0);
  CHECK(v(2) == 300.0);
  for (const char* bad : {"oops", R"({"error":"cuda out of memory"})", R"({"logit":[1]})",
                          R"({"logits":[1,"x"]})", R"({"logits":3})"}) {
    CAPTURE(bad);
    try {
      decode_tail_response(bad);
      FAIL("expected a remote error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::remote);
    }
  }
  try {
    decode_tail_response(R"({"error":"cuda out of memory"})");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("cuda out of memory") != std::string::npos);
  }
}

TEST_CASE("exec channel round trip") {
  RemoteTail tail(kFake, 3, 2);
  Vector h(4);
  h << 1, -2, 0.5, 0;
  const Vector z = tail.forward(h);
  REQUIRE(z.size() == 4);
  CHECK(z(0) == 5.0);
  CHECK(z(1) == -1.0);
  CHECK(z(2) == 4.0);
  CHECK(z(3) == 3.0);
  CHECK(tail.hidden_dim() == -1);
  // the channel is reused
  for (int i = 0; i < 20; ++i) CHECK(tail.forward(h)(0) == 5.0);
}

TEST_CASE("exec channel failures surface as remote errors") {
  for (const char* flag : {" --garbage", " --die", " --error"}) {
    CAPTURE(flag);
    RemoteTail tail(kFake + flag, 0, 1);
    try {
      tail.forward(Vector::Ones(2));
      FAIL("expected failure");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::remote);
    }
    // a second call must not hang on a lost slot
    CHECK_THROWS_AS(tail.forward(Vector::Ones(2)), Error);
  }
  RemoteTail missing("exec:/nonexistent/responder", 0, 1);
  CHECK_THROWS_AS(missing.forward(Vector::Ones(2)), Error);
}

TEST_CASE("endpoint parsing") {
  CHECK_THROWS_AS(open_channel("http://localhost:1"), Error);
  CHECK_THROWS_AS(open_channel("tcp://localhost"), Error);
  CHECK_THROWS_AS(open_channel("tcp://:80"), Error);
  try {
    open_channel("tcp://127.0.0.1:1");
    FAIL("expected connection failure");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::remote);
  }
}

TEST_CASE("tcp tail matches the affine surrogate under concurrency") {
  const Matrix w = testing::gaussian(16, 8, 1);
  const Vector b = testing::gaussian(16, 1, 2).col(0);
  TcpTailServer server(w, b);
  TailSpec spec;
  spec.kind = TailSpec::Kind::remote;
  spec.endpoint = server.endpoint();
  spec.layer = 7;
  spec.max_in_flight = 3;
  const auto remote = make_tail(spec);
  const AffineTail local(w, b);

  const Eigen::Index d = 8, k = 4, n = 6;
  Matrix u = testing::gaussian(d, k, 3);
  u.colwise().normalize();
  const Matrix v = testing::gaussian(k, n, 4).cwiseAbs();
  const Matrix h = u * v;
  std::vector<std::string> ids;
  for (Eigen::Index i = 0; i < n; ++i) ids.push_back("s" + std::to_string(i));
  const std::vector<int> tokens{0, 3, 6, 9, 12};
  const causal::StudyInput input{&h, &v, &u, ids, tokens};
  causal::StudyConfig cfg;
  cfg.threads = 6;
  cfg.n_random = 3;
  const std::vector<std::size_t> samples{0, 1, 2, 3, 4, 5};
  const auto a = causal::run_intervention_study(input, *remote, samples, cfg);
  const auto c = causal::run_intervention_study(input, local, samples, cfg);
  REQUIRE(a.size() == c.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(a[i].effect.calibrated_logit == doctest::Approx(c[i].effect.calibrated_logit).epsilon(1e-12).scale(1));
  CHECK(server.connections() <= 3);
  CHECK(server.peak() <= 3);
  CHECK(server.peak() >= 1);

  TailSpec wrong = spec;
  wrong.layer = 2;
  const auto refused = make_tail(wrong);
  CHECK_THROWS_AS(refused->forward(Vector::Ones(8)), Error);
  // an error reply keeps the connection usable
  CHECK_THROWS_AS(refused->forward(Vector::Ones(8)), Error);
}
