#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <optional>

#include <fmt/format.h>

#include "fedkm/net.hpp"
#include "fedkm/subsolver.hpp"
#include "fedkm/wire.hpp"

namespace fedkm {

namespace {

using Clock = std::chrono::steady_clock;

class NetFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  Socket(Socket&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }
  Socket& operator=(Socket&& other) noexcept {
    if (this != &other) {
      reset();
      fd_ = other.fd_;
      other.fd_ = -1;
    }
    return *this;
  }
  ~Socket() { reset(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

std::string errno_text() { return std::strerror(errno); }

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
  return static_cast<int>(std::max<std::int64_t>(0, left.count()));
}

Clock::time_point deadline_after(double seconds) {
  return Clock::now() + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(seconds));
}

void wait_readable(int fd, Clock::time_point deadline) {
  for (;;) {
    pollfd p{fd, POLLIN, 0};
    const int rc = ::poll(&p, 1, remaining_ms(deadline));
    if (rc > 0) return;
    if (rc == 0) throw NetFailure("timed out waiting for data");
    if (errno != EINTR) throw NetFailure("poll failed: " + errno_text());
  }
}

void read_exact(int fd, char* out, std::size_t n, Clock::time_point deadline) {
  std::size_t got = 0;
  while (got < n) {
    wait_readable(fd, deadline);
    const ssize_t rc = ::recv(fd, out + got, n - got, 0);
    if (rc == 0) throw NetFailure("connection closed by peer");
    if (rc < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw NetFailure("recv failed: " + errno_text());
    }
    got += static_cast<std::size_t>(rc);
  }
}

std::string read_frame(int fd, Clock::time_point deadline) {
  unsigned char header[4];
  read_exact(fd, reinterpret_cast<char*>(header), 4, deadline);
  const std::uint32_t n = decode_frame_length(header);
  std::string payload(n, '\0');
  read_exact(fd, payload.data(), n, deadline);
  return payload;
}

void send_all(int fd, std::string_view data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t rc = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw NetFailure("send failed: " + errno_text());
    }
    sent += static_cast<std::size_t>(rc);
  }
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

struct AddrInfo {
  addrinfo* head = nullptr;
  ~AddrInfo() {
    if (head) ::freeaddrinfo(head);
  }
};

AddrInfo resolve(const Endpoint& ep, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  AddrInfo info;
  const std::string port = std::to_string(ep.port);
  const int rc = ::getaddrinfo(ep.host.empty() ? nullptr : ep.host.c_str(), port.c_str(), &hints, &info.head);
  if (rc != 0) throw NetFailure("cannot resolve " + ep.to_string() + ": " + ::gai_strerror(rc));
  return info;
}

Socket connect_to(const Endpoint& ep, double timeout_s) {
  const AddrInfo info = resolve(ep, false);
  const auto deadline = deadline_after(timeout_s);
  std::string last_error = "no address";
  for (addrinfo* a = info.head; a; a = a->ai_next) {
    Socket s(::socket(a->ai_family, a->ai_socktype, a->ai_protocol));
    if (!s.valid()) {
      last_error = errno_text();
      continue;
    }
    const int flags = ::fcntl(s.fd(), F_GETFL, 0);
    ::fcntl(s.fd(), F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(s.fd(), a->ai_addr, a->ai_addrlen);
    if (rc < 0 && errno == EINPROGRESS) {
      pollfd p{s.fd(), POLLOUT, 0};
      rc = ::poll(&p, 1, remaining_ms(deadline));
      if (rc <= 0) {
        last_error = rc == 0 ? "connect timed out" : errno_text();
        continue;
      }
      int err = 0;
      socklen_t len = sizeof err;
      ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
      if (err != 0) {
        last_error = std::strerror(err);
        continue;
      }
    } else if (rc < 0) {
      last_error = errno_text();
      continue;
    }
    ::fcntl(s.fd(), F_SETFL, flags);
    set_nodelay(s.fd());
    return s;
  }
  throw NetFailure("cannot connect to " + ep.to_string() + ": " + last_error);
}

void send_message(int fd, const Message& m,
                  const std::function<void(std::string_view)>& capture = {}) {
  const std::string payload = encode_message(m);
  if (capture) capture(payload);
  send_all(fd, encode_frame(payload));
}

// ---------------------------------------------------------------- node side

class NodeSession {
 public:
  NodeSession(const NodeDataset& data, int num_clusters) : data_(data), num_clusters_(num_clusters) {}

  enum class Outcome { kContinue, kClose, kTerminate };

  Outcome handle(int fd, const std::string& payload) {
    Message in;
    try {
      in = decode_message(payload);
    } catch (const ProtocolError& e) {
      reply_error(fd, FailureKind::kNetwork, e.what(), "", 0);
      return Outcome::kClose;
    }
    try {
      return dispatch(fd, in);
    } catch (const ProtocolError& e) {
      reply_error(fd, FailureKind::kNetwork, e.what(), in.run_id, in.t);
      return Outcome::kClose;
    }
  }

 private:
  enum class Expect { kSolve, kAverage };

  NodeHello info() const {
    return {data_.node_id, num_clusters_, data_.dimension(), BoundingBox::around(data_.observations)};
  }

  int block() const { return num_clusters_ * data_.dimension(); }

  static void reply_error(int fd, FailureKind kind, const std::string& what, const std::string& run_id,
                          int t) {
    try {
      send_message(fd, {run_id, t, ErrorBody{kind, what}});
    } catch (const NetFailure&) {
    }
  }

  Outcome dispatch(int fd, const Message& in) {
    switch (in.kind()) {
      case MessageKind::kHello: {
        const auto& b = std::get<HelloBody>(in.body);
        if (b.setup) {
          if (b.setup->box.dimension() != data_.dimension()) throw ProtocolError("box dimension mismatch");
          if (!b.setup->box.contains(BoundingBox::around(data_.observations).lo) ||
              !b.setup->box.contains(BoundingBox::around(data_.observations).hi)) {
            throw ProtocolError("box does not contain the node's data");
          }
          solver_.emplace(data_, num_clusters_, b.setup->box, b.setup->subsolver);
          run_id_ = b.setup->run_id;
          expect_ = Expect::kSolve;
          last_t_ = 0;
        }
        send_message(fd, {in.run_id, in.t, HelloBody{info(), std::nullopt}});
        return Outcome::kContinue;
      }
      case MessageKind::kSolve: {
        check_run(in);
        if (expect_ != Expect::kSolve || in.t <= last_t_) throw ProtocolError("unexpected SOLVE");
        const auto& b = std::get<SolveBody>(in.body);
        if (b.coefficients.size() != block()) throw ProtocolError("coefficient length != K * n_y");
        std::optional<CentroidSet> reference;
        if (b.reference) {
          if (b.reference->size() != block()) throw ProtocolError("reference length != K * n_y");
          reference = CentroidSet(num_clusters_, data_.dimension(), *b.reference);
        }
        const auto start = Clock::now();
        SubproblemSolution sol;
        try {
          sol = solver_->solve(b.coefficients, reference);
        } catch (const NodeLimitExceeded& e) {
          reply_error(fd, FailureKind::kSolver,
                      fmt::format("subproblem not solved to optimality (lower bound {}, incumbent {})",
                                  e.lower_bound(), e.incumbent().lagrangian_value),
                      in.run_id, in.t);
          return Outcome::kContinue;
        } catch (const std::invalid_argument& e) {
          reply_error(fd, FailureKind::kSolver, e.what(), in.run_id, in.t);
          return Outcome::kContinue;
        }
        const double elapsed = std::chrono::duration<double>(Clock::now() - start).count();
        last_t_ = in.t;
        expect_ = Expect::kAverage;
        send_message(fd, {in.run_id, in.t,
                          SolutionBody{sol.centroids.stacked(), sol.lagrangian_value, elapsed,
                                       sol.stats.explored_nodes}});
        return Outcome::kContinue;
      }
      case MessageKind::kAverage: {
        check_run(in);
        if (expect_ != Expect::kAverage || in.t != last_t_) throw ProtocolError("unexpected AVERAGE");
        const auto& b = std::get<AverageBody>(in.body);
        if (b.centroids.size() != block()) throw ProtocolError("average length != K * n_y");
        const CentroidSet avg(num_clusters_, data_.dimension(), b.centroids);
        expect_ = Expect::kSolve;
        send_message(fd, {in.run_id, in.t, ObjectiveBody{node_objective(data_.observations, avg)}});
        return Outcome::kContinue;
      }
      case MessageKind::kTerminate:
        return Outcome::kTerminate;
      default:
        throw ProtocolError(std::string("unexpected ") + message_kind_name(in.kind()) + " at a node");
    }
  }

  void check_run(const Message& in) const {
    if (!solver_) throw ProtocolError("node not configured; send HELLO with setup first");
    if (in.run_id != run_id_) throw ProtocolError("run_id mismatch");
  }

  const NodeDataset& data_;
  int num_clusters_;
  std::optional<NodeSolver> solver_;
  std::string run_id_;
  Expect expect_ = Expect::kSolve;
  int last_t_ = 0;
};

// --------------------------------------------------------- coordinator side

class NetworkedBackend final : public NodeBackend {
 public:
  NetworkedBackend(std::vector<Endpoint> nodes, NetOptions options)
      : endpoints_(std::move(nodes)), options_(std::move(options)) {}

  ~NetworkedBackend() override = default;

  int num_nodes() const override { return static_cast<int>(endpoints_.size()); }

  std::vector<NodeHello> hello() override {
    guard([&] {
      sockets_.clear();
      for (const auto& ep : endpoints_) sockets_.push_back(connect_to(ep, options_.timeout_s));
    });
    std::vector<NodeHello> out;
    guard([&] {
      for (int i = 0; i < num_nodes(); ++i) send(i, {run_id_, 0, HelloBody{}});
      const auto deadline = deadline_after(options_.timeout_s);
      for (int i = 0; i < num_nodes(); ++i) {
        const Message m = receive(i, deadline, MessageKind::kHello, 0);
        const auto& b = std::get<HelloBody>(m.body);
        if (!b.node) throw ProtocolError("HELLO reply without node metadata");
        out.push_back(*b.node);
      }
    });
    return out;
  }

  void configure(const NodeSetup& setup) override {
    run_id_ = setup.run_id;
    guard([&] {
      for (int i = 0; i < num_nodes(); ++i) send(i, {run_id_, 0, HelloBody{std::nullopt, setup}});
      const auto deadline = deadline_after(options_.timeout_s);
      for (int i = 0; i < num_nodes(); ++i) receive(i, deadline, MessageKind::kHello, 0);
    });
  }

  std::vector<NodeSolveReply> solve(int t, std::span<const NodeSolveRequest> requests) override {
    std::vector<NodeSolveReply> out;
    guard([&] {
      for (const auto& r : requests) {
        SolveBody b{r.coefficients, std::nullopt};
        if (r.reference) b.reference = r.reference->stacked();
        send(r.node, {run_id_, t, std::move(b)});
      }
      const auto deadline = deadline_after(options_.timeout_s);
      for (const auto& r : requests) {
        const Message m = receive(r.node, deadline, MessageKind::kSolution, t);
        const auto& b = std::get<SolutionBody>(m.body);
        if (b.centroids.size() != r.coefficients.size() || num_clusters_ < 1) {
          throw ProtocolError("SOLUTION has wrong length");
        }
        const int dim = static_cast<int>(b.centroids.size()) / num_clusters_;
        out.push_back({CentroidSet(num_clusters_, dim, b.centroids),
                       b.lagrangian_value, b.solve_time_s, b.explored_nodes});
      }
    });
    return out;
  }

  std::vector<double> objectives(int t, const CentroidSet& average) override {
    std::vector<double> out;
    guard([&] {
      for (int i = 0; i < num_nodes(); ++i) send(i, {run_id_, t, AverageBody{average.stacked()}});
      const auto deadline = deadline_after(options_.timeout_s);
      for (int i = 0; i < num_nodes(); ++i) {
        out.push_back(std::get<ObjectiveBody>(receive(i, deadline, MessageKind::kObjective, t).body).objective);
      }
    });
    return out;
  }

  void terminate(const std::string& reason) override {
    guard([&] {
      for (std::size_t i = 0; i < sockets_.size(); ++i) {
        if (sockets_[i].valid()) send(static_cast<int>(i), {run_id_, 0, TerminateBody{reason}});
      }
    });
    sockets_.clear();
  }


 private:
  template <typename F>
  void guard(F&& f) {
    try {
      f();
    } catch (const NetFailure& e) {
      sockets_.clear();
      throw BackendError(FailureKind::kNetwork, e.what());
    } catch (const ProtocolError& e) {
      sockets_.clear();
      throw BackendError(FailureKind::kNetwork, std::string("protocol error: ") + e.what());
    }
  }

  void send(int node, const Message& m) {
    if (node < 0 || node >= static_cast<int>(sockets_.size()) || !sockets_[node].valid()) {
      throw NetFailure(fmt::format("node {} is not connected", node));
    }
    std::function<void(std::string_view)> cap;
    if (options_.capture) {
      cap = [&](std::string_view p) { options_.capture(TrafficDirection::kToNode, node, p); };
    }
    try {
      send_message(sockets_[node].fd(), m, cap);
    } catch (const NetFailure& e) {
      throw NetFailure(fmt::format("node {} ({}): {}", node, endpoints_[node].to_string(), e.what()));
    }
  }

  Message receive(int node, Clock::time_point deadline, MessageKind expected, int t) {
    std::string payload;
    try {
      payload = read_frame(sockets_[node].fd(), deadline);
    } catch (const NetFailure& e) {
      throw NetFailure(fmt::format("node {} ({}): {}", node, endpoints_[node].to_string(), e.what()));
    }
    if (options_.capture) options_.capture(TrafficDirection::kFromNode, node, payload);
    Message m = decode_message(payload);
    if (m.kind() == MessageKind::kError) {
      const auto& e = std::get<ErrorBody>(m.body);
      throw BackendError(e.category, fmt::format("node {} reported: {}", node, e.message));
    }
    if (m.kind() != expected) {
      throw ProtocolError(fmt::format("node {} sent {} where {} was expected", node,
                                      message_kind_name(m.kind()), message_kind_name(expected)));
    }
    if (m.run_id != run_id_ || m.t != t) {
      throw ProtocolError(fmt::format("node {} answered for run '{}' t={}", node, m.run_id, m.t));
    }
    if (expected == MessageKind::kHello && num_clusters_ == 0) {
      const auto& b = std::get<HelloBody>(m.body);
      if (b.node) num_clusters_ = b.node->num_clusters;
    }
    return m;
  }

  std::vector<Endpoint> endpoints_;
  NetOptions options_;
  std::vector<Socket> sockets_;
  std::string run_id_ = "hello";
  int num_clusters_ = 0;
};

}  // namespace

double default_net_timeout_s() {
  if (const char* env = std::getenv("FEDKMEANS_NET_TIMEOUT_S")) {
    char* end = nullptr;
    const double v = std::strtod(env, &end);
    if (end != env && v > 0.0) return v;
  }
  return 60.0;
}

Endpoint Endpoint::parse(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon + 1 == text.size()) {
    throw std::invalid_argument("endpoint '" + text + "' must be host:port");
  }
  Endpoint ep;
  ep.host = text.substr(0, colon);
  if (ep.host.size() >= 2 && ep.host.front() == '[' && ep.host.back() == ']') {
    ep.host = ep.host.substr(1, ep.host.size() - 2);
  }
  const std::string port = text.substr(colon + 1);
  char* end = nullptr;
  const long p = std::strtol(port.c_str(), &end, 10);
  if (*end != '\0' || p < 0 || p > 65535) throw std::invalid_argument("bad port in '" + text + "'");
  ep.port = static_cast<std::uint16_t>(p);
  return ep;
}

std::string Endpoint::to_string() const { return host + ":" + std::to_string(port); }

void serve_node(const NodeDataset& dataset, int num_clusters, const Endpoint& bind,
                const ServeOptions& options) {
  if (dataset.observations.empty()) throw std::invalid_argument("serve_node: empty dataset");
  Socket listener;
  {
    const AddrInfo info = resolve(bind, true);
    std::string last_error = "no address";
    for (addrinfo* a = info.head; a; a = a->ai_next) {
      Socket s(::socket(a->ai_family, a->ai_socktype, a->ai_protocol));
      if (!s.valid()) continue;
      int one = 1;
      ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
      if (::bind(s.fd(), a->ai_addr, a->ai_addrlen) == 0 && ::listen(s.fd(), 4) == 0) {
        listener = std::move(s);
        break;
      }
      last_error = errno_text();
    }
    if (!listener.valid()) {
      throw BackendError(FailureKind::kNetwork, "cannot listen on " + bind.to_string() + ": " + last_error);
    }
  }
  sockaddr_storage addr{};
  socklen_t len = sizeof addr;
  ::getsockname(listener.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
  const std::uint16_t port = addr.ss_family == AF_INET6
                                 ? ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port)
                                 : ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
  if (options.on_listening) options.on_listening(port);

  NodeSession session(dataset, num_clusters);
  for (;;) {
    Socket conn(::accept(listener.fd(), nullptr, nullptr));
    if (!conn.valid()) {
      if (errno == EINTR) continue;
      throw BackendError(FailureKind::kNetwork, "accept failed: " + errno_text());
    }
    set_nodelay(conn.fd());
    for (;;) {
      std::string payload;
      try {
        payload = read_frame(conn.fd(), deadline_after(options.timeout_s));
      } catch (const ProtocolError& e) {
        try {
          send_message(conn.fd(), {"", 0, ErrorBody{FailureKind::kNetwork, e.what()}});
        } catch (const NetFailure&) {
        }
        break;
      } catch (const NetFailure&) {
        break;
      }
      NodeSession::Outcome outcome;
      try {
        outcome = session.handle(conn.fd(), payload);
      } catch (const NetFailure&) {
        break;
      }
      if (outcome == NodeSession::Outcome::kTerminate) return;
      if (outcome == NodeSession::Outcome::kClose) break;
    }
  }
}

std::unique_ptr<NodeBackend> make_networked_backend(const std::vector<Endpoint>& nodes,
                                                    const NetOptions& options) {
  return std::make_unique<NetworkedBackend>(nodes, options);
}

}  // namespace fedkm
