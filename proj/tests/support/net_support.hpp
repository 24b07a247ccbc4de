#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <future>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fedkm/net.hpp"
#include "fedkm/wire.hpp"

namespace fedkm::testing {

inline int connect_local(std::uint16_t port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    ::close(fd);
    return -1;
  }
  return fd;
}

inline int listen_local(std::uint16_t& port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  ::listen(fd, 4);
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  port = ntohs(addr.sin_port);
  return fd;
}

inline bool write_all(int fd, const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n <= 0) return false;
    off += static_cast<std::size_t>(n);
  }
  return true;
}

inline bool read_exact(int fd, char* out, std::size_t n) {
  std::size_t off = 0;
  while (off < n) {
    const ssize_t r = ::recv(fd, out + off, n - off, 0);
    if (r <= 0) return false;
    off += static_cast<std::size_t>(r);
  }
  return true;
}

inline std::optional<std::string> read_frame_payload(int fd) {
  unsigned char header[4];
  if (!read_exact(fd, reinterpret_cast<char*>(header), 4)) return std::nullopt;
  std::string payload(decode_frame_length(header), '\0');
  if (!read_exact(fd, payload.data(), payload.size())) return std::nullopt;
  return payload;
}

inline void send_terminate(std::uint16_t port) {
  const int fd = connect_local(port);
  if (fd < 0) return;
  write_all(fd, encode_frame(encode_message({"", 0, TerminateBody{"test"}})));
  ::close(fd);
}

// One serve_node thread per node on an ephemeral port.
class LocalCluster {
 public:
  explicit LocalCluster(const ProblemInstance& inst) {
    for (const auto& node : inst.nodes) {
      auto ready = std::make_shared<std::promise<std::uint16_t>>();
      auto port = ready->get_future();
      threads_.emplace_back([node, k = inst.num_clusters, ready] {
        ServeOptions opts;
        opts.timeout_s = 30.0;
        opts.on_listening = [ready](std::uint16_t p) { ready->set_value(p); };
        try {
          serve_node(node, k, Endpoint{"127.0.0.1", 0}, opts);
        } catch (const std::exception&) {
        }
      });
      ports_.push_back(port.get());
    }
  }
  ~LocalCluster() {
    // Nodes left running by an aborted run are told to stop directly.
    for (auto p : ports_) send_terminate(p);
    for (auto& t : threads_) t.join();
  }
  std::vector<Endpoint> endpoints() const {
    std::vector<Endpoint> out;
    for (auto p : ports_) out.push_back({"127.0.0.1", p});
    return out;
  }
  const std::vector<std::uint16_t>& ports() const { return ports_; }

 private:
  std::vector<std::thread> threads_;
  std::vector<std::uint16_t> ports_;
};

}  // namespace fedkm::testing
