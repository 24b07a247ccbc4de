#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "fedkm/coordinator.hpp"
#include "fedkm/types.hpp"

namespace fedkm {

/// FEDKMEANS_NET_TIMEOUT_S when set to a positive number, else 60 s.
double default_net_timeout_s();

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  /// Parses "host:port". Throws std::invalid_argument.
  static Endpoint parse(const std::string& text);
  std::string to_string() const;
};

struct ServeOptions {
  /// Called once the socket listens, with the bound port (useful for port 0).
  std::function<void(std::uint16_t)> on_listening;
  /// Idle limit while waiting for the next request on an open connection.
  double timeout_s = default_net_timeout_s();
};

/// Serves one node's solve and objective steps until a TERMINATE arrives.
/// Connections are handled one at a time; a malformed frame is answered
/// with ERROR and closes that connection.
void serve_node(const NodeDataset& dataset, int num_clusters, const Endpoint& bind,
                const ServeOptions& options = {});

enum class TrafficDirection { kToNode, kFromNode };

struct NetOptions {
  double timeout_s = default_net_timeout_s();
  /// Sees every payload exchanged, for auditing.
  std::function<void(TrafficDirection, int node, std::string_view payload)> capture;
};

/// Coordinator side of the wire protocol, one connection per node in the
/// given order. Connection failures and timeouts raise
/// BackendError(kNetwork); node-reported solver failures raise
/// BackendError(kSolver).
std::unique_ptr<NodeBackend> make_networked_backend(const std::vector<Endpoint>& nodes,
                                                    const NetOptions& options = {});

}  // namespace fedkm
