#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>

#include "fedkm/coordinator.hpp"
#include "fedkm/types.hpp"

namespace fedkm {

inline constexpr std::size_t kMaxFramePayload = std::size_t{16} << 20;

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 4-byte big-endian length followed by the payload. Throws ProtocolError
/// when the payload exceeds kMaxFramePayload.
std::string encode_frame(std::string_view payload);

/// Removes one complete frame from the front of `buffer` if present.
std::optional<std::string> take_frame(std::string& buffer);

/// Length announced by a 4-byte header; throws ProtocolError if oversized.
std::uint32_t decode_frame_length(const unsigned char header[4]);

enum class MessageKind { kHello, kSolve, kSolution, kAverage, kObjective, kTerminate, kError };

const char* message_kind_name(MessageKind kind);

/// Coordinator to node: round one carries nothing, round two the setup.
/// Node to coordinator: its metadata.
struct HelloBody {
  std::optional<NodeHello> node;
  std::optional<NodeSetup> setup;
};

struct SolveBody {
  Vector coefficients;
  std::optional<Vector> reference;  // stacked K * n_y
};

struct SolutionBody {
  Vector centroids;  // stacked K * n_y
  double lagrangian_value = 0.0;
  double solve_time_s = 0.0;
  std::int64_t explored_nodes = 0;
};

struct AverageBody {
  Vector centroids;
};

struct ObjectiveBody {
  double objective = 0.0;
};

struct TerminateBody {
  std::string reason;
};

struct ErrorBody {
  FailureKind category = FailureKind::kSolver;
  std::string message;
};

using MessageBody = std::variant<HelloBody, SolveBody, SolutionBody, AverageBody, ObjectiveBody,
                                 TerminateBody, ErrorBody>;

struct Message {
  std::string run_id;
  int t = 0;
  MessageBody body;

  MessageKind kind() const { return static_cast<MessageKind>(body.index()); }
};

/// JSON payload of a message.
std::string encode_message(const Message& message);
/// Throws ProtocolError on malformed or schema-violating payloads.
Message decode_message(std::string_view payload);

}  // namespace fedkm
