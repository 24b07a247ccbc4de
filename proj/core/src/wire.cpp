#include <initializer_list>
#include <set>

#include <json.hpp>

#include "fedkm/wire.hpp"

namespace fedkm {

using nlohmann::json;

std::string encode_frame(std::string_view payload) {
  if (payload.size() > kMaxFramePayload) {
    throw ProtocolError("frame payload of " + std::to_string(payload.size()) + " bytes exceeds 16 MiB");
  }
  const auto n = static_cast<std::uint32_t>(payload.size());
  std::string out;
  out.reserve(4 + payload.size());
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>(n & 0xff));
  out.append(payload);
  return out;
}

std::uint32_t decode_frame_length(const unsigned char header[4]) {
  const std::uint32_t n = (std::uint32_t{header[0]} << 24) | (std::uint32_t{header[1]} << 16) |
                          (std::uint32_t{header[2]} << 8) | std::uint32_t{header[3]};
  if (n > kMaxFramePayload) {
    throw ProtocolError("announced frame length " + std::to_string(n) + " exceeds 16 MiB");
  }
  return n;
}

std::optional<std::string> take_frame(std::string& buffer) {
  if (buffer.size() < 4) return std::nullopt;
  unsigned char header[4];
  for (int i = 0; i < 4; ++i) header[i] = static_cast<unsigned char>(buffer[i]);
  const std::uint32_t n = decode_frame_length(header);
  if (buffer.size() < 4 + std::size_t{n}) return std::nullopt;
  std::string payload = buffer.substr(4, n);
  buffer.erase(0, 4 + std::size_t{n});
  return payload;
}

const char* message_kind_name(MessageKind kind) {
  switch (kind) {
    case MessageKind::kHello:
      return "HELLO";
    case MessageKind::kSolve:
      return "SOLVE";
    case MessageKind::kSolution:
      return "SOLUTION";
    case MessageKind::kAverage:
      return "AVERAGE";
    case MessageKind::kObjective:
      return "OBJECTIVE";
    case MessageKind::kTerminate:
      return "TERMINATE";
    case MessageKind::kError:
      return "ERROR";
  }
  return "?";
}

namespace {

json to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Vector vector_field(const json& obj, const char* key) {
  if (!obj.contains(key)) throw ProtocolError(std::string("missing field '") + key + "'");
  const json& a = obj.at(key);
  if (!a.is_array()) throw ProtocolError(std::string("field '") + key + "' must be an array");
  Vector v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number()) throw ProtocolError(std::string("field '") + key + "' must hold numbers");
    v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  }
  return v;
}

double number_field(const json& obj, const char* key) {
  if (!obj.contains(key) || !obj.at(key).is_number()) {
    throw ProtocolError(std::string("field '") + key + "' must be a number");
  }
  return obj.at(key).get<double>();
}

template <typename T>
T integer_field(const json& obj, const char* key) {
  if (!obj.contains(key) || !obj.at(key).is_number_integer()) {
    throw ProtocolError(std::string("field '") + key + "' must be an integer");
  }
  return obj.at(key).get<T>();
}

std::string string_field(const json& obj, const char* key) {
  if (!obj.contains(key) || !obj.at(key).is_string()) {
    throw ProtocolError(std::string("field '") + key + "' must be a string");
  }
  return obj.at(key).get<std::string>();
}

void only_keys(const json& obj, std::initializer_list<const char*> allowed) {
  const std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& [k, v] : obj.items()) {
    if (!keys.count(k)) throw ProtocolError("unexpected field '" + k + "'");
  }
}

BoundingBox box_field(const json& obj, const char* lo, const char* hi) {
  BoundingBox box{vector_field(obj, lo), vector_field(obj, hi)};
  if (box.lo.size() != box.hi.size()) throw ProtocolError("box bounds differ in length");
  return box;
}

struct BodyEncoder {
  json& out;
  void operator()(const HelloBody& b) const {
    if (b.node) {
      out["node"] = {{"node_id", b.node->node_id},
                     {"K", b.node->num_clusters},
                     {"n_y", b.node->dimension},
                     {"local_lo", to_json(b.node->local_bounds.lo)},
                     {"local_hi", to_json(b.node->local_bounds.hi)}};
    }
    if (b.setup) {
      out["setup"] = {{"box_lo", to_json(b.setup->box.lo)},
                      {"box_hi", to_json(b.setup->box.hi)},
                      {"rel_tol", b.setup->subsolver.rel_tol},
                      {"max_nodes", b.setup->subsolver.max_nodes},
                      {"lloyd_starts", b.setup->subsolver.lloyd_starts},
                      {"seed", b.setup->subsolver.seed}};
    }
  }
  void operator()(const SolveBody& b) const {
    out["coefficients"] = to_json(b.coefficients);
    if (b.reference) out["reference"] = to_json(*b.reference);
  }
  void operator()(const SolutionBody& b) const {
    out["centroids"] = to_json(b.centroids);
    out["lagrangian"] = b.lagrangian_value;
    out["solve_time_s"] = b.solve_time_s;
    out["explored_nodes"] = b.explored_nodes;
  }
  void operator()(const AverageBody& b) const { out["centroids"] = to_json(b.centroids); }
  void operator()(const ObjectiveBody& b) const { out["objective"] = b.objective; }
  void operator()(const TerminateBody& b) const { out["reason"] = b.reason; }
  void operator()(const ErrorBody& b) const {
    out["category"] = b.category == FailureKind::kSolver ? "solver" : "protocol";
    out["message"] = b.message;
  }
};

}  // namespace

std::string encode_message(const Message& message) {
  json doc = {{"kind", message_kind_name(message.kind())}, {"run_id", message.run_id}, {"t", message.t}};
  std::visit(BodyEncoder{doc}, message.body);
  return doc.dump();
}

Message decode_message(std::string_view payload) {
  json doc;
  try {
    doc = json::parse(payload);
  } catch (const json::parse_error& e) {
    throw ProtocolError(std::string("malformed JSON payload: ") + e.what());
  }
  if (!doc.is_object()) throw ProtocolError("payload must be a JSON object");
  try {
    Message m;
    const std::string kind = string_field(doc, "kind");
    m.run_id = string_field(doc, "run_id");
    m.t = integer_field<int>(doc, "t");
    if (kind == "HELLO") {
      only_keys(doc, {"kind", "run_id", "t", "node", "setup"});
      HelloBody b;
      if (doc.contains("node")) {
        const json& n = doc.at("node");
        if (!n.is_object()) throw ProtocolError("'node' must be an object");
        only_keys(n, {"node_id", "K", "n_y", "local_lo", "local_hi"});
        b.node = NodeHello{integer_field<int>(n, "node_id"), integer_field<int>(n, "K"),
                           integer_field<int>(n, "n_y"), box_field(n, "local_lo", "local_hi")};
      }
      if (doc.contains("setup")) {
        const json& s = doc.at("setup");
        if (!s.is_object()) throw ProtocolError("'setup' must be an object");
        only_keys(s, {"box_lo", "box_hi", "rel_tol", "max_nodes", "lloyd_starts", "seed"});
        NodeSetup setup;
        setup.run_id = m.run_id;
        setup.box = box_field(s, "box_lo", "box_hi");
        setup.subsolver.rel_tol = number_field(s, "rel_tol");
        setup.subsolver.max_nodes = integer_field<std::int64_t>(s, "max_nodes");
        setup.subsolver.lloyd_starts = integer_field<int>(s, "lloyd_starts");
        setup.subsolver.seed = integer_field<std::uint64_t>(s, "seed");
        b.setup = std::move(setup);
      }
      m.body = std::move(b);
    } else if (kind == "SOLVE") {
      only_keys(doc, {"kind", "run_id", "t", "coefficients", "reference"});
      SolveBody b;
      b.coefficients = vector_field(doc, "coefficients");
      if (doc.contains("reference")) b.reference = vector_field(doc, "reference");
      m.body = std::move(b);
    } else if (kind == "SOLUTION") {
      only_keys(doc, {"kind", "run_id", "t", "centroids", "lagrangian", "solve_time_s", "explored_nodes"});
      m.body = SolutionBody{vector_field(doc, "centroids"), number_field(doc, "lagrangian"),
                            number_field(doc, "solve_time_s"),
                            integer_field<std::int64_t>(doc, "explored_nodes")};
    } else if (kind == "AVERAGE") {
      only_keys(doc, {"kind", "run_id", "t", "centroids"});
      m.body = AverageBody{vector_field(doc, "centroids")};
    } else if (kind == "OBJECTIVE") {
      only_keys(doc, {"kind", "run_id", "t", "objective"});
      m.body = ObjectiveBody{number_field(doc, "objective")};
    } else if (kind == "TERMINATE") {
      only_keys(doc, {"kind", "run_id", "t", "reason"});
      m.body = TerminateBody{string_field(doc, "reason")};
    } else if (kind == "ERROR") {
      only_keys(doc, {"kind", "run_id", "t", "category", "message"});
      const std::string cat = string_field(doc, "category");
      if (cat != "solver" && cat != "protocol") throw ProtocolError("unknown error category '" + cat + "'");
      m.body = ErrorBody{cat == "solver" ? FailureKind::kSolver : FailureKind::kNetwork,
                         string_field(doc, "message")};
    } else {
      throw ProtocolError("unknown message kind '" + kind + "'");
    }
    return m;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("bad message field: ") + e.what());
  }
}

}  // namespace fedkm
