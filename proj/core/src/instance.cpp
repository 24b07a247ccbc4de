#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "fedkm/instance_io.hpp"
#include "fedkm/topology.hpp"

namespace fedkm {

using nlohmann::json;

std::size_t ProblemInstance::num_observations() const {
  std::size_t n = 0;
  for (const auto& node : nodes) n += node.size();
  return n;
}

void ProblemInstance::validate() const {
  auto fail = [this](const std::string& what) {
    throw std::invalid_argument("instance '" + name + "': " + what);
  };
  if (num_clusters < 1) fail("K must be at least 1");
  if (dimension < 1) fail("n_y must be at least 1");
  if (nodes.size() < 2) fail("at least 2 nodes are required");
  if (box.lo.size() != dimension || box.hi.size() != dimension) fail("box dimension != n_y");
  for (Eigen::Index l = 0; l < dimension; ++l) {
    if (!std::isfinite(box.lo[l]) || !std::isfinite(box.hi[l])) fail("box is not finite");
    if (box.lo[l] > box.hi[l]) fail("box has lo > hi");
  }
  if (big_m.size() != nodes.size()) fail("big_m must have one entry per node");

  std::set<int> ids;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& node = nodes[i];
    const std::string where = "node " + std::to_string(node.node_id);
    if (!ids.insert(node.node_id).second) fail("duplicate node_id " + std::to_string(node.node_id));
    if (node.observations.empty()) fail(where + " has no observations");
    if (big_m[i].size() != node.size()) fail(where + ": big_m count != observation count");
    for (std::size_t j = 0; j < node.size(); ++j) {
      const auto& y = node.observations[j];
      if (y.size() != dimension) fail(where + ": observation dimension != n_y");
      if (!y.allFinite()) fail(where + ": non-finite coordinate");
      if (!box.contains(y)) fail(where + ": observation outside box");
      const double expected = compute_big_m(y, box);
      if (std::abs(big_m[i][j] - expected) > 1e-12 * std::max(1.0, expected)) {
        fail(where + ": big_m inconsistent with box");
      }
    }
  }
}

void finalize_instance(ProblemInstance& instance) {
  if (instance.nodes.empty()) throw std::invalid_argument("instance has no nodes");
  BoundingBox box = BoundingBox::around(instance.nodes.front().observations);
  for (const auto& node : instance.nodes) {
    box = BoundingBox::envelope(box, BoundingBox::around(node.observations));
  }
  instance.box = box;
  instance.big_m.clear();
  for (const auto& node : instance.nodes) {
    auto& m = instance.big_m.emplace_back();
    m.reserve(node.size());
    for (const auto& y : node.observations) m.push_back(compute_big_m(y, box));
  }
}

namespace {

json vector_to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index l = 0; l < v.size(); ++l) out.push_back(v[l]);
  return out;
}

Vector vector_from_json(const json& j, const char* what) {
  if (!j.is_array()) throw InstanceFormatError(std::string(what) + ": expected array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t l = 0; l < j.size(); ++l) {
    if (!j[l].is_number()) throw InstanceFormatError(std::string(what) + ": expected number");
    v[static_cast<Eigen::Index>(l)] = j[l].get<double>();
  }
  return v;
}

const json& require(const json& obj, const char* key) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw InstanceFormatError(std::string("missing field '") + key + "'");
  }
  return obj.at(key);
}

}  // namespace

std::string instance_to_json(const ProblemInstance& instance) {
  json nodes = json::array();
  json big_m = json::object();
  for (std::size_t i = 0; i < instance.nodes.size(); ++i) {
    const auto& node = instance.nodes[i];
    json obs = json::array();
    for (const auto& y : node.observations) obs.push_back(vector_to_json(y));
    nodes.push_back({{"node_id", node.node_id}, {"observations", std::move(obs)}});
    json m = json::array();
    if (i < instance.big_m.size()) {
      for (double v : instance.big_m[i]) m.push_back(v);
    }
    big_m[std::to_string(node.node_id)] = std::move(m);
  }
  json doc = {
      {"name", instance.name},
      {"K", instance.num_clusters},
      {"n_y", instance.dimension},
      {"nodes", std::move(nodes)},
      {"box", {{"lo", vector_to_json(instance.box.lo)}, {"hi", vector_to_json(instance.box.hi)}}},
      {"big_m", std::move(big_m)},
  };
  return doc.dump(1) + "\n";
}

ProblemInstance instance_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InstanceFormatError(std::string("malformed JSON: ") + e.what());
  }
  ProblemInstance inst;
  try {
    inst.name = require(doc, "name").get<std::string>();
    inst.num_clusters = require(doc, "K").get<int>();
    inst.dimension = require(doc, "n_y").get<int>();
    const auto& nodes = require(doc, "nodes");
    if (!nodes.is_array()) throw InstanceFormatError("'nodes' must be an array");
    for (const auto& n : nodes) {
      NodeDataset ds;
      ds.node_id = require(n, "node_id").get<int>();
      const auto& obs = require(n, "observations");
      if (!obs.is_array()) throw InstanceFormatError("'observations' must be an array");
      for (const auto& y : obs) ds.observations.push_back(vector_from_json(y, "observation"));
      inst.nodes.push_back(std::move(ds));
    }
    const auto& box = require(doc, "box");
    inst.box.lo = vector_from_json(require(box, "lo"), "box.lo");
    inst.box.hi = vector_from_json(require(box, "hi"), "box.hi");
    const auto& big_m = require(doc, "big_m");
    if (!big_m.is_object()) throw InstanceFormatError("'big_m' must be an object");
    for (const auto& node : inst.nodes) {
      const std::string key = std::to_string(node.node_id);
      if (!big_m.contains(key)) throw InstanceFormatError("big_m missing node " + key);
      const Vector m = vector_from_json(big_m.at(key), "big_m");
      inst.big_m.emplace_back(m.data(), m.data() + m.size());
    }
  } catch (const json::exception& e) {
    throw InstanceFormatError(std::string("bad field type: ") + e.what());
  }
  try {
    inst.validate();
  } catch (const std::invalid_argument& e) {
    throw InstanceFormatError(e.what());
  }
  return inst;
}

ProblemInstance read_instance(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InstanceFormatError("cannot open instance file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return instance_from_json(buf.str());
}

void write_instance(const ProblemInstance& instance, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write instance file " + path.string());
  out << instance_to_json(instance);
  if (!out) throw std::runtime_error("failed writing instance file " + path.string());
}

}  // namespace fedkm
