#pragma once

// File formats: classifier checkpoints (JSON), bag manifests (JSON lines),
// per-epoch metrics (CSV) and the standalone assignment request/response.
// Class labels are one-based in every file and zero-based in memory.

#include <cmath>
#include <cstddef>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "llpdc/classifier.hpp"
#include "llpdc/data.hpp"
#include "llpdc/llp_train.hpp"
#include "llpdc/proportion_assign.hpp"

namespace llpdc {

inline constexpr const char* kCheckpointFormat = "llpdc-checkpoint/1";

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline nlohmann::json checkpoint_to_json(const ClassifierParams& params) {
  nlohmann::json out;
  out["format"] = kCheckpointFormat;
  out["architecture"] = {
      {"kind", params.architecture.kind == Architecture::Kind::linear ? "linear" : "one_hidden"},
      {"hidden", params.architecture.hidden}};
  out["input_dim"] = params.input_dim;
  out["classes"] = params.classes;
  out["layers"] = nlohmann::json::array();
  for (const auto& layer : params.layers) {
    std::vector<double> weight;
    weight.reserve(static_cast<std::size_t>(layer.weight.size()));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) weight.push_back(layer.weight(r, c));
    out["layers"].push_back({{"rows", layer.weight.rows()},
                             {"cols", layer.weight.cols()},
                             {"weight", weight},
                             {"bias", std::vector<double>(layer.bias.data(), layer.bias.data() + layer.bias.size())}});
  }
  return out;
}

inline ClassifierParams checkpoint_from_json(const nlohmann::json& in) {
  try {
    if (in.at("format").get<std::string>() != kCheckpointFormat) throw FormatError("unsupported checkpoint format");
    const auto& arch = in.at("architecture");
    const std::string kind = arch.at("kind").get<std::string>();
    Architecture architecture;
    if (kind == "linear") {
      architecture = Architecture::linear();
    } else if (kind == "one_hidden") {
      architecture = Architecture::one_hidden(arch.at("hidden").get<std::size_t>());
    } else {
      throw FormatError("unknown architecture " + kind);
    }
    ClassifierParams params =
        make_classifier(architecture, in.at("input_dim").get<std::size_t>(), in.at("classes").get<std::size_t>(), 0);
    const auto& layers = in.at("layers");
    if (layers.size() != params.layers.size()) throw FormatError("layer count mismatch");
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
      auto& layer = params.layers[i];
      const auto weight = layers[i].at("weight").get<std::vector<double>>();
      const auto bias = layers[i].at("bias").get<std::vector<double>>();
      if (layers[i].at("rows").get<Eigen::Index>() != layer.weight.rows() ||
          layers[i].at("cols").get<Eigen::Index>() != layer.weight.cols() ||
          weight.size() != static_cast<std::size_t>(layer.weight.size()) ||
          bias.size() != static_cast<std::size_t>(layer.bias.size()))
        throw FormatError("layer shape mismatch");
      std::size_t k = 0;
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = weight[k++];
      for (std::size_t b = 0; b < bias.size(); ++b) layer.bias(static_cast<Eigen::Index>(b)) = bias[b];
    }
    return params;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
}

// Bag manifests: one {"indices": [...], "alpha": [...]} record per line.

inline void write_bag_manifest(std::ostream& out, const std::vector<Bag>& bags) {
  for (const Bag& bag : bags) out << nlohmann::json{{"indices", bag.instance_indices}, {"alpha", bag.alpha.values}}.dump() << '\n';
}

inline std::vector<Bag> read_bag_manifest(std::istream& in) {
  std::vector<Bag> bags;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto record = nlohmann::json::parse(line);
      bags.push_back(make_bag(record.at("indices").get<std::vector<std::size_t>>(),
                              ProportionVector{record.at("alpha").get<std::vector<double>>()}));
    } catch (const std::exception& e) {
      throw FormatError("bag manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return bags;
}

inline void write_metrics_csv(std::ostream& out, const std::vector<EpochMetrics>& metrics) {
  out << "epoch,bag_loss,instance_loss,pl_accuracy,pl_ratio,test_accuracy\n";
  std::ostringstream row;
  row << std::setprecision(10);
  for (const auto& m : metrics) {
    row.str({});
    row << m.epoch << ',' << m.bag_loss << ',' << m.instance_loss << ',' << m.pseudo_label_accuracy << ','
        << m.pseudo_label_ratio << ',';
    if (std::isnan(m.test_accuracy)) {
      row << "nan";
    } else {
      row << m.test_accuracy;
    }
    out << row.str() << '\n';
  }
}

// Standalone assignment: {"probs": [[...]], "alpha": [...]} ->
// {"labels": [...], "neg_log_prob": x}.

struct AssignmentRequest {
  ProbabilityMatrix probs;
  ProportionVector alpha;
};

inline AssignmentRequest parse_assignment_request(const nlohmann::json& in) {
  if (!in.is_object()) throw FormatError("request must be a JSON object");
  if (!in.contains("probs")) throw FormatError("missing field probs");
  if (!in.contains("alpha")) throw FormatError("missing field alpha");
  const auto& probs = in["probs"];
  const auto& alpha = in["alpha"];
  if (!alpha.is_array()) throw FormatError("alpha must be an array of numbers");
  if (!probs.is_array() || probs.empty()) throw FormatError("probs must be a non-empty array of rows");

  AssignmentRequest request;
  for (const auto& a : alpha) {
    if (!a.is_number()) throw FormatError("alpha must be an array of numbers");
    request.alpha.values.push_back(a.get<double>());
  }
  if (auto error = validate_proportions(request.alpha)) throw FormatError("invalid alpha: " + *error);

  const std::size_t l = request.alpha.size();
  request.probs.resize(static_cast<Eigen::Index>(probs.size()), static_cast<Eigen::Index>(l));
  for (std::size_t r = 0; r < probs.size(); ++r) {
    const auto& row = probs[r];
    if (!row.is_array() || row.size() != l)
      throw FormatError("probs row " + std::to_string(r + 1) + " must have " + std::to_string(l) + " entries");
    double sum = 0.0;
    for (std::size_t c = 0; c < l; ++c) {
      if (!row[c].is_number()) throw FormatError("probs row " + std::to_string(r + 1) + " has a non-number");
      const double p = row[c].get<double>();
      if (!(p >= 0.0 && p <= 1.0)) throw FormatError("probs row " + std::to_string(r + 1) + " entry out of [0, 1]");
      request.probs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = p;
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw FormatError("probs row " + std::to_string(r + 1) + " does not sum to 1");
  }
  return request;
}

inline nlohmann::json assignment_to_json(const AssignmentResult& result) {
  std::vector<std::size_t> labels(result.labels);
  for (auto& y : labels) ++y;
  return {{"labels", labels}, {"neg_log_prob", result.total_neg_log_prob}};
}

}  // namespace llpdc
