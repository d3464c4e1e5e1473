#include <sstream>

#include <gtest/gtest.h>

#include "llpdc/datagen.hpp"
#include "llpdc/io.hpp"
#include "oracles/finite_difference.hpp"

using namespace llpdc;

TEST(Checkpoint, RoundTripIsExact) {
  for (auto arch : {Architecture::linear(), Architecture::one_hidden(7)}) {
    const ClassifierParams params = make_classifier(arch, 5, 3, 21);
    const std::string text = checkpoint_to_json(params).dump();
    const ClassifierParams back = checkpoint_from_json(nlohmann::json::parse(text));
    EXPECT_EQ(back.architecture, params.architecture);
    EXPECT_EQ(oracle::flatten(back), oracle::flatten(params));
  }
}

TEST(Checkpoint, RejectsWrongFormatTag) {
  auto doc = checkpoint_to_json(make_classifier(Architecture::linear(), 2, 2, 0));
  doc["format"] = "something-else";
  EXPECT_THROW(checkpoint_from_json(doc), FormatError);
  doc = checkpoint_to_json(make_classifier(Architecture::linear(), 2, 2, 0));
  doc["layers"][0]["bias"] = {1.0};
  EXPECT_THROW(checkpoint_from_json(doc), FormatError);
}

TEST(BagManifest, RoundTrip) {
  const Dataset data = make_gaussian_mixture(3, 2, 20, 1.0, 0);
  const auto bags = partition_into_bags(data, BagSpec{8, {}, 3, false});
  std::stringstream buffer;
  write_bag_manifest(buffer, bags);
  const auto first_line = buffer.str().substr(0, buffer.str().find('\n'));
  const auto record = nlohmann::json::parse(first_line);
  EXPECT_TRUE(record.contains("indices"));
  EXPECT_TRUE(record.contains("alpha"));
  const auto back = read_bag_manifest(buffer);
  ASSERT_EQ(back.size(), bags.size());
  for (std::size_t b = 0; b < bags.size(); ++b) {
    EXPECT_EQ(back[b].instance_indices, bags[b].instance_indices);
    EXPECT_EQ(back[b].counts, bags[b].counts);
  }
}

TEST(MetricsCsv, HeaderAndRows) {
  std::ostringstream out;
  write_metrics_csv(out, {EpochMetrics{1, 0.5, 0.25, 0.75, 0.5, 0.9}, EpochMetrics{2, 0.4, 0.0, 0.0, 0.0}});
  EXPECT_EQ(out.str(),
            "epoch,bag_loss,instance_loss,pl_accuracy,pl_ratio,test_accuracy\n"
            "1,0.5,0.25,0.75,0.5,0.9\n"
            "2,0.4,0,0,0,nan\n");
}

TEST(AssignmentRequest, ParsesAndAnswersToyExample) {
  const auto request =
      parse_assignment_request(nlohmann::json::parse(R"({"probs": [[0.9,0.1],[0.6,0.4],[0.2,0.8]], "alpha": [0.6666666666666666, 0.3333333333333333]})"));
  const auto result = assign_pseudo_labels(request.probs, counts_from_proportions(request.alpha, 3));
  const auto out = assignment_to_json(result);
  EXPECT_EQ(out["labels"], nlohmann::json::parse("[1,1,2]"));
  EXPECT_NEAR(out["neg_log_prob"].get<double>(), -std::log(0.432), 1e-12);
}

TEST(AssignmentRequest, SchemaErrors) {
  auto message = [](const char* text) {
    try {
      parse_assignment_request(nlohmann::json::parse(text));
    } catch (const FormatError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_EQ(message(R"({"probs": [[0.5,0.5]]})"), "missing field alpha");
  EXPECT_EQ(message(R"({"alpha": [0.5,0.5]})"), "missing field probs");
  EXPECT_NE(message(R"({"probs": [[0.5,0.5]], "alpha": [0.5,0.6]})").find("invalid alpha"), std::string::npos);
  EXPECT_NE(message(R"({"probs": [[0.5,0.4]], "alpha": [0.5,0.5]})").find("sum to 1"), std::string::npos);
  EXPECT_NE(message(R"({"probs": [[0.5,0.5,0.0]], "alpha": [0.5,0.5]})").find("entries"), std::string::npos);
}
