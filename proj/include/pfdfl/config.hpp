#pragma once

#include <filesystem>
#include <vector>

#include "json.hpp"
#include "pfdfl/data.hpp"
#include "pfdfl/dual_model.hpp"
#include "pfdfl/encoder.hpp"
#include "pfdfl/metrics.hpp"
#include "pfdfl/trainer.hpp"

namespace pfdfl {

using Json = nlohmann::json;

struct AnalysisConfig {
  std::vector<double> ratios{0.8, 0.5, 0.2, 0.05, 0.01};
  /// Epochs per sweep or ablation run; 0 uses train.epochs.
  std::size_t epochs = 0;
};

/// Everything a run needs; serialized with sections encoder, train, data,
/// loss and analysis.
struct RunConfig {
  EncoderConfig encoder;
  TrainConfig train;
  SyntheticSpec data;
  AnalysisConfig analysis;

  void validate() const;
};

/// Fully populated document (loss weights live in their own section).
Json to_json(const RunConfig& cfg);
/// Overlays the keys present in doc onto base. Unknown sections or keys and
/// wrongly typed values raise ParseError naming the offending key.
RunConfig merge_run_config(const RunConfig& base, const Json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

Json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const Json& doc);

Json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const Json& doc);

Json to_json(const RunRecord& r);
RunRecord run_record_from_json(const Json& doc);
RunRecord load_run_record(const std::filesystem::path& path);

/// Two-space indented text with a trailing newline.
std::string dump_json(const Json& doc);

}  // namespace pfdfl
