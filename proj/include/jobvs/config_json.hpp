#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "jobvs/error.hpp"
#include "jobvs/lattice.hpp"
#include "jobvs/objective.hpp"
#include "jobvs/phantom.hpp"
#include "jobvs/training.hpp"
#include "jobvs/volume.hpp"

namespace jobvs {

/// Schema violation in a JSON config; `path` is the dotted field path.
class ConfigError : public UsageError {
 public:
  ConfigError(std::string path, std::string reason)
      : UsageError("config field '" + path + "': " + reason), path_(std::move(path)), reason_(std::move(reason)) {}
  const std::string& path() const { return path_; }
  const std::string& reason() const { return reason_; }

 private:
  std::string path_, reason_;
};

// Readers are strict about unknown keys and types; missing keys keep their
// defaults.
void to_json(nlohmann::json& j, TaskMode m);
void from_json(const nlohmann::json& j, TaskMode& m);
void to_json(nlohmann::json& j, const LatticeConfig& c);
void from_json(const nlohmann::json& j, LatticeConfig& c);
void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);
void to_json(nlohmann::json& j, const ATConfig& a);
void from_json(const nlohmann::json& j, ATConfig& a);
void to_json(nlohmann::json& j, const AugmentProbs& a);
void from_json(const nlohmann::json& j, AugmentProbs& a);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const PhantomConfig& c);
void from_json(const nlohmann::json& j, PhantomConfig& c);
void to_json(nlohmann::json& j, const CohortStats& s);
void from_json(const nlohmann::json& j, CohortStats& s);
void to_json(nlohmann::json& j, const EpochLog& e);

nlohmann::json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& j);

}  // namespace jobvs
