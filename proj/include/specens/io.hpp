#pragma once

// JSON / CSV surfaces: decode traces, experiment configs and reports.

#include <filesystem>
#include <string>

#include "json.hpp"
#include "specens/decoding.hpp"
#include "specens/harness.hpp"

namespace specens {

// Field names match DecodeTrace: tokens, steps, invocations,
// simulated_time, empirical_alpha (null when nothing was verified).
nlohmann::json trace_to_json(const DecodeTrace& trace);

EnsembleSpec parse_ensemble_spec(const nlohmann::json& j);
nlohmann::json ensemble_to_json(const EnsembleSpec& spec);

// Throws ConfigError with the offending field in the message.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const ExperimentConfig& config);

// FNV-1a 64 over the canonical JSON dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

// One row per cell with a header row; RFC 4180 quoting; full precision.
std::string report_to_csv(const ExperimentReport& report);
nlohmann::json report_to_json(const ExperimentReport& report);
// Display table rounded to 2 decimals.
std::string report_summary(const ExperimentReport& report);

std::string csv_escape(const std::string& field);
// Shortest round-trip decimal; empty for NaN.
std::string format_number(double x);

}  // namespace specens
