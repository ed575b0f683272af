#pragma once

// Experiment configuration files. The format is a flat YAML mapping of typed
// keys; a top-level key named after a subcommand holds a mapping of keys that
// apply only to that subcommand. Overrides use the same keys as key=value.
//
//   seed: 7
//   methods: [em, lm:lamperti]
//   convergence:
//     h_grid.count: 10

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "bdx/harness.hpp"

namespace bdx {

/// Config problems: unreadable file, syntax error, unknown key or invalid
/// value. line/column are 1-based, 0 when not tied to a file position.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& message, std::string source = {}, int line = 0, int column = 0);
  const std::string& source() const { return source_; }
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  std::string source_;
  int line_;
  int column_;
};

struct ResolvedConfig {
  ExperimentPlan plan;
  /// Keys given in the file or by override, in application order.
  std::vector<std::string> explicit_keys;
  /// Keys left at their subcommand default.
  std::vector<std::string> default_keys;
};

/// Every recognised key, in the order the writer emits them.
std::vector<std::string> config_keys();

/// Parses config text (empty text is allowed) on top of default_plan, then
/// applies "key=value" overrides, then validates.
ResolvedConfig parse_config_text(const std::string& text, const std::string& subcommand, bool paper_scale,
                                 const std::vector<std::string>& overrides = {},
                                 const std::string& source = "<config>");

/// Reads a config file; an empty path means no file.
ResolvedConfig parse_config(const std::string& path, const std::string& subcommand, bool paper_scale,
                            const std::vector<std::string>& overrides = {});

/// Fully resolved plan in the config format; parsing it back yields an equal plan.
std::string write_config(const ExperimentPlan& plan);

/// FNV-1a over write_config(plan), as 16 hex digits.
std::string plan_hash(const ExperimentPlan& plan);

}  // namespace bdx
