#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace marl::evalkit {

struct CheckpointLoadError : std::runtime_error {
  explicit CheckpointLoadError(const std::string& what)
      : std::runtime_error(what) {}
};

struct EmptyInput : std::runtime_error {
  EmptyInput() : std::runtime_error("no evaluation results to aggregate") {}
};

struct MixedSubstrates : std::runtime_error {
  MixedSubstrates(const std::string& a, const std::string& b)
      : std::runtime_error("results mix substrates: " + a + " and " + b) {}
};

struct ParseError : std::runtime_error {
  ParseError(const std::string& path, int line, const std::string& what)
      : std::runtime_error(path + ":" + std::to_string(line) + ": " + what),
        line(line) {}
  int line;
};

// One frozen-policy evaluation: a checkpoint played on one scenario with one
// seed. mean_focal_return is the left-to-right arithmetic mean of
// episode_returns, each of which is the per-episode focal return averaged
// over focal slots.
struct EvalResult {
  std::string scenario;
  std::string label;
  uint64_t seed = 0;
  int episodes = 0;
  double mean_focal_return = 0.0;
  std::vector<double> episode_returns;
};

// Plays the checkpointed population on a scenario without learning, sampling
// actions stochastically. With more than one agent in the checkpoint, focal
// slots cycle through the population across episodes. Throws
// CheckpointLoadError or UnknownScenario.
EvalResult evaluate(const std::string& checkpoint_path,
                    const std::string& scenario_name, int episodes,
                    uint64_t seed, const std::string& label = "");

// Lossless CSV round trip. write_result rejects non-finite values and
// results that violate the mean invariant; read_result throws ParseError
// with the offending line number.
void write_result(const EvalResult& result, const std::string& path);
EvalResult read_result(const std::string& path);

// Cross-seed summary grid: one row per scenario (the bare-substrate self-play
// row first), one column per checkpoint label, each cell a mean over seeds.
struct EvalTable {
  std::string substrate;
  std::vector<std::string> rows;    // display names, "Substrate" first
  std::vector<std::string> labels;  // column order: first appearance
  std::vector<std::vector<std::optional<double>>> cells;  // [row][column]
};

// Groups results by (scenario, label) and averages across seeds. All results
// must come from one substrate. Cell values do not depend on input order.
EvalTable aggregate(const std::vector<EvalResult>& results);
EvalTable aggregate_files(const std::vector<std::string>& paths);

std::string render_table_text(const EvalTable& table);
std::string render_table_csv(const EvalTable& table);

}  // namespace marl::evalkit
