#include "marl/evalkit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <utility>

#include "marl/common.hpp"
#include "marl/envcore.hpp"
#include "marl/nn.hpp"
#include "marl/scenarios.hpp"

namespace marl::evalkit {

namespace {

constexpr uint64_t kEvalEnvStream = 5000;
constexpr uint64_t kEvalActStream = 6000;

constexpr const char* kResultHeader = "scenario,label,seed,episodes,mean_focal_return";

// Shortest decimal form that parses back to the identical double, so result
// files round trip bit for bit.
std::string fmt_exact(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

bool parse_double(const std::string& text, double& out) {
  if (text.empty()) return false;
  char* end = nullptr;
  out = std::strtod(text.c_str(), &end);
  return end == text.c_str() + text.size();
}

bool parse_u64(const std::string& text, uint64_t& out) {
  if (text.empty()) return false;
  const auto res =
      std::from_chars(text.data(), text.data() + text.size(), out);
  return res.ec == std::errc() && res.ptr == text.data() + text.size();
}

bool parse_int(const std::string& text, int& out) {
  if (text.empty()) return false;
  const auto res =
      std::from_chars(text.data(), text.data() + text.size(), out);
  return res.ec == std::errc() && res.ptr == text.data() + text.size();
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

double mean_left_to_right(const std::vector<double>& values) {
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

void require_plain_text(const std::string& value, const std::string& what) {
  if (value.find(',') != std::string::npos ||
      value.find('\n') != std::string::npos ||
      value.find('\r') != std::string::npos)
    throw std::invalid_argument(what + " must not contain commas or newlines");
}

std::string substrate_of(const std::string& scenario) {
  const size_t dot = scenario.find('.');
  return dot == std::string::npos ? scenario : scenario.substr(0, dot);
}

// Registry position for row ordering: the bare substrate row sorts first,
// then scenarios by index.
std::optional<int> scenario_index(const std::string& scenario) {
  const std::string marker = ".scenario_";
  const size_t at = scenario.find(marker);
  if (at == std::string::npos) return std::nullopt;
  int k = 0;
  if (!parse_int(scenario.substr(at + marker.size()), k)) return std::nullopt;
  return k;
}

std::string display_name(const std::string& scenario,
                         const std::string& substrate) {
  if (scenario == substrate) return "Substrate";
  const auto k = scenario_index(scenario);
  if (k) return "Scenario " + std::to_string(*k);
  return scenario;
}

std::string fmt_cell(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return std::string(buf);
}

}  // namespace

EvalResult evaluate(const std::string& checkpoint_path,
                    const std::string& scenario_name, int episodes,
                    uint64_t seed, const std::string& label) {
  if (episodes < 1) throw std::invalid_argument("episodes must be >= 1");

  std::vector<nn::Params> population;
  try {
    population = nn::load_checkpoint(checkpoint_path);
  } catch (const std::exception& e) {
    throw CheckpointLoadError(e.what());
  }
  if (population.empty())
    throw CheckpointLoadError("checkpoint holds no agents: " +
                              checkpoint_path);

  const auto env =
      make_scenario_by_name(scenario_name, derive_seed(seed, kEvalEnvStream));
  const EnvSpec& spec = env->spec();
  for (const auto& params : population)
    if (params.spec.obs_dim != spec.obs_dim ||
        params.spec.num_actions != spec.num_actions)
      throw CheckpointLoadError(
          "checkpoint shape does not fit the scenario: " + checkpoint_path);

  std::mt19937 rng(
      static_cast<uint32_t>(derive_seed(seed, kEvalActStream)));

  EvalResult result;
  result.scenario = scenario_name;
  result.label = label;
  result.seed = seed;
  result.episodes = episodes;
  result.episode_returns.reserve(static_cast<size_t>(episodes));

  const size_t slots = static_cast<size_t>(spec.num_players);
  const size_t pop = population.size();
  std::vector<size_t> slot_agent(slots);
  std::vector<double> slot_return(slots);
  std::vector<int> actions(slots);

  for (int e = 0; e < episodes; ++e) {
    TimeStep ts = env->reset();
    for (size_t i = 0; i < slots; ++i)
      slot_agent[i] = (static_cast<size_t>(e) * slots + i) % pop;
    std::fill(slot_return.begin(), slot_return.end(), 0.0);
    while (!ts.last()) {
      for (size_t i = 0; i < slots; ++i) {
        const nn::ForwardOut out =
            nn::forward(population[slot_agent[i]], ts.observations[i]);
        actions[i] = nn::sample_action(out.logits, rng).action;
      }
      ts = env->step(actions);
      for (size_t i = 0; i < slots; ++i) slot_return[i] += ts.rewards[i];
    }
    double total = 0.0;
    for (double r : slot_return) total += r;
    result.episode_returns.push_back(total / static_cast<double>(slots));
  }

  result.mean_focal_return = mean_left_to_right(result.episode_returns);
  return result;
}

void write_result(const EvalResult& result, const std::string& path) {
  if (result.episodes < 1)
    throw std::invalid_argument("result must cover at least one episode");
  if (result.episode_returns.size() != static_cast<size_t>(result.episodes))
    throw std::invalid_argument("episode count does not match returns list");
  if (result.scenario.empty())
    throw std::invalid_argument("result needs a scenario name");
  require_plain_text(result.scenario, "scenario");
  require_plain_text(result.label, "label");
  for (double r : result.episode_returns)
    if (!std::isfinite(r))
      throw std::invalid_argument("episode returns must be finite");
  if (!std::isfinite(result.mean_focal_return) ||
      result.mean_focal_return != mean_left_to_right(result.episode_returns))
    throw std::invalid_argument(
        "mean_focal_return must be the left-to-right mean of the returns");

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open result file: " + path);
  out << kResultHeader << '\n'
      << result.scenario << ',' << result.label << ',' << result.seed << ','
      << result.episodes << ',' << fmt_exact(result.mean_focal_return)
      << '\n';
  for (size_t i = 0; i < result.episode_returns.size(); ++i)
    out << "episode," << i << ',' << fmt_exact(result.episode_returns[i])
        << '\n';
  out.flush();
  if (!out) throw std::runtime_error("failed writing result file: " + path);
}

EvalResult read_result(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open result file");

  std::string line;
  int line_no = 0;
  auto next_line = [&](const std::string& what) {
    if (!std::getline(in, line))
      throw ParseError(path, line_no + 1, "missing " + what);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
  };

  next_line("header");
  if (line != kResultHeader)
    throw ParseError(path, line_no, "unexpected header: " + line);

  next_line("result line");
  const auto fields = split_fields(line);
  if (fields.size() != 5)
    throw ParseError(path, line_no, "expected 5 result fields");

  EvalResult result;
  result.scenario = fields[0];
  result.label = fields[1];
  if (result.scenario.empty())
    throw ParseError(path, line_no, "empty scenario name");
  if (!parse_u64(fields[2], result.seed))
    throw ParseError(path, line_no, "bad seed: " + fields[2]);
  if (!parse_int(fields[3], result.episodes) || result.episodes < 1)
    throw ParseError(path, line_no, "bad episode count: " + fields[3]);
  if (!parse_double(fields[4], result.mean_focal_return) ||
      !std::isfinite(result.mean_focal_return))
    throw ParseError(path, line_no, "bad mean: " + fields[4]);

  result.episode_returns.reserve(static_cast<size_t>(result.episodes));
  for (int i = 0; i < result.episodes; ++i) {
    next_line("episode line " + std::to_string(i));
    const auto ep = split_fields(line);
    if (ep.size() != 3 || ep[0] != "episode")
      throw ParseError(path, line_no, "expected an episode line");
    int index = -1;
    if (!parse_int(ep[1], index) || index != i)
      throw ParseError(path, line_no, "episode index out of order: " + ep[1]);
    double value = 0.0;
    if (!parse_double(ep[2], value) || !std::isfinite(value))
      throw ParseError(path, line_no, "bad episode return: " + ep[2]);
    result.episode_returns.push_back(value);
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty())
      throw ParseError(path, line_no, "trailing content after episodes");
  }
  if (result.mean_focal_return !=
      mean_left_to_right(result.episode_returns))
    throw ParseError(path, 2, "mean does not match the episode returns");
  return result;
}

EvalTable aggregate(const std::vector<EvalResult>& results) {
  if (results.empty()) throw EmptyInput();

  const std::string substrate = substrate_of(results[0].scenario);
  for (const auto& r : results) {
    const std::string other = substrate_of(r.scenario);
    if (other != substrate) throw MixedSubstrates(substrate, other);
  }

  std::vector<std::string> labels;
  std::vector<std::string> scenarios;
  std::map<std::pair<std::string, std::string>,
           std::vector<std::pair<uint64_t, double>>>
      groups;
  for (const auto& r : results) {
    if (std::find(labels.begin(), labels.end(), r.label) == labels.end())
      labels.push_back(r.label);
    if (std::find(scenarios.begin(), scenarios.end(), r.scenario) ==
        scenarios.end())
      scenarios.push_back(r.scenario);
    groups[{r.scenario, r.label}].emplace_back(r.seed, r.mean_focal_return);
  }

  // Substrate self-play first, then scenarios by registry index.
  std::sort(scenarios.begin(), scenarios.end(),
            [&](const std::string& a, const std::string& b) {
              const bool sub_a = a == substrate;
              const bool sub_b = b == substrate;
              if (sub_a != sub_b) return sub_a;
              const auto ia = scenario_index(a);
              const auto ib = scenario_index(b);
              if (ia && ib && *ia != *ib) return *ia < *ib;
              if (ia.has_value() != ib.has_value()) return ia.has_value();
              return a < b;
            });

  EvalTable table;
  table.substrate = substrate;
  table.labels = labels;
  for (const auto& scenario : scenarios) {
    table.rows.push_back(display_name(scenario, substrate));
    std::vector<std::optional<double>> row;
    for (const auto& label : labels) {
      const auto it = groups.find({scenario, label});
      if (it == groups.end()) {
        row.push_back(std::nullopt);
        continue;
      }
      // Fixed summation order regardless of input file order.
      auto values = it->second;
      std::sort(values.begin(), values.end());
      double sum = 0.0;
      for (const auto& [seed, mean] : values) sum += mean;
      row.push_back(sum / static_cast<double>(values.size()));
    }
    table.cells.push_back(std::move(row));
  }
  return table;
}

EvalTable aggregate_files(const std::vector<std::string>& paths) {
  std::vector<EvalResult> results;
  results.reserve(paths.size());
  for (const auto& path : paths) results.push_back(read_result(path));
  return aggregate(results);
}

std::string render_table_text(const EvalTable& table) {
  std::vector<std::string> header{"scenario"};
  header.insert(header.end(), table.labels.begin(), table.labels.end());

  std::vector<std::vector<std::string>> body;
  for (size_t r = 0; r < table.rows.size(); ++r) {
    std::vector<std::string> row{table.rows[r]};
    for (const auto& cell : table.cells[r])
      row.push_back(cell ? fmt_cell(*cell) : "");
    body.push_back(std::move(row));
  }

  std::vector<size_t> widths(header.size());
  for (size_t c = 0; c < header.size(); ++c) {
    widths[c] = header[c].size();
    for (const auto& row : body) widths[c] = std::max(widths[c], row[c].size());
  }

  std::ostringstream out;
  auto emit_row = [&](const std::vector<std::string>& row) {
    std::string line;
    for (size_t c = 0; c < row.size(); ++c) {
      std::string cell = row[c];
      if (c == 0)
        cell.resize(widths[c], ' ');  // names left, numbers right
      else
        cell.insert(0, widths[c] - cell.size(), ' ');
      if (c > 0) line += "  ";
      line += cell;
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out << line << '\n';
  };
  emit_row(header);
  for (const auto& row : body) emit_row(row);
  return out.str();
}

std::string render_table_csv(const EvalTable& table) {
  std::ostringstream out;
  out << "scenario";
  for (const auto& label : table.labels) out << ',' << label;
  out << '\n';
  for (size_t r = 0; r < table.rows.size(); ++r) {
    out << table.rows[r];
    for (const auto& cell : table.cells[r]) {
      out << ',';
      if (cell) out << fmt_exact(*cell);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace marl::evalkit
