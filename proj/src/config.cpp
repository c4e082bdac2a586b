#include "crispedge/config.hpp"

#include <algorithm>
#include <charconv>
#include <ostream>
#include <sstream>

#include "crispedge/errors.hpp"
#include "crispedge/io.hpp"

namespace crispedge {

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"seed", "1", "seed for generation, initialization, shuffling and gradient checks"},
      {"jobs", "1", "worker threads for per-image work; outputs do not depend on it"},
      {"gen.count", "200", "number of synthetic samples"},
      {"gen.height", "64", "image rows"},
      {"gen.width", "64", "image columns"},
      {"gen.channels", "3", "image channels (1 or 3)"},
      {"gen.annotators", "3", "annotation maps per image"},
      {"gen.jitter", "1", "maximum annotator displacement in pixels"},
      {"gen.holdout_percent", "20", "percentage of ids tagged test"},
      {"net.stages", "8/1,16/2,32/2,64/2", "encoder stages as channels/stride"},
      {"net.refine", "r1a=skip(s1,s3) r1b=skip(s2,s4) r1c=adjacent(s2,s3,s4) | r2a=adjacent(r1a,r1b,r1c)",
       "refine levels separated by |"},
      {"train.epochs", "40", "passes over the training split"},
      {"train.batch_size", "10", "samples per step"},
      {"train.loss", "awl", "ce, sce, sd, sce+sd or awl"},
      {"train.kappa", "1", "sce weight (sce+sd) or initial kappa (awl)"},
      {"train.tau", "1", "sd weight (sce+sd) or initial tau (awl)"},
      {"train.weight_floor", "0", "positive consensus weights remapped onto (floor, 1]"},
      {"train.lr", "0.01", "learning rate"},
      {"train.momentum", "0.9", "SGD momentum"},
      {"train.weight_decay", "0.0001", "L2 penalty on network weights"},
      {"train.lr_decay", "0.1", "learning-rate factor at each milestone"},
      {"train.lr_decay_epochs", "30", "0-based epochs at which the rate decays, comma-separated"},
      {"loss.zeta", "0.1", "soft dice balance in the adaptive loss"},
      {"loss.epsilon", "1e-06", "soft dice guard"},
      {"loss.clamp", "1e-06", "probability clamp before logarithms"},
      {"eval.max_dist_fraction", "0.048", "match tolerance as a fraction of the image diagonal"},
      {"eval.thresholds", "33", "uniform thresholds k/(n+1)"},
      {"infer.scales", "1", "comma-separated scales; more than one averages resized predictions"},
      {"gradcheck.seeds", "20", "consecutive seeds per op"},
      {"gradcheck.step", "1e-05", "central-difference step"},
      {"ablate.modes", "sce,sd,sce+sd,awl", "loss modes trained by ablate"},
  };
  return keys;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, std::string_view text) {
  T v{};
  const std::string_view t = trim(text);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size()) {
    throw ConfigError(key + ": '" + std::string(text) + "' is not a valid number");
  }
  return v;
}

std::vector<std::string_view> split_commas(std::string_view s) {
  std::vector<std::string_view> out;
  if (trim(s).empty()) return out;
  for (;;) {
    const auto comma = s.find(',');
    out.push_back(trim(s.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

}  // namespace

Config::Config() {
  for (const ConfigKey& k : config_keys()) values_[k.key] = {k.default_value, "default"};
}

void Config::set(const std::string& key, const std::string& value, const std::string& source) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = {value, source};
}

void Config::merge_assignment(std::string_view assignment, const std::string& source) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError(source + ": expected key=value, got '" + std::string(assignment) + "'");
  }
  const std::string key(trim(assignment.substr(0, eq)));
  const std::string value(trim(assignment.substr(eq + 1)));
  set(key, value, source);
}

void Config::merge_text(std::string_view text, const std::string& source) {
  int line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (trim(line).empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    if (line.find('=') == std::string_view::npos) {
      throw ConfigError(where + ": expected 'key = value'");
    }
    try {
      merge_assignment(line, where);
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      throw ConfigError(msg.rfind(where, 0) == 0 ? msg : where + ": " + msg);
    }
  }
}

void Config::merge_file(const std::filesystem::path& path) { merge_text(read_file(path), path.string()); }

const std::string& Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.value;
}

long Config::get_int(const std::string& key) const { return parse_number<long>(key, get(key)); }

std::uint64_t Config::get_u64(const std::string& key) const { return parse_number<std::uint64_t>(key, get(key)); }

double Config::get_double(const std::string& key) const { return parse_number<double>(key, get(key)); }

std::vector<double> Config::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (std::string_view s : split_commas(get(key))) out.push_back(parse_number<double>(key, s));
  return out;
}

std::vector<int> Config::get_ints(const std::string& key) const {
  std::vector<int> out;
  for (std::string_view s : split_commas(get(key))) out.push_back(parse_number<int>(key, s));
  return out;
}

std::vector<std::string> Config::get_strings(const std::string& key) const {
  std::vector<std::string> out;
  for (std::string_view s : split_commas(get(key))) out.emplace_back(s);
  return out;
}

namespace {

bool selected(const std::string& key, const std::vector<std::string>& prefixes) {
  if (prefixes.empty()) return true;
  return std::any_of(prefixes.begin(), prefixes.end(), [&](const std::string& p) { return key.rfind(p, 0) == 0; });
}

}  // namespace

void Config::show(std::ostream& os, const std::vector<std::string>& prefixes) const {
  for (const ConfigKey& k : config_keys()) {
    if (!selected(k.key, prefixes)) continue;
    const Entry& e = values_.at(k.key);
    os << k.key << " = " << e.value << "  # " << e.source << '\n';
  }
}

std::string Config::format(const std::vector<std::string>& prefixes) const {
  std::ostringstream os;
  for (const ConfigKey& k : config_keys()) {
    if (selected(k.key, prefixes)) os << k.key << " = " << values_.at(k.key).value << '\n';
  }
  return os.str();
}

}  // namespace crispedge
