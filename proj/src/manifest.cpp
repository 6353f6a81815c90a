#include "timnet/manifest.hpp"

#include <algorithm>
#include <charconv>
#include <fmt/format.h>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace timnet::cli {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

std::vector<std::string> Manifest::label_vocabulary() const {
  std::set<std::string> labels;
  for (const auto& row : rows) labels.insert(row.label);
  return {labels.begin(), labels.end()};
}

Manifest load_manifest(const std::filesystem::path& path, bool check_paths) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open manifest " + path.string());
  const std::filesystem::path base = path.parent_path();

  Manifest manifest;
  std::string line;
  std::size_t line_no = 0;
  bool saw_header = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (!saw_header) {
      if (fields.size() < 2 || trim(fields[0]) != "path" || trim(fields[1]) != "label" ||
          (fields.size() >= 3 && trim(fields[2]) != "speaker") || fields.size() > 3)
        throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                              ": header must be `path,label[,speaker]`");
      saw_header = true;
      continue;
    }
    if (fields.size() < 2 || fields.size() > 3)
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": expected 2 or 3 fields, got " +
                            std::to_string(fields.size()));
    ManifestRow row;
    const std::string raw_path = trim(fields[0]);
    if (raw_path.empty())
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": empty path");
    std::filesystem::path p(raw_path);
    row.path = p.is_absolute() ? p : base / p;
    row.label = trim(fields[1]);
    if (row.label.empty())
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": empty label");
    if (fields.size() == 3) row.speaker = trim(fields[2]);
    if (check_paths && !std::filesystem::exists(row.path))
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": file not found: " +
                            row.path.string());
    manifest.rows.push_back(std::move(row));
  }
  if (!saw_header)
    throw ValidationError(path.string() + ": missing header line `path,label,speaker`");
  return manifest;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw RuntimeFailure("cannot open " + path.string() + " for writing");
  os << "path,label,speaker\n";
  const std::filesystem::path base = path.parent_path();
  for (const auto& row : manifest.rows) {
    // store paths relative to the manifest when possible
    std::error_code ec;
    const auto rel = std::filesystem::relative(row.path, base, ec);
    const std::string p = (ec || rel.empty()) ? row.path.string() : rel.string();
    os << p << ',' << row.label << ',' << row.speaker << '\n';
  }
  if (!os) throw RuntimeFailure("short write to " + path.string());
}

// --- RunConfig ---------------------------------------------------------------

namespace {

struct KeyHandler {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::uint32_t parse_u32(const std::string& v, const std::string& key) {
  std::uint32_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size())
    throw ValidationError("config: key '" + key + "' expects an unsigned integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size())
    throw ValidationError("config: key '" + key + "' expects an unsigned integer, got '" + v + "'");
  return out;
}

double parse_f64(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return out;
  } catch (const std::exception&) {
    throw ValidationError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("config: key '" + key + "' expects true|false, got '" + v + "'");
}

std::string fmt_f64(double v) { return fmt::format("{:.17g}", v); }

const std::map<std::string, KeyHandler>& key_table() {
  static const std::map<std::string, KeyHandler> table = {
      // feature extraction
      {"sample_rate", {[](RunConfig& c, const std::string& v) { c.feature.sample_rate = parse_u32(v, "sample_rate"); },
                       [](const RunConfig& c) { return std::to_string(c.feature.sample_rate); }}},
      {"frame_ms", {[](RunConfig& c, const std::string& v) { c.feature.frame_ms = parse_f64(v, "frame_ms"); },
                    [](const RunConfig& c) { return fmt_f64(c.feature.frame_ms); }}},
      {"hop_ms", {[](RunConfig& c, const std::string& v) { c.feature.hop_ms = parse_f64(v, "hop_ms"); },
                  [](const RunConfig& c) { return fmt_f64(c.feature.hop_ms); }}},
      {"fft_size", {[](RunConfig& c, const std::string& v) { c.feature.fft_size = parse_u32(v, "fft_size"); },
                    [](const RunConfig& c) { return std::to_string(c.feature.fft_size); }}},
      {"n_mels", {[](RunConfig& c, const std::string& v) { c.feature.n_mels = parse_u32(v, "n_mels"); },
                  [](const RunConfig& c) { return std::to_string(c.feature.n_mels); }}},
      {"n_mfcc", {[](RunConfig& c, const std::string& v) { c.feature.n_mfcc = parse_u32(v, "n_mfcc"); },
                  [](const RunConfig& c) { return std::to_string(c.feature.n_mfcc); }}},
      {"log_floor", {[](RunConfig& c, const std::string& v) { c.feature.log_floor = parse_f64(v, "log_floor"); },
                     [](const RunConfig& c) { return fmt_f64(c.feature.log_floor); }}},
      // model
      {"n_tabs", {[](RunConfig& c, const std::string& v) { c.net.n_tabs = parse_u32(v, "n_tabs"); },
                  [](const RunConfig& c) { return std::to_string(c.net.n_tabs); }}},
      {"kernel_size", {[](RunConfig& c, const std::string& v) { c.net.kernel_size = parse_u32(v, "kernel_size"); },
                       [](const RunConfig& c) { return std::to_string(c.net.kernel_size); }}},
      {"channels", {[](RunConfig& c, const std::string& v) { c.net.channels = parse_u32(v, "channels"); },
                    [](const RunConfig& c) { return std::to_string(c.net.channels); }}},
      {"dropout", {[](RunConfig& c, const std::string& v) { c.net.dropout = parse_f64(v, "dropout"); },
                   [](const RunConfig& c) { return fmt_f64(c.net.dropout); }}},
      {"variant", {[](RunConfig& c, const std::string& v) { c.net.variant = model::variant_from_string(v); },
                   [](const RunConfig& c) { return model::to_string(c.net.variant); }}},
      {"input_t", {[](RunConfig& c, const std::string& v) { c.net.input_T = parse_u32(v, "input_t"); },
                   [](const RunConfig& c) { return std::to_string(c.net.input_T); }}},
      // optimization
      {"lr", {[](RunConfig& c, const std::string& v) { c.opt.lr = parse_f64(v, "lr"); },
              [](const RunConfig& c) { return fmt_f64(c.opt.lr); }}},
      {"batch", {[](RunConfig& c, const std::string& v) { c.opt.batch = parse_u32(v, "batch"); },
                 [](const RunConfig& c) { return std::to_string(c.opt.batch); }}},
      {"epochs", {[](RunConfig& c, const std::string& v) { c.opt.epochs = parse_u32(v, "epochs"); },
                  [](const RunConfig& c) { return std::to_string(c.opt.epochs); }}},
      {"smoothing", {[](RunConfig& c, const std::string& v) { c.opt.smoothing = parse_f64(v, "smoothing"); },
                     [](const RunConfig& c) { return fmt_f64(c.opt.smoothing); }}},
      {"beta1", {[](RunConfig& c, const std::string& v) { c.opt.beta1 = parse_f64(v, "beta1"); },
                 [](const RunConfig& c) { return fmt_f64(c.opt.beta1); }}},
      {"beta2", {[](RunConfig& c, const std::string& v) { c.opt.beta2 = parse_f64(v, "beta2"); },
                 [](const RunConfig& c) { return fmt_f64(c.opt.beta2); }}},
      {"eps_adam", {[](RunConfig& c, const std::string& v) { c.opt.eps_adam = parse_f64(v, "eps_adam"); },
                    [](const RunConfig& c) { return fmt_f64(c.opt.eps_adam); }}},
      {"seed", {[](RunConfig& c, const std::string& v) { c.opt.seed = parse_u64(v, "seed"); },
                [](const RunConfig& c) { return std::to_string(c.opt.seed); }}},
      {"shuffle", {[](RunConfig& c, const std::string& v) { c.opt.shuffle = parse_bool(v, "shuffle"); },
                   [](const RunConfig& c) { return c.opt.shuffle ? "true" : "false"; }}},
      // evaluation
      {"protocol", {[](RunConfig& c, const std::string& v) { c.protocol = eval::protocol_from_string(v); },
                    [](const RunConfig& c) { return eval::to_string(c.protocol); }}},
      {"folds", {[](RunConfig& c, const std::string& v) { c.folds = parse_u32(v, "folds"); },
                 [](const RunConfig& c) { return std::to_string(c.folds); }}},
      {"by_speaker", {[](RunConfig& c, const std::string& v) { c.by_speaker = parse_bool(v, "by_speaker"); },
                      [](const RunConfig& c) { return c.by_speaker ? "true" : "false"; }}},
      {"out_dir", {[](RunConfig& c, const std::string& v) { c.out_dir = v; },
                   [](const RunConfig& c) { return c.out_dir; }}},
  };
  return table;
}

}  // namespace

RunConfig parse_run_config_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> seen;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ValidationError(origin + ":" + std::to_string(line_no) + ": expected key=value");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    const auto it = key_table().find(key);
    if (it == key_table().end())
      throw ValidationError(origin + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second)
      throw ValidationError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    it->second.set(cfg, value);
  }
  // width of the model input is the MFCC count by construction
  cfg.net.in_channels = cfg.feature.n_mfcc;
  return cfg;
}

RunConfig parse_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open config " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_run_config_text(buf.str(), path.string());
}

std::string serialize_run_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, handler] : key_table()) {
    out += key;
    out += '=';
    out += handler.get(cfg);
    out += '\n';
  }
  return out;
}

std::string default_run_config_text() { return serialize_run_config(RunConfig{}); }

}  // namespace timnet::cli
