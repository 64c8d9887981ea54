#include "aether/config.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "aether/common.hpp"
#include "aether/error.hpp"

namespace aether {

namespace {

struct Ctx {
  const std::string& source;
  std::size_t line;
  std::string key;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ValidationError(source + ":" + std::to_string(line) + ": " + key + ": " + msg);
  }
};

double to_double(const std::string& v, const Ctx& c) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) c.fail("not a number: '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& v, const Ctx& c) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size()) c.fail("not a non-negative integer: '" + v + "'");
  return out;
}

std::size_t to_size(const std::string& v, const Ctx& c) { return static_cast<std::size_t>(to_u64(v, c)); }

bool to_bool(const std::string& v, const Ctx& c) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  c.fail("not a boolean: '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> to_double_list(const std::string& v, const Ctx& c) {
  std::vector<double> out;
  for (const auto& s : split_list(v)) out.push_back(to_double(s, c));
  if (out.empty()) c.fail("empty list");
  return out;
}

std::vector<std::uint64_t> to_u64_list(const std::string& v, const Ctx& c) {
  std::vector<std::uint64_t> out;
  for (const auto& s : split_list(v)) out.push_back(to_u64(s, c));
  if (out.empty()) c.fail("empty list");
  return out;
}

// "25:50, 50:100"
std::vector<std::pair<double, double>> to_pairs(const std::string& v, const Ctx& c) {
  std::vector<std::pair<double, double>> out;
  for (const auto& s : split_list(v)) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) c.fail("expected r_b:r_a pairs, got '" + s + "'");
    out.emplace_back(to_double(trim(s.substr(0, colon)), c), to_double(trim(s.substr(colon + 1)), c));
  }
  if (out.empty()) c.fail("empty list");
  return out;
}

using Setter = std::function<void(PipelineConfig&, const std::string&, const Ctx&)>;
using Table = std::map<std::string, std::map<std::string, Setter>>;

const Table& setters() {
  static const Table table = [] {
    Table t;
    auto& p = t["paths"];
    p["out_dir"] = [](PipelineConfig& c, const std::string& v, const Ctx&) { c.paths.out_dir = v; };
    p["field"] = [](PipelineConfig& c, const std::string& v, const Ctx&) { c.paths.field = v; };
    p["pois"] = [](PipelineConfig& c, const std::string& v, const Ctx&) { c.paths.pois = v; };
    p["text"] = [](PipelineConfig& c, const std::string& v, const Ctx&) { c.paths.text = v; };
    p["luc"] = [](PipelineConfig& c, const std::string& v, const Ctx&) { c.paths.luc = v; };
    p["regions"] = [](PipelineConfig& c, const std::string& v, const Ctx&) { c.paths.regions = v; };
    p["region_mask"] = [](PipelineConfig& c, const std::string& v, const Ctx&) { c.paths.region_mask = v; };
    p["sdm"] = [](PipelineConfig& c, const std::string& v, const Ctx&) { c.paths.sdm = v; };
    p["checkpoint"] = [](PipelineConfig& c, const std::string& v, const Ctx&) { c.paths.checkpoint = v; };

    auto& s = t["synth"];
    s["grid_size"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.synth.grid_size = to_size(v, x); };
    s["n_pois"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.synth.n_pois = to_size(v, x); };
    s["n_regions"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.synth.n_regions = to_size(v, x); };
    s["K"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.synth.K = to_size(v, x); };
    s["noise_sigma"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.synth.noise_sigma = to_double(v, x); };
    s["seed"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.synth.seed = to_u64(v, x); };
    s["d_t"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.synth.d_t = to_size(v, x); };
    s["n_luc"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.synth.n_luc = to_size(v, x); };
    s["channels"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.synth.channels = to_size(v, x); };
    s["cell_size"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.synth.cell_size = to_double(v, x); };
    s["region_radius"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.synth.region_radius = to_double(v, x); };
    s["bins"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.synth.bins = to_size(v, x); };
    s["sharpness"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.synth.sharpness = to_double(v, x); };
    s["text_noise"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.synth.text_noise = to_double(v, x); };
    s["sdm_scale"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.synth.sdm_scale = to_double(v, x); };
    s["semantic_weight"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.synth.semantic_weight = to_double(v, x); };
    s["text_mode"] = [](PipelineConfig& c, const std::string& v, const Ctx&) { c.synth.text_mode = parse_text_mode(v); };

    auto& a = t["align"];
    a["lambda"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.align.lambda = to_double(v, x); };
    a["tau_ae"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.align.tau_ae = to_double(v, x); };
    a["tau_poi"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.align.tau_poi = to_double(v, x); };
    a["batch_size"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.align.batch_size = to_size(v, x); };
    a["epochs"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.align.epochs = to_size(v, x); };
    a["seed"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.align.seed = to_u64(v, x); };
    a["r_b"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.align.r_b = to_double(v, x); };
    a["r_a"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.align.r_a = to_double(v, x); };
    a["hidden"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.align.hidden = to_size(v, x); };
    a["output_dim"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.align.output_dim = to_size(v, x); };
    a["lr"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.align.optimizer.learning_rate = to_double(v, x); };
    a["weight_decay"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.align.optimizer.weight_decay = to_double(v, x); };
    a["beta1"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.align.optimizer.beta1 = to_double(v, x); };
    a["beta2"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.align.optimizer.beta2 = to_double(v, x); };
    a["epsilon"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.align.optimizer.epsilon = to_double(v, x); };

    auto& k = t["task"];
    k["hidden"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.task.hidden = to_size(v, x); };
    k["lr"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.task.learning_rate = to_double(v, x); };
    k["max_epochs"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.task.max_epochs = to_size(v, x); };
    k["patience"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.task.patience = to_size(v, x); };
    k["standardize"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.task.standardize = to_bool(v, x); };

    auto& e = t["embed"];
    e["luc_radius"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.embed.luc_radius = to_double(v, x); };
    e["raw_pixel"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.embed.raw_pixel = to_bool(v, x); };
    e["tile_cells"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.embed.tile_cells = to_size(v, x); };

    t["eval"]["seeds"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.eval_seeds = to_u64_list(v, x); };

    auto& w = t["sweep"];
    w["lambdas"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.sweep.lambdas = to_double_list(v, x); };
    w["buffers"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.sweep.buffers = to_pairs(v, x); };
    w["fractions"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.sweep.fractions = to_double_list(v, x); };
    w["fraction_seed"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.sweep.fraction_seed = to_u64(v, x); };
    w["seeds"] = [](PipelineConfig& c, const std::string& v, const Ctx& x) { c.sweep_seeds = to_u64_list(v, x); };
    return t;
  }();
  return table;
}

}  // namespace

void PipelineConfig::validate() const {
  synth.validate();
  align.validate();
  if (task.max_epochs < 1) throw ValidationError("task.max_epochs must be >= 1");
  if (!(task.learning_rate > 0.0)) throw ValidationError("task.lr must be > 0");
  if (!(embed.luc_radius > 0.0)) throw ValidationError("embed.luc_radius must be > 0");
  if (embed.tile_cells < 1) throw ValidationError("embed.tile_cells must be >= 1");
  if (eval_seeds.empty()) throw ValidationError("eval.seeds must not be empty");
  if (sweep_seeds.empty()) throw ValidationError("sweep.seeds must not be empty");
}

PipelineConfig parse_pipeline_config(std::string_view text, const std::string& source) {
  PipelineConfig cfg;
  const auto& table = setters();
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string line(text.substr(pos, end - pos));
    pos = end + 1;
    // trailing comment: '#' or ';' after whitespace
    for (std::size_t i = 1; i < line.size(); ++i) {
      if ((line[i] == '#' || line[i] == ';') && (line[i - 1] == ' ' || line[i - 1] == '\t')) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    ++line_no;
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ValidationError(source + ":" + std::to_string(line_no) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!table.count(section)) throw ValidationError(source + ":" + std::to_string(line_no) + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError(source + ":" + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) throw ValidationError(source + ":" + std::to_string(line_no) + ": key '" + key + "' outside a section");
    const auto& keys = table.at(section);
    const auto it = keys.find(key);
    if (it == keys.end()) {
      throw ValidationError(source + ":" + std::to_string(line_no) + ": unknown key '" + key + "' in section [" + section + "]");
    }
    it->second(cfg, value, Ctx{source, line_no, section + "." + key});
  }
  return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_pipeline_config(ss.str(), path);
}

PathConfig resolve_paths(const PathConfig& p) {
  namespace fs = std::filesystem;
  PathConfig r = p;
  const BundlePaths bundle = bundle_paths((fs::path(p.out_dir) / "synth").string());
  auto fill = [](std::string& v, const std::string& d) {
    if (v.empty()) v = d;
  };
  fill(r.field, bundle.field);
  fill(r.pois, bundle.pois);
  fill(r.text, bundle.text);
  fill(r.luc, bundle.luc);
  if (r.region_mask.empty()) fill(r.regions, bundle.regions);
  fill(r.sdm, bundle.sdm);
  fill(r.checkpoint, (fs::path(p.out_dir) / "pretrain" / "checkpoint.aeth").string());
  return r;
}

}  // namespace aether
