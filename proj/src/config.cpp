#include "fmla/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "fmla/error.hpp"

namespace fmla {

void ModelConfig::validate() const {
  if (num_blocks < 1) throw ConfigError("model.num_blocks must be >= 1");
  if (num_heads < 1) throw ConfigError("model.num_heads must be >= 1");
  if (d < 1 || d % num_heads != 0)
    throw ConfigError("model.d (" + std::to_string(d) +
                      ") must be positive and divisible by model.num_heads (" +
                      std::to_string(num_heads) + ")");
  if (c < 1) throw ConfigError("model.c must be >= 1");
  if (static_cast<int>(dcn_channels.size()) != num_blocks)
    throw ConfigError("model.dcn_channels needs one entry per block (" +
                      std::to_string(num_blocks) + "), got " +
                      std::to_string(dcn_channels.size()));
  for (int ch : dcn_channels)
    if (ch < 1 || ch % num_heads != 0)
      throw ConfigError("each model.dcn_channels entry must be positive and "
                        "divisible by model.num_heads");
  if (kernel_size < 1 || kernel_size % 2 == 0)
    throw ConfigError("model.kernel_size must be odd and positive");
  if (mask_ratio < 0.0 || mask_ratio >= 1.0)
    throw ConfigError("model.mask_ratio must lie in [0,1)");
  if (mask_phase != 0 && mask_phase != 1)
    throw ConfigError("model.mask_phase must be 0 or 1");
  if (self_distill_n < 1) throw ConfigError("model.self_distill_n must be >= 1");
  if (ffn_expansion < 1) throw ConfigError("model.ffn_expansion must be >= 1");
  if (num_classes < 2) throw ConfigError("model.num_classes must be >= 2");
  if (seq_len < 1) throw ConfigError("model.seq_len must be >= 1");
}

namespace {

std::string trim(std::string s) {
  auto issp = [](unsigned char ch) { return std::isspace(ch); };
  while (!s.empty() && issp(s.front())) s.erase(s.begin());
  while (!s.empty() && issp(s.back())) s.pop_back();
  return s;
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int r = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("bad integer for " + key + ": '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double r = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("bad number for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_int(key, item));
  }
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

void RunConfig::apply_override(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  if (key == "model.num_blocks") model.num_blocks = parse_int(key, value);
  else if (key == "model.d") model.d = parse_int(key, value);
  else if (key == "model.num_heads") model.num_heads = parse_int(key, value);
  else if (key == "model.c") model.c = parse_int(key, value);
  else if (key == "model.dcn_channels") model.dcn_channels = parse_int_list(key, value);
  else if (key == "model.kernel_size") model.kernel_size = parse_int(key, value);
  else if (key == "model.mask_ratio") model.mask_ratio = parse_double(key, value);
  else if (key == "model.mask_phase") model.mask_phase = parse_int(key, value);
  else if (key == "model.mask_per_head") model.mask_per_head = parse_bool(key, value);
  else if (key == "model.mask_scope") {
    if (value == "per_head") model.mask_scope = MaskScope::kPerHead;
    else if (value == "block_output") model.mask_scope = MaskScope::kBlockOutput;
    else throw ConfigError("model.mask_scope must be per_head or block_output");
  }
  else if (key == "model.self_distill_n") model.self_distill_n = parse_int(key, value);
  else if (key == "model.alpha") model.alpha = parse_double(key, value);
  else if (key == "model.beta") model.beta = parse_double(key, value);
  else if (key == "model.ffn_expansion") model.ffn_expansion = parse_int(key, value);
  else if (key == "model.pooling_residual") model.pooling_residual = parse_bool(key, value);
  else if (key == "model.normalize_f") model.normalize_f = parse_bool(key, value);
  else if (key == "model.num_classes") model.num_classes = parse_int(key, value);
  else if (key == "model.seq_len") model.seq_len = parse_int(key, value);
  else if (key == "model.seed") model.seed = static_cast<std::uint64_t>(std::stoull(value));
  else if (key == "train.lr") train.lr = parse_double(key, value);
  else if (key == "train.batch_size") train.batch_size = parse_int(key, value);
  else if (key == "train.epochs") train.epochs = parse_int(key, value);
  else if (key == "train.eval_every") train.eval_every = parse_int(key, value);
  else if (key == "train.target_acc") train.target_acc = parse_double(key, value);
  else if (key == "train.beta1") train.beta1 = parse_double(key, value);
  else if (key == "train.beta2") train.beta2 = parse_double(key, value);
  else if (key == "train.eps") train.eps = parse_double(key, value);
  else throw ConfigError("unknown config key: " + key);
}

RunConfig RunConfig::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(file.string() + ":" + std::to_string(lineno) +
                        ": expected key = value");
    cfg.apply_override(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

std::string RunConfig::resolved() const {
  std::ostringstream s;
  s << "model.num_blocks = " << model.num_blocks << "\n"
    << "model.d = " << model.d << "\n"
    << "model.num_heads = " << model.num_heads << "\n"
    << "model.c = " << model.c << "\n"
    << "model.dcn_channels = " << join(model.dcn_channels) << "\n"
    << "model.kernel_size = " << model.kernel_size << "\n"
    << "model.mask_ratio = " << model.mask_ratio << "\n"
    << "model.mask_phase = " << model.mask_phase << "\n"
    << "model.mask_per_head = " << (model.mask_per_head ? "true" : "false") << "\n"
    << "model.mask_scope = "
    << (model.mask_scope == MaskScope::kPerHead ? "per_head" : "block_output")
    << "\n"
    << "model.self_distill_n = " << model.self_distill_n << "\n"
    << "model.alpha = " << model.alpha << "\n"
    << "model.beta = " << model.beta << "\n"
    << "model.ffn_expansion = " << model.ffn_expansion << "\n"
    << "model.pooling_residual = " << (model.pooling_residual ? "true" : "false")
    << "\n"
    << "model.normalize_f = " << (model.normalize_f ? "true" : "false") << "\n"
    << "model.num_classes = " << model.num_classes << "\n"
    << "model.seq_len = " << model.seq_len << "\n"
    << "model.seed = " << model.seed << "\n"
    << "train.lr = " << train.lr << "\n"
    << "train.batch_size = " << train.batch_size << "\n"
    << "train.epochs = " << train.epochs << "\n"
    << "train.eval_every = " << train.eval_every << "\n"
    << "train.target_acc = " << train.target_acc << "\n"
    << "train.beta1 = " << train.beta1 << "\n"
    << "train.beta2 = " << train.beta2 << "\n"
    << "train.eps = " << train.eps << "\n";
  return s.str();
}

}  // namespace fmla
