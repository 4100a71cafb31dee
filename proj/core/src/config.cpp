#include "retinamatch/config.hpp"

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace retina {

namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

// Cuts a trailing # comment, honoring quoted strings.
std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_str) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_str = false;
      }
    } else if (c == '"') {
      in_str = true;
    } else if (c == '#') {
      return line.substr(0, i);
    }
  }
  return line;
}

[[noreturn]] void fail(int line, const std::string& msg) {
  throw ConfigError("config line " + std::to_string(line) + ": " + msg);
}

ConfigValue parse_value(const std::string& raw, int line) {
  ConfigValue v;
  v.line = line;
  if (!raw.empty() && raw.front() == '"') {
    std::string out;
    size_t i = 1;
    for (; i < raw.size(); ++i) {
      const char c = raw[i];
      if (c == '\\') {
        if (i + 1 >= raw.size()) fail(line, "dangling escape in string");
        const char e = raw[++i];
        if (e == 'n')
          out += '\n';
        else if (e == 't')
          out += '\t';
        else if (e == '"' || e == '\\')
          out += e;
        else
          fail(line, std::string("unsupported escape \\") + e);
      } else if (c == '"') {
        break;
      } else {
        out += c;
      }
    }
    if (i >= raw.size() || raw[i] != '"') fail(line, "unterminated string");
    if (!trim(raw.substr(i + 1)).empty()) fail(line, "trailing characters after string");
    v.kind = ConfigValue::Kind::String;
    v.s = out;
    return v;
  }
  if (raw == "true" || raw == "false") {
    v.kind = ConfigValue::Kind::Bool;
    v.b = raw == "true";
    return v;
  }
  bool integral = !raw.empty();
  for (size_t i = 0; i < raw.size(); ++i) {
    const char c = raw[i];
    if (i == 0 && (c == '+' || c == '-')) {
      if (raw.size() == 1) integral = false;
      continue;
    }
    if (!std::isdigit(static_cast<unsigned char>(c))) {
      integral = false;
      break;
    }
  }
  if (integral) {
    try {
      v.kind = ConfigValue::Kind::Int;
      v.i = std::stoll(raw);
      return v;
    } catch (const std::out_of_range&) {
      fail(line, "integer out of range: " + raw);
    }
  }
  char* end = nullptr;
  const double d = std::strtod(raw.c_str(), &end);
  if (end && *end == '\0' && end != raw.c_str()) {
    v.kind = ConfigValue::Kind::Float;
    v.f = d;
    return v;
  }
  fail(line, "cannot parse value: " + raw);
}

[[noreturn]] void bad_key(const std::string& section, const std::string& key, int line) {
  throw ConfigError("config line " + std::to_string(line) + ": unknown key '" + key +
                    "' in section [" + section + "]");
}

double want_float(const ConfigValue& v, const std::string& key) {
  if (v.kind == ConfigValue::Kind::Float) return v.f;
  if (v.kind == ConfigValue::Kind::Int) return double(v.i);
  throw ConfigError("config line " + std::to_string(v.line) + ": key '" + key +
                    "' expects a number");
}

int64_t want_int(const ConfigValue& v, const std::string& key) {
  if (v.kind == ConfigValue::Kind::Int) return v.i;
  throw ConfigError("config line " + std::to_string(v.line) + ": key '" + key +
                    "' expects an integer");
}

bool want_bool(const ConfigValue& v, const std::string& key) {
  if (v.kind == ConfigValue::Kind::Bool) return v.b;
  throw ConfigError("config line " + std::to_string(v.line) + ": key '" + key +
                    "' expects true or false");
}

std::string want_string(const ConfigValue& v, const std::string& key) {
  if (v.kind == ConfigValue::Kind::String) return v.s;
  throw ConfigError("config line " + std::to_string(v.line) + ": key '" + key +
                    "' expects a quoted string");
}

uint64_t want_seed(const ConfigValue& v, const std::string& key) {
  const int64_t i = want_int(v, key);
  if (i < 0)
    throw ConfigError("config line " + std::to_string(v.line) + ": key '" + key +
                      "' must be non-negative");
  return uint64_t(i);
}

void apply_train(const std::string& key, const ConfigValue& v, TrainConfig& t) {
  if (key == "input_size")
    t.input_size = int(want_int(v, key));
  else if (key == "lr")
    t.lr = want_float(v, key);
  else if (key == "beta1")
    t.beta1 = want_float(v, key);
  else if (key == "beta2")
    t.beta2 = want_float(v, key);
  else if (key == "batch_size")
    t.batch_size = int(want_int(v, key));
  else if (key == "max_epochs")
    t.max_epochs = int(want_int(v, key));
  else if (key == "margin")
    t.margin = want_float(v, key);
  else if (key == "label_sigma")
    t.label_sigma = want_float(v, key);
  else if (key == "clip_norm")
    t.clip_norm = want_float(v, key);
  else if (key == "checkpoint_every")
    t.checkpoint_every = int(want_int(v, key));
  else if (key == "seed")
    t.seed = want_seed(v, key);
  else if (key == "descriptor_dim")
    t.model.descriptor_dim = int(want_int(v, key));
  else if (key == "base_channels")
    t.model.base_channels = int(want_int(v, key));
  else if (key == "out_dir")
    t.out_dir = want_string(v, key);
  else if (key == "augment_prob")
    t.augment.prob = want_float(v, key);
  else if (key == "blur_sigma_max")
    t.augment.blur_sigma_max = want_float(v, key);
  else if (key == "contrast_lo")
    t.augment.contrast.lo = want_float(v, key);
  else if (key == "contrast_hi")
    t.augment.contrast.hi = want_float(v, key);
  else if (key == "illumination")
    t.augment.illumination = want_float(v, key);
  else if (key == "rotation_lo")
    t.sampler.rotation_deg.lo = want_float(v, key);
  else if (key == "rotation_hi")
    t.sampler.rotation_deg.hi = want_float(v, key);
  else if (key == "scale_lo")
    t.sampler.scale.lo = want_float(v, key);
  else if (key == "scale_hi")
    t.sampler.scale.hi = want_float(v, key);
  else if (key == "translation_frac")
    t.sampler.translation_frac = want_float(v, key);
  else if (key == "perspective_frac")
    t.sampler.perspective_frac = want_float(v, key);
  else if (key == "min_overlap")
    t.sampler.min_overlap = want_float(v, key);
  else
    bad_key("train", key, v.line);
}

void apply_pke(const std::string& key, const ConfigValue& v, PkeConfig& p) {
  if (key == "prob_threshold")
    p.prob_threshold = want_float(v, key);
  else if (key == "ratio_threshold")
    p.ratio_threshold = want_float(v, key);
  else if (key == "warmup_epochs")
    p.warmup_epochs = int(want_int(v, key));
  else if (key == "dedup_radius")
    p.dedup_radius = int(want_int(v, key));
  else if (key == "nms_window")
    p.nms_window = int(want_int(v, key));
  else if (key == "nms_threshold")
    p.nms_threshold = want_float(v, key);
  else
    bad_key("pke", key, v.line);
}

void apply_match(const std::string& key, const ConfigValue& v, MatchConfig& m,
                 int& verify_threshold) {
  if (key == "nms_window")
    m.nms_window = int(want_int(v, key));
  else if (key == "nms_threshold")
    m.nms_threshold = want_float(v, key);
  else if (key == "ratio")
    m.ratio = want_float(v, key);
  else if (key == "mutual")
    m.mutual = want_bool(v, key);
  else if (key == "reproj_px")
    m.reproj_px = want_float(v, key);
  else if (key == "seed")
    m.seed = want_seed(v, key);
  else if (key == "verify_threshold")
    verify_threshold = int(want_int(v, key));
  else if (key == "method") {
    const std::string s = want_string(v, key);
    if (s == "lmeds")
      m.method = EstimatorMethod::LeastMedianOfSquares;
    else if (s == "ransac")
      m.method = EstimatorMethod::Ransac;
    else
      throw ConfigError("config line " + std::to_string(v.line) +
                        ": method must be \"lmeds\" or \"ransac\", got \"" + s + "\"");
  } else
    bad_key("match", key, v.line);
}

void apply_metrics(const std::string& key, const ConfigValue& v, MetricParams& m) {
  if (key == "auc_max_threshold")
    m.auc_max_threshold = want_float(v, key);
  else if (key == "mee_threshold")
    m.mee_threshold = want_float(v, key);
  else if (key == "mae_threshold")
    m.mae_threshold = want_float(v, key);
  else
    bad_key("metrics", key, v.line);
}

}  // namespace

ConfigDoc parse_config_text(const std::string& text) {
  ConfigDoc doc;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(strip_comment(line));
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') fail(lineno, "malformed section header: " + t);
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty()) fail(lineno, "empty section name");
      doc.sections[section];
      continue;
    }
    const size_t eq = t.find('=');
    if (eq == std::string::npos) fail(lineno, "expected key = value, got: " + t);
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));
    if (key.empty()) fail(lineno, "empty key");
    if (val.empty()) fail(lineno, "empty value for key '" + key + "'");
    if (section.empty()) fail(lineno, "key '" + key + "' outside any [section]");
    auto& sec = doc.sections[section];
    if (sec.count(key)) fail(lineno, "duplicate key '" + key + "' in [" + section + "]");
    sec[key] = parse_value(val, lineno);
  }
  return doc;
}

ConfigDoc parse_config_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("config: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

void apply_config(const ConfigDoc& doc, RunConfig& cfg) {
  for (const auto& [section, keys] : doc.sections) {
    if (section != "train" && section != "pke" && section != "match" && section != "metrics")
      throw ConfigError("config: unknown section [" + section + "]");
    for (const auto& [key, value] : keys) {
      if (section == "train")
        apply_train(key, value, cfg.train);
      else if (section == "pke")
        apply_pke(key, value, cfg.train.pke);
      else if (section == "match")
        apply_match(key, value, cfg.match, cfg.verify_threshold);
      else
        apply_metrics(key, value, cfg.metrics);
    }
  }
}

void apply_config_file(const std::string& path, RunConfig& cfg) {
  apply_config(parse_config_file(path), cfg);
}

std::string default_config_text() {
  const RunConfig d;
  std::ostringstream os;
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return std::string(buf);
  };
  os << "# Every key with its default. Values here feed the [train]/[pke]/\n"
        "# [match]/[metrics] settings; command-line flags override them.\n\n";
  os << "[train]\n";
  os << "input_size = " << d.train.input_size << "\n";
  os << "lr = " << num(d.train.lr) << "\n";
  os << "beta1 = " << num(d.train.beta1) << "\n";
  os << "beta2 = " << num(d.train.beta2) << "\n";
  os << "batch_size = " << d.train.batch_size << "\n";
  os << "max_epochs = " << d.train.max_epochs << "\n";
  os << "margin = " << num(d.train.margin) << "\n";
  os << "label_sigma = " << num(d.train.label_sigma) << "\n";
  os << "clip_norm = " << num(d.train.clip_norm) << "\n";
  os << "checkpoint_every = " << d.train.checkpoint_every << "\n";
  os << "seed = " << d.train.seed << "\n";
  os << "descriptor_dim = " << d.train.model.descriptor_dim << "\n";
  os << "base_channels = " << d.train.model.base_channels << "\n";
  os << "out_dir = \"" << d.train.out_dir << "\"\n";
  os << "augment_prob = " << num(d.train.augment.prob) << "\n";
  os << "blur_sigma_max = " << num(d.train.augment.blur_sigma_max) << "\n";
  os << "contrast_lo = " << num(d.train.augment.contrast.lo) << "\n";
  os << "contrast_hi = " << num(d.train.augment.contrast.hi) << "\n";
  os << "illumination = " << num(d.train.augment.illumination) << "\n";
  os << "rotation_lo = " << num(d.train.sampler.rotation_deg.lo) << "\n";
  os << "rotation_hi = " << num(d.train.sampler.rotation_deg.hi) << "\n";
  os << "scale_lo = " << num(d.train.sampler.scale.lo) << "\n";
  os << "scale_hi = " << num(d.train.sampler.scale.hi) << "\n";
  os << "translation_frac = " << num(d.train.sampler.translation_frac) << "\n";
  os << "perspective_frac = " << num(d.train.sampler.perspective_frac) << "\n";
  os << "min_overlap = " << num(d.train.sampler.min_overlap) << "\n";
  os << "\n[pke]\n";
  os << "prob_threshold = " << num(d.train.pke.prob_threshold) << "\n";
  os << "ratio_threshold = " << num(d.train.pke.ratio_threshold) << "\n";
  os << "warmup_epochs = " << d.train.pke.warmup_epochs << "\n";
  os << "dedup_radius = " << d.train.pke.dedup_radius << "\n";
  os << "nms_window = " << d.train.pke.nms_window << "\n";
  os << "nms_threshold = " << num(d.train.pke.nms_threshold) << "\n";
  os << "\n[match]\n";
  os << "nms_window = " << d.match.nms_window << "\n";
  os << "nms_threshold = " << num(d.match.nms_threshold) << "\n";
  os << "ratio = " << num(d.match.ratio) << "\n";
  os << "mutual = " << (d.match.mutual ? "true" : "false") << "\n";
  os << "method = \""
     << (d.match.method == EstimatorMethod::LeastMedianOfSquares ? "lmeds" : "ransac") << "\"\n";
  os << "reproj_px = " << num(d.match.reproj_px) << "\n";
  os << "seed = " << d.match.seed << "\n";
  os << "verify_threshold = " << d.verify_threshold << "\n";
  os << "\n[metrics]\n";
  os << "auc_max_threshold = " << num(d.metrics.auc_max_threshold) << "\n";
  os << "mee_threshold = " << num(d.metrics.mee_threshold) << "\n";
  os << "mae_threshold = " << num(d.metrics.mae_threshold) << "\n";
  return os.str();
}

}  // namespace retina
