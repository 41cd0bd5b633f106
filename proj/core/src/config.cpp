#include "scinet/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <vector>

#include "scinet/errors.hpp"

namespace scinet {

std::string_view to_string(IdentityForm form) {
  return form == IdentityForm::literal ? "literal" : "self";
}

std::string_view to_string(IclForm form) {
  return form == IclForm::literal ? "literal" : "infonce";
}

std::string_view to_string(EncoderResidual residual) {
  return residual == EncoderResidual::input ? "input" : "query";
}

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  if (image_size < 8) throw ConfigError("data.image_size must be >= 8");
  if (crop_size < 8 || crop_size > image_size) {
    throw ConfigError("data.crop_size must lie in [8, data.image_size]");
  }
  const int64_t align = model.fuse_relu5 ? 16 : 8;
  if (crop_size % align != 0) {
    throw ConfigError("data.crop_size must be divisible by " + std::to_string(align));
  }
  if (!no_icl && grid_size < 2) {
    throw ConfigError("train.grid_size must be >= 2 while the contrastive loss is enabled");
  }
  if (grid_size < 1) throw ConfigError("train.grid_size must be >= 1");
  if (steps < 0) throw ConfigError("train.steps must be >= 0");
  if (!(lr_generator > 0.0) || !std::isfinite(lr_generator)) {
    throw ConfigError("train.lr_generator must be positive");
  }
  if (!(lr_discriminator > 0.0) || !std::isfinite(lr_discriminator)) {
    throw ConfigError("train.lr_discriminator must be positive");
  }
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("train.tau must be positive");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  if (out_dir.empty()) throw ConfigError("train.out_dir must not be empty");
}

namespace {

struct Value {
  enum class Kind { integer, real, boolean, string } kind;
  std::string text;  // unquoted string or the literal token
};

using Setter = std::function<void(TrainConfig&, const Value&)>;
using Getter = std::function<std::string(const TrainConfig&)>;

struct Field {
  std::string section;
  std::string key;
  Setter set;
  Getter get;
};

[[noreturn]] void fail(const std::string& where, const std::string& message) {
  throw ConfigError(where + ": " + message);
}

std::string quote(const std::string& s) {
  std::ostringstream os;
  os << std::quoted(s);
  return os.str();
}

std::string real_text(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  std::string s = os.str();
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

int64_t as_int(const Value& v) {
  if (v.kind != Value::Kind::integer) throw ConfigError("expected an integer, got '" + v.text + "'");
  int64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.text.data(), v.text.data() + v.text.size(), out);
  if (ec != std::errc() || ptr != v.text.data() + v.text.size()) {
    throw ConfigError("integer out of range: '" + v.text + "'");
  }
  return out;
}

uint64_t as_uint(const Value& v) {
  if (v.kind != Value::Kind::integer || v.text.front() == '-') {
    throw ConfigError("expected a non-negative integer, got '" + v.text + "'");
  }
  uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.text.data(), v.text.data() + v.text.size(), out);
  if (ec != std::errc() || ptr != v.text.data() + v.text.size()) {
    throw ConfigError("integer out of range: '" + v.text + "'");
  }
  return out;
}

double as_real(const Value& v) {
  if (v.kind != Value::Kind::integer && v.kind != Value::Kind::real) {
    throw ConfigError("expected a number, got '" + v.text + "'");
  }
  try {
    size_t used = 0;
    double out = std::stod(v.text, &used);
    if (used != v.text.size()) throw ConfigError("malformed number '" + v.text + "'");
    return out;
  } catch (const std::logic_error&) {
    throw ConfigError("malformed number '" + v.text + "'");
  }
}

bool as_bool(const Value& v) {
  if (v.kind != Value::Kind::boolean) throw ConfigError("expected true or false, got '" + v.text + "'");
  return v.text == "true";
}

const std::string& as_string(const Value& v) {
  if (v.kind != Value::Kind::string) throw ConfigError("expected a quoted string, got " + v.text);
  return v.text;
}

#define SCINET_INT(sec, name, member)                                             \
  Field{sec, name, [](TrainConfig& c, const Value& v) { c.member = as_int(v); }, \
        [](const TrainConfig& c) { return std::to_string(c.member); }}
#define SCINET_REAL(sec, name, member)                                             \
  Field{sec, name, [](TrainConfig& c, const Value& v) { c.member = as_real(v); }, \
        [](const TrainConfig& c) { return real_text(c.member); }}
#define SCINET_BOOL(sec, name, member)                                             \
  Field{sec, name, [](TrainConfig& c, const Value& v) { c.member = as_bool(v); }, \
        [](const TrainConfig& c) { return std::string(c.member ? "true" : "false"); }}
#define SCINET_STR(sec, name, member)                                                \
  Field{sec, name, [](TrainConfig& c, const Value& v) { c.member = as_string(v); }, \
        [](const TrainConfig& c) { return quote(c.member); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      SCINET_STR("data", "content_dir", content_dir),
      SCINET_STR("data", "style_dir", style_dir),
      SCINET_INT("data", "image_size", image_size),
      SCINET_INT("data", "crop_size", crop_size),

      SCINET_INT("model", "width_divisor", model.width_divisor),
      SCINET_INT("model", "heads", model.heads),
      SCINET_BOOL("model", "fuse_relu5", model.fuse_relu5),
      Field{"model", "residual",
            [](TrainConfig& c, const Value& v) {
              const auto& s = as_string(v);
              if (s == "query") c.model.residual = EncoderResidual::query;
              else if (s == "input") c.model.residual = EncoderResidual::input;
              else throw ConfigError("expected \"query\" or \"input\", got \"" + s + "\"");
            },
            [](const TrainConfig& c) { return quote(std::string(to_string(c.model.residual))); }},
      SCINET_REAL("model", "epsilon", model.epsilon),
      SCINET_INT("model", "embed_dim", model.embed_dim),
      SCINET_INT("model", "proj_hidden", model.proj_hidden),
      SCINET_INT("model", "proj_dim", model.proj_dim),
      SCINET_STR("model", "vgg_weights", model.vgg_weights),
      SCINET_STR("model", "embedder_script", model.embedder_script),

      SCINET_BOOL("ablation", "no_adv", no_adv),
      SCINET_BOOL("ablation", "no_icl", no_icl),
      Field{"ablation", "no_scin",
            [](TrainConfig& c, const Value& v) { c.model.use_scin = !as_bool(v); },
            [](const TrainConfig& c) { return std::string(c.model.use_scin ? "false" : "true"); }},
      Field{"ablation", "style_encoder",
            [](TrainConfig& c, const Value& v) {
              c.model.style_encoder = parse_style_encoder(as_string(v));
            },
            [](const TrainConfig& c) { return quote(std::string(to_string(c.model.style_encoder))); }},

      SCINET_INT("train", "grid_size", grid_size),
      SCINET_INT("train", "steps", steps),
      SCINET_REAL("train", "lr_generator", lr_generator),
      SCINET_REAL("train", "lr_discriminator", lr_discriminator),
      SCINET_REAL("train", "tau", tau),
      Field{"train", "icl_form",
            [](TrainConfig& c, const Value& v) {
              const auto& s = as_string(v);
              if (s == "infonce") c.icl_form = IclForm::infonce;
              else if (s == "literal") c.icl_form = IclForm::literal;
              else throw ConfigError("expected \"infonce\" or \"literal\", got \"" + s + "\"");
            },
            [](const TrainConfig& c) { return quote(std::string(to_string(c.icl_form))); }},
      Field{"train", "identity_form",
            [](TrainConfig& c, const Value& v) {
              const auto& s = as_string(v);
              if (s == "self") c.identity_form = IdentityForm::self_stylization;
              else if (s == "literal") c.identity_form = IdentityForm::literal;
              else throw ConfigError("expected \"self\" or \"literal\", got \"" + s + "\"");
            },
            [](const TrainConfig& c) { return quote(std::string(to_string(c.identity_form))); }},
      SCINET_INT("train", "checkpoint_every", checkpoint_every),
      SCINET_STR("train", "out_dir", out_dir),
      SCINET_STR("train", "resume", resume),
      Field{"train", "seed", [](TrainConfig& c, const Value& v) { c.seed = as_uint(v); },
            [](const TrainConfig& c) { return std::to_string(c.seed); }},

      SCINET_REAL("loss", "style", weights.style),
      SCINET_REAL("loss", "content", weights.content),
      SCINET_REAL("loss", "identity", weights.identity),
      SCINET_REAL("loss", "adversarial", weights.adversarial),
      SCINET_REAL("loss", "contrastive", weights.contrastive),
      SCINET_REAL("loss", "identity_pixel", weights.identity_pixel),
      SCINET_REAL("loss", "identity_feature", weights.identity_feature),
  };
  return table;
}

#undef SCINET_INT
#undef SCINET_REAL
#undef SCINET_BOOL
#undef SCINET_STR

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

// Drops a trailing comment that is not inside a quoted string.
std::string_view strip_comment(std::string_view line) {
  bool in_string = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (in_string && ch == '\\') {
      ++i;
    } else if (ch == '"') {
      in_string = !in_string;
    } else if (ch == '#' && !in_string) {
      return line.substr(0, i);
    }
  }
  return line;
}

bool looks_integer(std::string_view s) {
  size_t i = (s.front() == '-' || s.front() == '+') ? 1 : 0;
  if (i == s.size()) return false;
  for (; i < s.size(); ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
  }
  return true;
}

Value parse_value(std::string_view raw) {
  if (raw.empty()) throw ConfigError("missing value");
  if (raw.front() == '"') {
    std::istringstream is{std::string(raw)};
    std::string out;
    is >> std::quoted(out);
    if (!is || raw.back() != '"' || raw.size() < 2) throw ConfigError("unterminated string " + std::string(raw));
    std::string rest;
    if (is >> rest) throw ConfigError("trailing text after string " + std::string(raw));
    return {Value::Kind::string, out};
  }
  if (raw == "true" || raw == "false") return {Value::Kind::boolean, std::string(raw)};
  std::string text(raw);
  if (text.front() == '+') text.erase(0, 1);
  if (looks_integer(raw)) return {Value::Kind::integer, text};
  return {Value::Kind::real, text};
}

}  // namespace

TrainConfig parse_config(std::string_view text, const std::string& origin) {
  TrainConfig config;
  std::string section;
  std::set<std::string> seen;
  std::set<std::string> sections;
  for (const auto& f : fields()) sections.insert(f.section);

  size_t line_no = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    const size_t end = std::min(text.find('\n', pos), text.size());
    const std::string_view raw_line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    const std::string where = origin + ":" + std::to_string(line_no);

    const auto line = trim(strip_comment(raw_line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(where, "malformed section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (!sections.count(section)) fail(where, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail(where, "expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) fail(where, "missing key");
    if (section.empty()) fail(where, "key '" + key + "' appears before any [section]");

    const Field* field = nullptr;
    for (const auto& f : fields()) {
      if (f.section == section && f.key == key) field = &f;
    }
    const std::string qualified = section + "." + key;
    if (!field) fail(where, "unknown field " + qualified);
    if (!seen.insert(qualified).second) fail(where, "duplicate field " + qualified);
    try {
      field->set(config, parse_value(trim(line.substr(eq + 1))));
    } catch (const ConfigError& e) {
      fail(where, qualified + ": " + e.what());
    }
  }
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return config;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  TrainConfig config = parse_config(buf.str(), path.string());

  const auto base = path.parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(config.content_dir);
  resolve(config.style_dir);
  resolve(config.out_dir);
  resolve(config.resume);
  resolve(config.model.vgg_weights);
  resolve(config.model.embedder_script);
  return config;
}

std::string to_text(const TrainConfig& config) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) os << "\n";
      section = f.section;
      os << "[" << section << "]\n";
    }
    os << f.key << " = " << f.get(config) << "\n";
  }
  return os.str();
}

uint64_t config_hash(const TrainConfig& config) {
  static const std::set<std::string> hashed = {
      "model.width_divisor", "model.heads",     "model.fuse_relu5",      "model.residual",
      "model.embed_dim",     "model.proj_hidden", "model.proj_dim",
      "ablation.no_adv",     "ablation.no_icl", "ablation.no_scin",      "ablation.style_encoder"};
  uint64_t h = 1469598103934665603ull;
  auto mix = [&](std::string_view s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 1099511628211ull;
    }
  };
  for (const auto& f : fields()) {
    const std::string qualified = f.section + "." + f.key;
    if (!hashed.count(qualified)) continue;
    mix(qualified);
    mix("=");
    mix(f.get(config));
    mix("\n");
  }
  return h;
}

}  // namespace scinet
