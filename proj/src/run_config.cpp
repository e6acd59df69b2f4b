#include "cle/run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <functional>
#include <sstream>

#include "cle/io_util.hpp"

namespace cle {

namespace {

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("expected a boolean, got '" + s + "'");
}

std::string show(bool b) { return b ? "true" : "false"; }

struct Entry {
  ConfigKey doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define CLE_NUM(field, key, parse, doc)                                           \
  Entry {                                                                         \
    {key, doc}, [](RunConfig& c, const std::string& v) { c.field = parse(v); },   \
        [](const RunConfig& c) { return format_value(c.field); }                  \
  }

std::string format_value(double v) { return format_double(v); }
std::string format_value(std::size_t v) { return std::to_string(v); }
std::string format_value(bool v) { return show(v); }
std::string format_value(const std::string& v) { return v; }

std::size_t parse_size(const std::string& v) { return static_cast<std::size_t>(parse_u64(v)); }
std::string parse_str(const std::string& v) { return v; }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      Entry{{"model.arch", "stateless | stateful"},
            [](RunConfig& c, const std::string& v) { c.arch = parse_architecture(v); },
            [](const RunConfig& c) { return std::string(to_string(c.arch)); }},
      Entry{{"model.scale", "paper (64x64, published widths) | scaled (16x16, narrow)"},
            [](RunConfig& c, const std::string& v) {
              if (v != "paper" && v != "scaled") throw ConfigError("model.scale must be paper or scaled");
              c.scale = v;
            },
            [](const RunConfig& c) { return c.scale; }},
      CLE_NUM(num_classes, "model.num_classes", parse_size, "class count; 0 takes it from the manifest"),
      CLE_NUM(frame_size, "model.frame_size", parse_size, "input side in pixels; 0 uses the scale's default"),
      CLE_NUM(peephole, "model.peephole", parse_bool, "ConvLSTM peephole connections"),
      CLE_NUM(dropout, "model.dropout", parse_double, "dropout before the stateful head; negative keeps the default"),
      CLE_NUM(manifest, "data.manifest", parse_str, "manifest.csv path"),
      Entry{{"data.split", "cs (cross-subject) | cv (cross-view) | random"},
            [](RunConfig& c, const std::string& v) { c.split = parse_split_rule(v); },
            [](const RunConfig& c) { return std::string(to_string(c.split)); }},
      CLE_NUM(test_fraction, "data.test_fraction", parse_double, "per-class test share for the random split"),
      CLE_NUM(val_fraction, "data.val_fraction", parse_double,
              "per-class validation share carved from train; 0 validates on the test split"),
      CLE_NUM(max_depth, "data.max_depth", parse_double, "depth normalisation divisor"),
      CLE_NUM(margin, "data.margin", parse_double, "relative margin around the foreground crop"),
      CLE_NUM(batch_size, "train.batch_size", parse_size, "0 uses 12 (stateless) or 6 (stateful)"),
      CLE_NUM(clip_len, "train.clip_len", parse_size, "stateful window length"),
      Entry{{"train.bins", "comma-separated reduced lengths"},
            [](RunConfig& c, const std::string& v) { c.bins = parse_size_list(v); },
            [](const RunConfig& c) { return join_sizes(c.bins); }},
      CLE_NUM(epochs, "train.epochs", parse_size, "0 runs to the schedule's end"),
      Entry{{"train.schedule", "paper | constant | cyclical | step | plateau"},
            [](RunConfig& c, const std::string& v) {
              if (v != "paper" && v != "constant" && v != "cyclical" && v != "step" && v != "plateau") {
                throw ConfigError("unknown schedule '" + v + "'");
              }
              c.schedule = v;
            },
            [](const RunConfig& c) { return c.schedule; }},
      CLE_NUM(lr, "train.lr", parse_double, "constant rate; initial rate of the plateau schedule"),
      CLE_NUM(min_lr, "train.min_lr", parse_double, "cyclical lower bound"),
      CLE_NUM(max_lr, "train.max_lr", parse_double, "cyclical upper bound"),
      CLE_NUM(half_cycle, "train.half_cycle", parse_double, "cyclical half period in epochs"),
      CLE_NUM(steps, "train.steps", parse_str, "step table as 'epoch:lr epoch:lr ...'"),
      CLE_NUM(patience, "train.patience", parse_size, "plateau patience in epochs"),
      CLE_NUM(factor, "train.factor", parse_double, "plateau decay factor"),
      CLE_NUM(end_epoch, "train.end_epoch", parse_size, "schedule length for non-paper schedules; 0 is open-ended"),
      CLE_NUM(weight_exponent, "train.weight_exponent", parse_double, "window weight exponent a in (t/T)^a"),
      CLE_NUM(carry_state, "train.carry_state", parse_bool, "carry ConvLSTM state across windows"),
      CLE_NUM(seed, "run.seed", parse_u64, "global seed (CLE_SEED is the fallback)"),
      CLE_NUM(out_dir, "run.out_dir", parse_str, "output directory"),
      CLE_NUM(threads, "run.threads", parse_size, "internal thread cap"),
      Entry{{"run.precision", "float (training runs in single precision)"},
            [](RunConfig& c, const std::string& v) {
              if (v != "float") throw ConfigError("run.precision: only float is supported for training");
              c.precision = v;
            },
            [](const RunConfig& c) { return c.precision; }},
  };
  return table;
}

#undef CLE_NUM

const Entry& find_entry(const std::string& key) {
  for (const auto& e : entries()) {
    if (e.doc.key == key) return e;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& e : entries()) out.push_back(e.doc);
    return out;
  }();
  return keys;
}

void set_key(RunConfig& c, const std::string& key, const std::string& value) {
  const Entry& e = find_entry(key);
  try {
    e.set(c, trim(value));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& ex) {
    throw ConfigError(key + ": " + ex.what());
  }
  c.explicit_keys.insert(key);
}

std::string get_key(const RunConfig& c, const std::string& key) { return find_entry(key).get(c); }

RunConfig parse_run_config(const std::string& ini) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(ini);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config key '" + section + "' is outside a section");
    for (const auto& [name, value] : body) set_key(c, section + "." + name, value.data());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file " + path.string() + " not found");
  try {
    return parse_run_config(read_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string to_ini(const RunConfig& c) {
  std::string out, section;
  for (const auto& e : entries()) {
    const auto dot = e.doc.key.find('.');
    const std::string s = e.doc.key.substr(0, dot);
    if (s != section) {
      out += (section.empty() ? "[" : "\n[") + s + "]\n";
      section = s;
    }
    out += e.doc.key.substr(dot + 1) + " = " + e.get(c) + "\n";
  }
  return out;
}

std::string config_help() {
  const RunConfig defaults;
  std::string out = "Config keys (INI sections [model] [data] [train] [run]), with defaults:\n";
  for (const auto& e : entries()) {
    out += "  " + e.doc.key + " = " + e.get(defaults) + "\n      " + e.doc.doc + "\n";
  }
  return out;
}

ModelConfig model_config(const RunConfig& c, std::size_t manifest_classes) {
  const std::size_t k = c.num_classes ? c.num_classes : manifest_classes;
  ModelConfig m;
  if (c.scale == "scaled") {
    m = c.arch == Architecture::Stateless ? ModelConfig::scaled_stateless(k) : ModelConfig::scaled_stateful(k);
  } else {
    m = c.arch == Architecture::Stateless ? ModelConfig::stateless(k) : ModelConfig::stateful(k);
  }
  if (c.frame_size) m.height = m.width = c.frame_size;
  if (c.explicit_keys.count("model.peephole")) m.peephole = c.peephole;
  if (c.dropout >= 0.0) m.dropout = c.dropout;
  if (c.arch == Architecture::Stateful) m.frames = c.clip_len;
  m.validate();
  return m;
}

ScheduleSpec schedule_spec(const RunConfig& c) {
  ScheduleSpec s;
  if (c.schedule == "paper") {
    return c.arch == Architecture::Stateless ? ScheduleSpec::paper_stateless() : ScheduleSpec::paper_stateful();
  } else if (c.schedule == "constant") {
    s = ScheduleSpec::constant(c.lr);
  } else if (c.schedule == "cyclical") {
    s = ScheduleSpec::cyclical(c.min_lr, c.max_lr, c.half_cycle);
  } else if (c.schedule == "plateau") {
    s = ScheduleSpec::plateau(c.lr, c.patience, c.factor);
  } else {
    std::vector<std::pair<std::size_t, double>> table;
    std::istringstream in(c.steps);
    std::string item;
    while (in >> item) {
      const auto parts = split(item, ':');
      if (parts.size() != 2) throw ConfigError("train.steps: expected epoch:lr, got '" + item + "'");
      table.emplace_back(parse_u64(parts[0]), parse_double(parts[1]));
    }
    s = ScheduleSpec::step_table(table);
  }
  s.end_epoch = c.end_epoch;
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }
  return s;
}

TrainConfig train_config(const RunConfig& c) {
  TrainConfig t = c.arch == Architecture::Stateless ? TrainConfig::stateless_defaults()
                                                    : TrainConfig::stateful_defaults();
  if (c.batch_size) t.batch_size = c.batch_size;
  t.clip_len = c.clip_len;
  t.bins.edges = c.bins;
  t.bins.clip_len = c.clip_len;
  t.bins.validate();
  t.epochs = c.epochs;
  t.schedule = schedule_spec(c);
  t.seed = c.seed;
  t.weight_exponent = c.weight_exponent;
  t.carry_state = c.carry_state;
  t.out_dir = c.out_dir;
  return t;
}

SplitSpec split_spec(const RunConfig& c) {
  SplitSpec s;
  s.rule = c.split;
  s.test_fraction = c.test_fraction;
  s.seed = c.seed;
  return s;
}

PreprocessConfig preprocess_config(const RunConfig& c, std::size_t size) {
  PreprocessConfig p;
  p.size = size;
  p.max_depth = c.max_depth;
  p.margin = c.margin;
  return p;
}

}  // namespace cle
