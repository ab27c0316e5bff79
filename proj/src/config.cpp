#include "ffdapt/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "ffdapt/errors.hpp"

namespace ffdapt {

namespace {

std::string trim(const std::string& s) {
  std::size_t begin = 0, end = s.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
  return s.substr(begin, end - begin);
}

int parse_int(const std::string& v, const std::string& where) {
  try {
    std::size_t used = 0;
    const int parsed = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return parsed;
  } catch (const std::exception&) {
    throw ConfigError("config: " + where + " expects an integer, got '" + v + "'");
  }
}

std::int64_t parse_i64(const std::string& v, const std::string& where) {
  try {
    std::size_t used = 0;
    const long long parsed = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return parsed;
  } catch (const std::exception&) {
    throw ConfigError("config: " + where + " expects an integer, got '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& v, const std::string& where) {
  try {
    std::size_t used = 0;
    const unsigned long long parsed = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return parsed;
  } catch (const std::exception&) {
    throw ConfigError("config: " + where + " expects an unsigned integer, got '" + v + "'");
  }
}

double parse_f64(const std::string& v, const std::string& where) {
  try {
    std::size_t used = 0;
    const double parsed = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return parsed;
  } catch (const std::exception&) {
    throw ConfigError("config: " + where + " expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("config: " + where + " expects true or false, got '" + v + "'");
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

void apply(ExperimentConfigFile& c, const std::string& section, const std::string& key,
           const std::string& value) {
  const std::string where = "[" + section + "] " + key;
  if (section == "corpus") {
    if (key == "source") {
      if (value != "synth" && value != "file")
        throw ConfigError("config: " + where + " expects synth or file");
      c.corpus_source = value;
    } else if (key == "path") c.corpus_path = value;
    else if (key == "docs") c.synth.docs = parse_int(value, where);
    else if (key == "sentences_min") c.synth.sentences_min = parse_int(value, where);
    else if (key == "sentences_max") c.synth.sentences_max = parse_int(value, where);
    else if (key == "sentence_len_min") c.synth.sentence_len_min = parse_int(value, where);
    else if (key == "sentence_len_max") c.synth.sentence_len_max = parse_int(value, where);
    else if (key == "common_vocab") c.synth.common_vocab = parse_int(value, where);
    else if (key == "topic_count") c.synth.topic_count = parse_int(value, where);
    else if (key == "topic_vocab") c.synth.topic_vocab = parse_int(value, where);
    else if (key == "topic_fraction") c.synth.topic_fraction = parse_f64(value, where);
    else if (key == "rare_uniques_min") c.synth.rare_uniques_min = parse_int(value, where);
    else if (key == "rare_uniques_max") c.synth.rare_uniques_max = parse_int(value, where);
    else if (key == "seed") c.corpus_seed = parse_u64(value, where);
    else if (key == "holdout_fraction") c.holdout_fraction = parse_f64(value, where);
    else throw ConfigError("config: unknown key " + where);
  } else if (section == "partition") {
    if (key == "kind") c.partition_kind = skew_kind_from_string(value);
    else if (key == "skew_factor") c.skew_factor = parse_f64(value, where);
    else if (key == "rare_threshold") c.rare_threshold = parse_i64(value, where);
    else if (key == "seed") c.partition_seed = parse_u64(value, where);
    else throw ConfigError("config: unknown key " + where);
  } else if (section == "model") {
    if (key == "groups") c.model.num_groups = parse_int(value, where);
    else if (key == "hidden_dim") c.model.hidden_dim = parse_int(value, where);
    else if (key == "vocab_size") c.model.vocab_size = parse_int(value, where);
    else if (key == "min_freq") c.model.min_freq = parse_int(value, where);
    else if (key == "context_radius") c.context_radius = parse_int(value, where);
    else if (key == "init_seed") c.model.init_seed = parse_u64(value, where);
    else throw ConfigError("config: unknown key " + where);
  } else if (section == "schedule") {
    if (key == "max_frozen") c.max_frozen = parse_int(value, where);
    else if (key == "gamma") c.gamma = parse_f64(value, where);
    else if (key == "literal_pseudocode") c.literal_pseudocode = parse_bool(value, where);
    else throw ConfigError("config: unknown key " + where);
  } else if (section == "federation") {
    if (key == "mode") c.mode = mode_from_string(value);
    else if (key == "clients") c.clients = parse_int(value, where);
    else if (key == "rounds") c.rounds = parse_int(value, where);
    else if (key == "local_epochs") c.local_epochs = parse_int(value, where);
    else if (key == "steps_per_epoch") c.steps_per_epoch = parse_int(value, where);
    else if (key == "batch_size") c.batch_size = parse_int(value, where);
    else if (key == "learning_rate") c.learning_rate = parse_f64(value, where);
    else if (key == "mask_rate") c.mask_rate = parse_f64(value, where);
    else if (key == "eval_every") c.eval_every = parse_int(value, where);
    else if (key == "eval_batches") c.eval_batches = parse_int(value, where);
    else if (key == "eval_batch_size") c.eval_batch_size = parse_int(value, where);
    else if (key == "eval_seed") c.eval_seed = parse_u64(value, where);
    else if (key == "master_seed") c.master_seed = parse_u64(value, where);
    else throw ConfigError("config: unknown key " + where);
  } else if (section == "output") {
    if (key == "dir") c.out_dir = value;
    else throw ConfigError("config: unknown key " + where);
  } else {
    throw ConfigError("config: unknown section [" + section + "]");
  }
}

}  // namespace

FederationConfig ExperimentConfigFile::federation_config() const {
  FederationConfig f;
  f.mode = mode;
  f.num_clients = clients;
  f.rounds = rounds;
  f.schedule.num_groups = model.num_groups;
  f.schedule.num_clients = clients;
  f.schedule.rounds = rounds;
  f.schedule.max_frozen = max_frozen;
  f.schedule.gamma = gamma;
  f.schedule.literal_pseudocode = literal_pseudocode;
  f.model = model;
  f.train.learning_rate = learning_rate;
  f.train.local_epochs = local_epochs;
  f.train.batch_size = batch_size;
  f.train.steps_per_epoch = steps_per_epoch;
  f.train.mask_rate = mask_rate;
  f.train.context_radius = context_radius;
  f.eval.batches = eval_batches;
  f.eval.batch_size = eval_batch_size;
  f.eval.context_radius = context_radius;
  f.eval.mask_rate = mask_rate;
  f.eval.seed = eval_seed;
  f.eval_every = eval_every;
  f.holdout_fraction = holdout_fraction;
  f.master_seed = master_seed;
  return f;
}

ExperimentConfigFile parse_config(const std::string& text) {
  ExperimentConfigFile config;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t comment = line.find('#');
    if (comment != std::string::npos) line.erase(comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    if (section.empty())
      throw ConfigError("config line " + std::to_string(line_no) + ": key outside any section");
    apply(config, section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return config;
}

ExperimentConfigFile load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string serialize_config(const ExperimentConfigFile& c) {
  std::ostringstream out;
  out << "[corpus]\n";
  out << "source = " << c.corpus_source << "\n";
  out << "path = " << c.corpus_path << "\n";
  out << "docs = " << c.synth.docs << "\n";
  out << "sentences_min = " << c.synth.sentences_min << "\n";
  out << "sentences_max = " << c.synth.sentences_max << "\n";
  out << "sentence_len_min = " << c.synth.sentence_len_min << "\n";
  out << "sentence_len_max = " << c.synth.sentence_len_max << "\n";
  out << "common_vocab = " << c.synth.common_vocab << "\n";
  out << "topic_count = " << c.synth.topic_count << "\n";
  out << "topic_vocab = " << c.synth.topic_vocab << "\n";
  out << "topic_fraction = " << format_double(c.synth.topic_fraction) << "\n";
  out << "rare_uniques_min = " << c.synth.rare_uniques_min << "\n";
  out << "rare_uniques_max = " << c.synth.rare_uniques_max << "\n";
  out << "seed = " << c.corpus_seed << "\n";
  out << "holdout_fraction = " << format_double(c.holdout_fraction) << "\n";
  out << "\n[partition]\n";
  out << "kind = " << to_string(c.partition_kind) << "\n";
  out << "skew_factor = " << format_double(c.skew_factor) << "\n";
  out << "rare_threshold = " << c.rare_threshold << "\n";
  out << "seed = " << c.partition_seed << "\n";
  out << "\n[model]\n";
  out << "groups = " << c.model.num_groups << "\n";
  out << "hidden_dim = " << c.model.hidden_dim << "\n";
  out << "vocab_size = " << c.model.vocab_size << "\n";
  out << "min_freq = " << c.model.min_freq << "\n";
  out << "context_radius = " << c.context_radius << "\n";
  out << "init_seed = " << c.model.init_seed << "\n";
  out << "\n[schedule]\n";
  out << "max_frozen = " << c.max_frozen << "\n";
  out << "gamma = " << format_double(c.gamma) << "\n";
  out << "literal_pseudocode = " << (c.literal_pseudocode ? "true" : "false") << "\n";
  out << "\n[federation]\n";
  out << "mode = " << to_string(c.mode) << "\n";
  out << "clients = " << c.clients << "\n";
  out << "rounds = " << c.rounds << "\n";
  out << "local_epochs = " << c.local_epochs << "\n";
  out << "steps_per_epoch = " << c.steps_per_epoch << "\n";
  out << "batch_size = " << c.batch_size << "\n";
  out << "learning_rate = " << format_double(c.learning_rate) << "\n";
  out << "mask_rate = " << format_double(c.mask_rate) << "\n";
  out << "eval_every = " << c.eval_every << "\n";
  out << "eval_batches = " << c.eval_batches << "\n";
  out << "eval_batch_size = " << c.eval_batch_size << "\n";
  out << "eval_seed = " << c.eval_seed << "\n";
  out << "master_seed = " << c.master_seed << "\n";
  out << "\n[output]\n";
  out << "dir = " << c.out_dir << "\n";
  return out.str();
}

}  // namespace ffdapt
