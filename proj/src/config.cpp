#include "pmil/config.hpp"

#include <cstdio>
#include <sstream>

#include "pmil/bagio.hpp"
#include "pmil/errors.hpp"

namespace pmil {

const char* head_kind_name(HeadKind k) {
  switch (k) {
    case HeadKind::DSMIL: return "dsmil";
    case HeadKind::GatedAttention: return "gated-attention";
    case HeadKind::MeanPool: return "mean-pool";
  }
  return "?";
}

const char* task_kind_name(TaskKind k) {
  return k == TaskKind::SubtypeBinary ? "subtype-binary" : "multiclass";
}

const char* label_rule_name(LabelRule r) {
  return r == LabelRule::PresenceOR ? "presence-or" : "majority-vote";
}

ExperimentConfig default_config() { return {}; }

void ExperimentConfig::normalize_and_validate() {
  if (mode == TrainMode::ConventionalMIL) model.num_prompts = 0;
  if (mode == TrainMode::PromptMIL && model.num_prompts < 1)
    throw ConfigError("config: prompt mode requires num_prompts >= 1");
  if (backbone_init != "random" && backbone_init != "pretrain-lite")
    throw ConfigError("config: backbone_init must be 'random' or 'pretrain-lite'");
  if (pretrain_steps < 0 || pretrain_batch < 1 || pretrain_lr <= 0)
    throw ConfigError("config: bad pretrain settings");
  model.validate();
  task.validate();
  train.validate();
  if (data_path.empty()) data.validate();
  if (task.kind == TaskKind::Multiclass && data_path.empty() &&
      data.num_classes != task.num_classes)
    throw ConfigError("config: task and data disagree on num_classes");
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += fmt_double(v[i]);
  }
  return out;
}

struct Parser {
  ExperimentConfig cfg;
  std::string section;
  int lineno = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError("config line " + std::to_string(lineno) + ": " + msg);
  }

  int to_int(const std::string& v) const {
    try {
      std::size_t pos = 0;
      const int x = std::stoi(v, &pos);
      if (pos != v.size()) fail("trailing characters in integer '" + v + "'");
      return x;
    } catch (const ConfigError&) {
      throw;
    } catch (...) {
      fail("expected an integer, got '" + v + "'");
    }
  }

  std::uint64_t to_u64(const std::string& v) const {
    try {
      std::size_t pos = 0;
      const std::uint64_t x = std::stoull(v, &pos);
      if (pos != v.size()) fail("trailing characters in integer '" + v + "'");
      return x;
    } catch (const ConfigError&) {
      throw;
    } catch (...) {
      fail("expected an unsigned integer, got '" + v + "'");
    }
  }

  double to_double(const std::string& v) const {
    try {
      std::size_t pos = 0;
      const double x = std::stod(v, &pos);
      if (pos != v.size()) fail("trailing characters in number '" + v + "'");
      return x;
    } catch (const ConfigError&) {
      throw;
    } catch (...) {
      fail("expected a number, got '" + v + "'");
    }
  }

  std::vector<double> to_list(const std::string& v) const {
    std::vector<double> out;
    std::string item;
    std::istringstream ss(v);
    while (std::getline(ss, item, ',')) out.push_back(to_double(item));
    if (out.empty()) fail("expected a comma-separated list, got '" + v + "'");
    return out;
  }

  void assign(const std::string& key, const std::string& value) {
    if (section == "experiment") {
      if (key == "mode") {
        if (value == "prompt") cfg.mode = TrainMode::PromptMIL;
        else if (value == "conventional") cfg.mode = TrainMode::ConventionalMIL;
        else if (value == "full") cfg.mode = TrainMode::FullFineTune;
        else fail("unknown mode '" + value + "'");
      } else if (key == "out") {
        cfg.out_dir = value;
      } else if (key == "backbone_init") {
        cfg.backbone_init = value;
      } else if (key == "pretrain_steps") {
        cfg.pretrain_steps = to_int(value);
      } else if (key == "pretrain_batch") {
        cfg.pretrain_batch = to_int(value);
      } else if (key == "pretrain_lr") {
        cfg.pretrain_lr = to_double(value);
      } else {
        fail("unknown key '" + key + "' in [experiment]");
      }
    } else if (section == "model") {
      if (key == "image_size") cfg.model.image_size = to_int(value);
      else if (key == "patch_size") cfg.model.patch_size = to_int(value);
      else if (key == "channels") cfg.model.channels = to_int(value);
      else if (key == "embed_dim") cfg.model.embed_dim = to_int(value);
      else if (key == "num_layers") cfg.model.num_layers = to_int(value);
      else if (key == "num_heads") cfg.model.num_heads = to_int(value);
      else if (key == "mlp_ratio") cfg.model.mlp_ratio = to_double(value);
      else if (key == "num_prompts") cfg.model.num_prompts = to_int(value);
      else fail("unknown key '" + key + "' in [model]");
    } else if (section == "head") {
      if (key == "kind") {
        if (value == "dsmil") cfg.head_kind = HeadKind::DSMIL;
        else if (value == "gated-attention") cfg.head_kind = HeadKind::GatedAttention;
        else if (value == "mean-pool") cfg.head_kind = HeadKind::MeanPool;
        else fail("unknown head kind '" + value + "'");
      } else {
        fail("unknown key '" + key + "' in [head]");
      }
    } else if (section == "task") {
      if (key == "kind") {
        if (value == "subtype-binary") cfg.task.kind = TaskKind::SubtypeBinary;
        else if (value == "multiclass") cfg.task.kind = TaskKind::Multiclass;
        else fail("unknown task kind '" + value + "'");
      } else if (key == "num_classes") {
        cfg.task.num_classes = to_int(value);
      } else {
        fail("unknown key '" + key + "' in [task]");
      }
    } else if (section == "train") {
      if (key == "instance_batch") cfg.train.instance_batch = to_int(value);
      else if (key == "epochs") cfg.train.epochs = to_int(value);
      else if (key == "optimizer") {
        if (value == "adamw") cfg.train.optimizer = OptimKind::AdamW;
        else if (value == "adam") cfg.train.optimizer = OptimKind::Adam;
        else fail("unknown optimizer '" + value + "'");
      } else if (key == "base_lr") cfg.train.base_lr = to_double(value);
      else if (key == "weight_decay") cfg.train.weight_decay = to_double(value);
      else if (key == "eta_min") cfg.train.eta_min = to_double(value);
      else if (key == "t_max") cfg.train.t_max = to_int(value);
      else if (key == "seed") cfg.train.seed = to_u64(value);
      else if (key == "precision") {
        if (value == "f64") cfg.train.precision = DType::F64;
        else if (value == "f32") cfg.train.precision = DType::F32;
        else fail("unknown precision '" + value + "'");
      } else {
        fail("unknown key '" + key + "' in [train]");
      }
    } else if (section == "data") {
      if (key == "path") cfg.data_path = value;
      else if (key == "num_classes") cfg.data.num_classes = to_int(value);
      else if (key == "n_min") cfg.data.n_min = to_int(value);
      else if (key == "n_max") cfg.data.n_max = to_int(value);
      else if (key == "image_size") cfg.data.image_size = to_int(value);
      else if (key == "channels") cfg.data.channels = to_int(value);
      else if (key == "witness_rate") cfg.data.witness_rate = to_list(value);
      else if (key == "tex_freq") cfg.data.tex_freq = to_list(value);
      else if (key == "tex_angle") cfg.data.tex_angle = to_list(value);
      else if (key == "tex_amplitude") cfg.data.tex_amplitude = to_double(value);
      else if (key == "phase_jitter") cfg.data.phase_jitter = to_double(value);
      else if (key == "noise_level") cfg.data.noise_level = to_double(value);
      else if (key == "label_rule") {
        if (value == "presence-or") cfg.data.label_rule = LabelRule::PresenceOR;
        else if (value == "majority-vote") cfg.data.label_rule = LabelRule::MajorityVote;
        else fail("unknown label rule '" + value + "'");
      } else if (key == "train_bags") cfg.data.train_bags = to_int(value);
      else if (key == "val_bags") cfg.data.val_bags = to_int(value);
      else if (key == "test_bags") cfg.data.test_bags = to_int(value);
      else if (key == "seed") cfg.data.seed = to_u64(value);
      else fail("unknown key '" + key + "' in [data]");
    } else {
      fail("key outside any known section");
    }
  }
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  Parser p;
  std::istringstream ss(text);
  std::string raw;
  while (std::getline(ss, raw)) {
    ++p.lineno;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') p.fail("unterminated section header");
      p.section = trim(line.substr(1, line.size() - 2));
      if (p.section != "experiment" && p.section != "model" && p.section != "head" &&
          p.section != "task" && p.section != "train" && p.section != "data")
        p.fail("unknown section [" + p.section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) p.fail("expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) p.fail("empty key");
    p.assign(key, value);
  }
  return p.cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  return parse_config(read_text_file(path));
}

std::string to_ini(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "[experiment]\n";
  os << "mode = " << train_mode_name(c.mode) << "\n";
  os << "out = " << c.out_dir << "\n";
  os << "backbone_init = " << c.backbone_init << "\n";
  os << "pretrain_steps = " << c.pretrain_steps << "\n";
  os << "pretrain_batch = " << c.pretrain_batch << "\n";
  os << "pretrain_lr = " << fmt_double(c.pretrain_lr) << "\n";
  os << "\n[model]\n";
  os << "image_size = " << c.model.image_size << "\n";
  os << "patch_size = " << c.model.patch_size << "\n";
  os << "channels = " << c.model.channels << "\n";
  os << "embed_dim = " << c.model.embed_dim << "\n";
  os << "num_layers = " << c.model.num_layers << "\n";
  os << "num_heads = " << c.model.num_heads << "\n";
  os << "mlp_ratio = " << fmt_double(c.model.mlp_ratio) << "\n";
  os << "num_prompts = " << c.model.num_prompts << "\n";
  os << "\n[head]\n";
  os << "kind = " << head_kind_name(c.head_kind) << "\n";
  os << "\n[task]\n";
  os << "kind = " << task_kind_name(c.task.kind) << "\n";
  os << "num_classes = " << c.task.num_classes << "\n";
  os << "\n[train]\n";
  os << "instance_batch = " << c.train.instance_batch << "\n";
  os << "epochs = " << c.train.epochs << "\n";
  os << "optimizer = " << (c.train.optimizer == OptimKind::AdamW ? "adamw" : "adam") << "\n";
  os << "base_lr = " << fmt_double(c.train.base_lr) << "\n";
  os << "weight_decay = " << fmt_double(c.train.weight_decay) << "\n";
  os << "eta_min = " << fmt_double(c.train.eta_min) << "\n";
  os << "t_max = " << c.train.t_max << "\n";
  os << "seed = " << c.train.seed << "\n";
  os << "precision = " << dtype_name(c.train.precision) << "\n";
  os << "\n[data]\n";
  os << "path = " << c.data_path << "\n";
  os << "num_classes = " << c.data.num_classes << "\n";
  os << "n_min = " << c.data.n_min << "\n";
  os << "n_max = " << c.data.n_max << "\n";
  os << "image_size = " << c.data.image_size << "\n";
  os << "channels = " << c.data.channels << "\n";
  os << "witness_rate = " << fmt_list(c.data.witness_rate) << "\n";
  os << "tex_freq = " << fmt_list(c.data.tex_freq) << "\n";
  os << "tex_angle = " << fmt_list(c.data.tex_angle) << "\n";
  os << "tex_amplitude = " << fmt_double(c.data.tex_amplitude) << "\n";
  os << "phase_jitter = " << fmt_double(c.data.phase_jitter) << "\n";
  os << "noise_level = " << fmt_double(c.data.noise_level) << "\n";
  os << "label_rule = " << label_rule_name(c.data.label_rule) << "\n";
  os << "train_bags = " << c.data.train_bags << "\n";
  os << "val_bags = " << c.data.val_bags << "\n";
  os << "test_bags = " << c.data.test_bags << "\n";
  os << "seed = " << c.data.seed << "\n";
  return os.str();
}

}  // namespace pmil
