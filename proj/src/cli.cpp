#include "dzsl/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "dzsl/error.hpp"
#include "dzsl/evaluate.hpp"

namespace dzsl::cli {
namespace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config parsing

void reject_unknown(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw InvalidInputError("'" + where + "' must be a JSON object");
  for (const auto& [key, v] : obj.items()) {
    if (!allowed.count(key)) {
      throw InvalidInputError("unknown key '" + (where.empty() ? key : where + "." + key) + "'");
    }
  }
}

const json& require(const json& obj, const std::string& where, const std::string& key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw InvalidInputError("missing required key '" + where + "." + key + "'");
  return *it;
}

std::size_t get_count(const json& obj, const std::string& where, const std::string& key) {
  const json& v = require(obj, where, key);
  if (!v.is_number_unsigned()) {
    throw InvalidInputError("key '" + where + "." + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

double get_number(const json& obj, const std::string& where, const std::string& key) {
  const json& v = require(obj, where, key);
  if (!v.is_number()) throw InvalidInputError("key '" + where + "." + key + "' must be a number");
  return v.get<double>();
}

std::uint64_t get_seed(const json& obj, const std::string& where) {
  const json& v = require(obj, where, "seed");
  if (!v.is_number_unsigned()) throw InvalidInputError("key '" + where + ".seed' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

SyntheticSpec parse_synthetic(const json& j) {
  const std::string w = "synthetic";
  reject_unknown(j, w,
                 {"seen_classes", "unseen_classes", "samples_per_class", "height", "width", "channels",
                  "semantic_dim", "attributes_per_class", "noise", "jitter", "seed"});
  SyntheticSpec s;
  s.seen_classes = get_count(j, w, "seen_classes");
  s.unseen_classes = get_count(j, w, "unseen_classes");
  s.samples_per_class = get_count(j, w, "samples_per_class");
  s.height = get_count(j, w, "height");
  s.width = get_count(j, w, "width");
  s.channels = get_count(j, w, "channels");
  s.semantic_dim = get_count(j, w, "semantic_dim");
  s.attributes_per_class = get_count(j, w, "attributes_per_class");
  s.noise = get_number(j, w, "noise");
  s.jitter = get_count(j, w, "jitter");
  s.seed = get_seed(j, w);
  s.validate();
  return s;
}

TrainConfig parse_train(const json& j) {
  const std::string w = "train";
  reject_unknown(j, w,
                 {"learning_rate", "epochs", "batch_size", "seed", "lambda", "heads", "hidden_channels",
                  "folds", "diversity_sign", "ddm_hidden"});
  TrainConfig c;
  c.learning_rate = get_number(j, w, "learning_rate");
  c.epochs = get_count(j, w, "epochs");
  c.batch_size = get_count(j, w, "batch_size");
  c.seed = get_seed(j, w);
  c.lambda = get_number(j, w, "lambda");
  c.heads = get_count(j, w, "heads");
  c.hidden_channels = get_count(j, w, "hidden_channels");
  c.folds = get_count(j, w, "folds");
  const json& sign = require(j, w, "diversity_sign");
  if (!sign.is_number_integer()) throw InvalidInputError("key 'train.diversity_sign' must be +1 or -1");
  c.diversity_sign = sign.get<int>();
  c.ddm_hidden = get_count(j, w, "ddm_hidden");
  c.validate();
  return c;
}

void check_fnr(double fnr) {
  if (!(fnr > 0.0 && fnr < 1.0)) throw InvalidInputError("fnr must lie strictly between 0 and 1");
}

json synthetic_json(const SyntheticSpec& s) {
  return {{"seen_classes", s.seen_classes},
          {"unseen_classes", s.unseen_classes},
          {"samples_per_class", s.samples_per_class},
          {"height", s.height},
          {"width", s.width},
          {"channels", s.channels},
          {"semantic_dim", s.semantic_dim},
          {"attributes_per_class", s.attributes_per_class},
          {"noise", s.noise},
          {"jitter", s.jitter},
          {"seed", s.seed}};
}

json train_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"epochs", c.epochs},
          {"batch_size", c.batch_size},       {"seed", c.seed},
          {"lambda", c.lambda},               {"heads", c.heads},
          {"hidden_channels", c.hidden_channels}, {"folds", c.folds},
          {"diversity_sign", c.diversity_sign},   {"ddm_hidden", c.ddm_hidden}};
}

// ---------------------------------------------------------------------------
// Output helpers

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("failed writing '" + path + "'");
}

std::string values_csv(std::span<const double> values) {
  std::string out;
  for (double v : values) out += fmt(v) + "\n";
  return out;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

// ---------------------------------------------------------------------------
// Command options

struct Options {
  std::string config, bundle, out, model, zsl, gzsl, ddm, report, curves, attn;
  std::string seen_degrees, unseen_degrees;
  std::size_t attn_sample = 0;
  bool no_ddm = false;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr, lambda, fnr;
  std::optional<std::size_t> epochs, batch_size, heads, folds;
  std::optional<int> diversity_sign;
  std::vector<double> fnr_grid;
};

std::string pick(const std::string& flag, const std::optional<std::string>& from_config, const char* name) {
  if (!flag.empty()) return flag;
  if (from_config) return *from_config;
  throw InvalidInputError(std::string("missing --") + name);
}

std::string pick_optional(const std::string& flag, const std::optional<std::string>& from_config) {
  if (!flag.empty()) return flag;
  return from_config.value_or("");
}

RunConfig config_of(const Options& o) {
  return o.config.empty() ? RunConfig{} : load_run_config(o.config);
}

TrainConfig train_config(const Options& o, const RunConfig& rc) {
  TrainConfig c = rc.train.value_or(TrainConfig{});
  if (o.seed) c.seed = *o.seed;
  if (o.lr) c.learning_rate = *o.lr;
  if (o.lambda) c.lambda = *o.lambda;
  if (o.epochs) c.epochs = *o.epochs;
  if (o.batch_size) c.batch_size = *o.batch_size;
  if (o.heads) c.heads = *o.heads;
  if (o.folds) c.folds = *o.folds;
  if (o.diversity_sign) c.diversity_sign = *o.diversity_sign;
  c.validate();
  return c;
}

void print_losses(std::ostream& out, std::span<const double> losses) {
  out << "epoch,loss\n";
  for (std::size_t e = 0; e < losses.size(); ++e) out << (e + 1) << ',' << fmt(losses[e]) << '\n';
}

void finish_report(const EvalReport& report, const std::string& path, std::ostream& out) {
  report.validate();
  const std::string text = report_json(report);
  if (path.empty()) {
    out << text;
    return;
  }
  write_text(path, text);
  // Human-readable summary in percent; the file keeps fractions.
  auto pct = [&](const char* name, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s %.1f%%\n", name, 100.0 * v);
    out << buf;
  };
  pct("ACC", report.acc);
  if (report.acc_unseen) pct("ACC_unseen", *report.acc_unseen);
  if (report.acc_seen) pct("ACC_seen", *report.acc_seen);
  if (report.h) pct("H", *report.h);
  if (report.tnr_at_fnr) {
    for (const auto& p : *report.tnr_at_fnr) {
      char buf[80];
      std::snprintf(buf, sizeof buf, "TNR@FNR=%.0f%% %.1f%%\n", 100.0 * p.fnr, 100.0 * p.tnr);
      out << buf;
    }
  }
}

int cmd_gen_synth(const Options& o, std::ostream&) {
  const RunConfig rc = config_of(o);
  SyntheticSpec spec = rc.synthetic.value_or(SyntheticSpec{});
  if (o.seed) spec.seed = *o.seed;
  save_bundle(gen_synthetic(spec), pick(o.out, rc.paths.bundle, "out"));
  return 0;
}

int cmd_train_setnet(const Options& o, std::ostream& out) {
  const RunConfig rc = config_of(o);
  const TrainConfig cfg = train_config(o, rc);
  const auto bundle = load_bundle(pick(o.bundle, rc.paths.bundle, "bundle"));
  const std::string dest = pick(o.out, rc.paths.setnet, "out");
  const auto result = train_setnet(bundle, cfg);
  save_checkpoint(dest, result.model, cfg);
  print_losses(out, result.epoch_losses);
  return 0;
}

int cmd_train_ddm(const Options& o, std::ostream& out) {
  const RunConfig rc = config_of(o);
  const TrainConfig cfg = train_config(o, rc);
  const auto bundle = load_bundle(pick(o.bundle, rc.paths.bundle, "bundle"));
  const std::string dest = pick(o.out, rc.paths.ddm, "out");
  const auto result = train_ddm(bundle, cfg);
  save_checkpoint(dest, result.ensemble, cfg);
  print_losses(out, result.epoch_losses);
  return 0;
}

int cmd_calibrate(const Options& o, std::ostream& out) {
  const RunConfig rc = config_of(o);
  const double fnr = o.fnr ? *o.fnr : rc.fnr ? *rc.fnr : throw InvalidInputError("missing --fnr");
  check_fnr(fnr);
  auto ckpt = load_ddm_checkpoint(pick(o.ddm, rc.paths.ddm, "ddm"));
  const auto bundle = load_bundle(pick(o.bundle, rc.paths.bundle, "bundle"));
  const auto degrees = calibrate(ckpt.ensemble, bundle, ckpt.config, fnr);
  std::size_t flagged = 0;
  for (double d : degrees) flagged += d < ckpt.ensemble.theta() ? 1 : 0;
  save_checkpoint(pick(o.out, rc.paths.ddm, "out"), ckpt.ensemble, ckpt.config);
  out << "theta," << fmt(ckpt.ensemble.theta()) << '\n'
      << "flagged," << flagged << '\n'
      << "calibration_samples," << degrees.size() << '\n';
  return 0;
}

int cmd_eval_zsl(const Options& o, std::ostream& out) {
  const RunConfig rc = config_of(o);
  const auto model = load_setnet_checkpoint(pick(o.model, rc.paths.zsl, "model")).model;
  const auto bundle = load_bundle(pick(o.bundle, rc.paths.bundle, "bundle"));
  const auto report = evaluate_zsl(model, bundle);
  const std::string attn = pick_optional(o.attn, rc.paths.attn);
  if (!attn.empty()) {
    const auto idx = bundle.unseen_test_indices();
    if (o.attn_sample >= idx.size()) throw IndexError("--attn-sample out of range");
    export_attention(attention_maps(model, bundle.features[idx[o.attn_sample]]), attn);
  }
  finish_report(report, pick_optional(o.report, rc.paths.report), out);
  return 0;
}

int cmd_eval_gzsl(const Options& o, std::ostream& out) {
  const RunConfig rc = config_of(o);
  const auto bundle = load_bundle(pick(o.bundle, rc.paths.bundle, "bundle"));
  const auto zsl = load_setnet_checkpoint(pick(o.zsl, rc.paths.zsl, "zsl")).model;
  const std::string gzsl_path = pick_optional(o.gzsl, rc.paths.gzsl);
  const SetNetModel gzsl = gzsl_path.empty() ? zsl : load_setnet_checkpoint(gzsl_path).model;
  EvalReport report;
  if (o.no_ddm) {
    report = evaluate_gzsl_direct(gzsl, bundle);
  } else {
    auto ddm = load_ddm_checkpoint(pick(o.ddm, rc.paths.ddm, "ddm")).ensemble;
    const GzslSystem sys(std::move(ddm), zsl, gzsl, bundle.unseen_table(), bundle.semantics);
    report = evaluate_gzsl(sys, bundle);
  }
  const std::string attn = pick_optional(o.attn, rc.paths.attn);
  if (!attn.empty()) {
    const auto idx = bundle.test_indices();
    if (o.attn_sample >= idx.size()) throw IndexError("--attn-sample out of range");
    export_attention(attention_maps(gzsl, bundle.features[idx[o.attn_sample]]), attn);
  }
  finish_report(report, pick_optional(o.report, rc.paths.report), out);
  return 0;
}

int cmd_eval_ood(const Options& o, std::ostream& out) {
  const RunConfig rc = config_of(o);
  const auto bundle = load_bundle(pick(o.bundle, rc.paths.bundle, "bundle"));
  const auto ddm = load_ddm_checkpoint(pick(o.ddm, rc.paths.ddm, "ddm")).ensemble;
  std::vector<double> grid = !o.fnr_grid.empty() ? o.fnr_grid : rc.fnr_grid.value_or(default_fnr_grid());
  for (double f : grid) check_fnr(f);
  const auto report = evaluate_ood(ddm, bundle, grid);
  const std::string curves = pick_optional(o.curves, rc.paths.curves);
  if (!curves.empty()) write_text(curves, curve_csv(*report.tnr_at_fnr));
  if (!o.seen_degrees.empty() || !o.unseen_degrees.empty()) {
    const auto deg = ood_degrees(ddm, bundle);
    if (!o.seen_degrees.empty()) write_text(o.seen_degrees, values_csv(deg.seen));
    if (!o.unseen_degrees.empty()) write_text(o.unseen_degrees, values_csv(deg.unseen));
  }
  finish_report(report, pick_optional(o.report, rc.paths.report), out);
  return 0;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw InvalidInputError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(j, "", {"synthetic", "train", "fnr", "fnr_grid", "paths"});
  RunConfig rc;
  if (j.contains("synthetic")) rc.synthetic = parse_synthetic(j["synthetic"]);
  if (j.contains("train")) rc.train = parse_train(j["train"]);
  if (j.contains("fnr")) {
    if (!j["fnr"].is_number()) throw InvalidInputError("key 'fnr' must be a number");
    rc.fnr = j["fnr"].get<double>();
    check_fnr(*rc.fnr);
  }
  if (j.contains("fnr_grid")) {
    if (!j["fnr_grid"].is_array() || j["fnr_grid"].empty()) {
      throw InvalidInputError("key 'fnr_grid' must be a non-empty array");
    }
    std::vector<double> grid;
    for (const auto& v : j["fnr_grid"]) {
      if (!v.is_number()) throw InvalidInputError("key 'fnr_grid' must hold numbers");
      check_fnr(v.get<double>());
      grid.push_back(v.get<double>());
    }
    rc.fnr_grid = std::move(grid);
  }
  if (j.contains("paths")) {
    const json& p = j["paths"];
    reject_unknown(p, "paths", {"bundle", "setnet", "zsl", "gzsl", "ddm", "report", "curves", "attn"});
    auto get = [&](const char* key, std::optional<std::string>& dst) {
      if (!p.contains(key)) return;
      if (!p[key].is_string()) throw InvalidInputError(std::string("key 'paths.") + key + "' must be a string");
      dst = p[key].get<std::string>();
    };
    auto& ps = rc.paths;
    get("bundle", ps.bundle);
    get("setnet", ps.setnet);
    get("zsl", ps.zsl);
    get("gzsl", ps.gzsl);
    get("ddm", ps.ddm);
    get("report", ps.report);
    get("curves", ps.curves);
    get("attn", ps.attn);
  }
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string default_run_config_json() {
  json j = {{"synthetic", synthetic_json(SyntheticSpec{})},
            {"train", train_json(TrainConfig{})},
            {"fnr", 0.11},
            {"fnr_grid", default_fnr_grid()}};
  return j.dump(2) + "\n";
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diverse-attention zero-shot learning with inner-disagreement domain detection"};
  app.name("dzsl");
  app.require_subcommand(1);
  Options o;

  auto common_train = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Run configuration JSON");
    sub->add_option("--bundle", o.bundle, "Dataset bundle");
    sub->add_option("--out", o.out, "Output checkpoint");
    sub->add_option("--seed", o.seed, "Override train.seed");
    sub->add_option("--lr", o.lr, "Override train.learning_rate");
    sub->add_option("--epochs", o.epochs, "Override train.epochs");
    sub->add_option("--batch-size", o.batch_size, "Override train.batch_size");
    sub->add_option("--lambda", o.lambda, "Override train.lambda");
    sub->add_option("--heads", o.heads, "Override train.heads (K)");
    sub->add_option("--folds", o.folds, "Override train.folds (I)");
    sub->add_option("--diversity-sign", o.diversity_sign, "Override train.diversity_sign");
  };

  app.add_subcommand("default-config", "Print the default run configuration");
  auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic dataset bundle");
  gen->add_option("--config", o.config, "Run configuration JSON");
  gen->add_option("--out", o.out, "Output bundle");
  gen->add_option("--seed", o.seed, "Override synthetic.seed");
  common_train(app.add_subcommand("train-setnet", "Train a SetNet model"));
  common_train(app.add_subcommand("train-ddm", "Train the sub-DDM ensemble"));

  auto* cal = app.add_subcommand("calibrate", "Set theta from held-out seen-class samples");
  cal->add_option("--config", o.config, "Run configuration JSON");
  cal->add_option("--ddm", o.ddm, "Input ensemble checkpoint");
  cal->add_option("--bundle", o.bundle, "Dataset bundle");
  cal->add_option("--fnr", o.fnr, "Target false-negative rate");
  cal->add_option("--out", o.out, "Output checkpoint");

  auto* ez = app.add_subcommand("eval-zsl", "Evaluate ZSL accuracy on unseen classes");
  ez->add_option("--config", o.config, "Run configuration JSON");
  ez->add_option("--bundle", o.bundle, "Dataset bundle");
  ez->add_option("--model", o.model, "SetNet checkpoint");
  ez->add_option("--report", o.report, "Report JSON (stdout if omitted)");
  ez->add_option("--attn", o.attn, "Attention CSV for one unseen test sample");
  ez->add_option("--attn-sample", o.attn_sample, "Index among unseen test samples");

  auto* eg = app.add_subcommand("eval-gzsl", "Evaluate GZSL with ID3M routing");
  eg->add_option("--config", o.config, "Run configuration JSON");
  eg->add_option("--bundle", o.bundle, "Dataset bundle");
  eg->add_option("--zsl", o.zsl, "ZSL-SetNet checkpoint");
  eg->add_option("--gzsl", o.gzsl, "GZSL-SetNet checkpoint (defaults to the ZSL model)");
  eg->add_option("--ddm", o.ddm, "Calibrated ensemble checkpoint");
  eg->add_flag("--no-ddm", o.no_ddm, "Classify everything with the GZSL model");
  eg->add_option("--report", o.report, "Report JSON (stdout if omitted)");
  eg->add_option("--attn", o.attn, "Attention CSV for one test sample");
  eg->add_option("--attn-sample", o.attn_sample, "Index among test samples");

  auto* eo = app.add_subcommand("eval-ood", "TNR at a grid of FNR targets");
  eo->add_option("--config", o.config, "Run configuration JSON");
  eo->add_option("--bundle", o.bundle, "Dataset bundle");
  eo->add_option("--ddm", o.ddm, "Ensemble checkpoint");
  eo->add_option("--report", o.report, "Report JSON (stdout if omitted)");
  eo->add_option("--curves", o.curves, "fnr,tnr CSV");
  eo->add_option("--fnr-grid", o.fnr_grid, "Target FNRs")->delimiter(',');
  eo->add_option("--seen-degrees", o.seen_degrees, "Seen test degrees, one per line");
  eo->add_option("--unseen-degrees", o.unseen_degrees, "Unseen test degrees, one per line");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "default-config") {
      out << default_run_config_json();
      return 0;
    }
    if (cmd == "gen-synth") return cmd_gen_synth(o, out);
    if (cmd == "train-setnet") return cmd_train_setnet(o, out);
    if (cmd == "train-ddm") return cmd_train_ddm(o, out);
    if (cmd == "calibrate") return cmd_calibrate(o, out);
    if (cmd == "eval-zsl") return cmd_eval_zsl(o, out);
    if (cmd == "eval-gzsl") return cmd_eval_gzsl(o, out);
    if (cmd == "eval-ood") return cmd_eval_ood(o, out);
    err << "error: unknown command " << cmd << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return 1;
  }
}

}  // namespace dzsl::cli
