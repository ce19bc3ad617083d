#include "dzsl/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <set>

#include "json.hpp"

#include "dzsl/error.hpp"
#include "dzsl/id3m.hpp"

namespace dzsl {

std::map<ClassId, double> per_class_accuracy(std::span<const ClassId> preds,
                                             std::span<const ClassId> labels,
                                             std::span<const ClassId> classes) {
  if (preds.size() != labels.size()) {
    throw InvalidInputError("got " + std::to_string(preds.size()) + " predictions for " +
                            std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw InvalidInputError("empty evaluation set");
  const std::set<ClassId> known(classes.begin(), classes.end());
  std::map<ClassId, std::pair<std::size_t, std::size_t>> tally;  // correct, total
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!known.count(labels[i])) {
      throw InvalidInputError("label " + std::to_string(labels[i]) + " is not in the class set");
    }
    auto& [correct, total] = tally[labels[i]];
    ++total;
    if (preds[i] == labels[i]) ++correct;
  }
  std::map<ClassId, double> acc;
  for (const auto& [id, ct] : tally) {
    acc[id] = static_cast<double>(ct.first) / static_cast<double>(ct.second);
  }
  return acc;
}

double per_class_top1(std::span<const ClassId> preds, std::span<const ClassId> labels,
                      std::span<const ClassId> classes) {
  const auto acc = per_class_accuracy(preds, labels, classes);
  double sum = 0.0;
  for (const auto& [id, a] : acc) sum += a;
  return sum / static_cast<double>(acc.size());
}

double harmonic_mean(double unseen_acc, double seen_acc) {
  if (!(unseen_acc >= 0.0 && unseen_acc <= 1.0 && seen_acc >= 0.0 && seen_acc <= 1.0)) {
    throw InvalidInputError("accuracies must lie in [0, 1]");
  }
  if (unseen_acc + seen_acc == 0.0) return 0.0;
  return 2.0 * unseen_acc * seen_acc / (unseen_acc + seen_acc);
}

std::vector<FnrTnr> tnr_at_fnr(std::span<const double> seen_degrees,
                               std::span<const double> unseen_degrees,
                               std::span<const double> fnr_grid) {
  if (seen_degrees.empty() || unseen_degrees.empty()) {
    throw InvalidInputError("tnr_at_fnr needs non-empty seen and unseen degree lists");
  }
  std::vector<FnrTnr> curve;
  for (double fnr : fnr_grid) {
    const double theta = calibrate_theta(seen_degrees, fnr);
    std::size_t flagged = 0;
    for (double d : unseen_degrees) flagged += d < theta ? 1 : 0;
    curve.push_back({fnr, static_cast<double>(flagged) / static_cast<double>(unseen_degrees.size())});
  }
  return curve;
}

std::vector<double> default_fnr_grid() {
  return {0.05, 0.07, 0.09, 0.11, 0.13, 0.15, 0.17, 0.19};
}

void EvalReport::validate() const {
  auto rate = [](double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidInputError(std::string(what) + " outside [0, 1]");
  };
  rate(acc, "acc");
  for (const auto& [id, a] : per_class) rate(a, "per-class accuracy");
  if (acc_seen) rate(*acc_seen, "acc_seen");
  if (acc_unseen) rate(*acc_unseen, "acc_unseen");
  if (h) {
    rate(*h, "h");
    if (!acc_seen || !acc_unseen) throw InvalidInputError("h reported without its operands");
    if (std::abs(*h - harmonic_mean(*acc_unseen, *acc_seen)) > 1e-9) {
      throw InvalidInputError("h does not match the harmonic mean of its operands");
    }
  }
  if (tnr_at_fnr) {
    for (const auto& p : *tnr_at_fnr) {
      rate(p.fnr, "fnr");
      rate(p.tnr, "tnr");
    }
  }
}

std::string report_json(const EvalReport& report) {
  using nlohmann::json;
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json per_class = json::object();
  for (const auto& [id, a] : report.per_class) per_class[std::to_string(id)] = a;
  json curve = nullptr;
  if (report.tnr_at_fnr) {
    curve = json::array();
    for (const auto& p : *report.tnr_at_fnr) curve.push_back({{"fnr", p.fnr}, {"tnr", p.tnr}});
  }
  json j = {{"acc", report.acc},           {"acc_seen", opt(report.acc_seen)},
            {"acc_unseen", opt(report.acc_unseen)}, {"h", opt(report.h)},
            {"per_class", per_class},      {"tnr_at_fnr", curve}};
  return j.dump(2) + "\n";
}

EvalReport parse_report_json(const std::string& text) {
  using nlohmann::json;
  EvalReport r;
  try {
    const json j = json::parse(text);
    r.acc = j.at("acc").get<double>();
    auto opt = [&](const char* key) -> std::optional<double> {
      const auto& v = j.at(key);
      if (v.is_null()) return std::nullopt;
      return v.get<double>();
    };
    r.acc_seen = opt("acc_seen");
    r.acc_unseen = opt("acc_unseen");
    r.h = opt("h");
    for (const auto& [key, v] : j.at("per_class").items()) {
      r.per_class[static_cast<ClassId>(std::stoul(key))] = v.get<double>();
    }
    if (!j.at("tnr_at_fnr").is_null()) {
      std::vector<FnrTnr> curve;
      for (const auto& p : j.at("tnr_at_fnr")) curve.push_back({p.at("fnr").get<double>(), p.at("tnr").get<double>()});
      r.tnr_at_fnr = std::move(curve);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInputError(std::string("malformed report JSON: ") + e.what());
  }
  return r;
}

std::string curve_csv(std::span<const FnrTnr> curve) {
  std::string out = "fnr,tnr\n";
  char buf[64];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.fnr, p.tnr);
    out += buf;
  }
  return out;
}

}  // namespace dzsl
