#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dzsl/tensor.hpp"

namespace dzsl {

// Fraction correct per class, for classes in `classes` that have at least one
// sample among `labels`.
std::map<ClassId, double> per_class_accuracy(std::span<const ClassId> preds,
                                             std::span<const ClassId> labels,
                                             std::span<const ClassId> classes);

// Mean of per_class_accuracy over classes with samples.
double per_class_top1(std::span<const ClassId> preds, std::span<const ClassId> labels,
                      std::span<const ClassId> classes);

// 2us / (u + s), zero when both are zero.
double harmonic_mean(double unseen_acc, double seen_acc);

struct FnrTnr {
  double fnr = 0.0;
  double tnr = 0.0;
};

// For each target FNR, theta is calibrated on the seen degrees and TNR is the
// fraction of unseen degrees strictly below it.
std::vector<FnrTnr> tnr_at_fnr(std::span<const double> seen_degrees,
                               std::span<const double> unseen_degrees,
                               std::span<const double> fnr_grid);

// Target FNRs 0.05, 0.07, ..., 0.19.
std::vector<double> default_fnr_grid();

struct EvalReport {
  std::map<ClassId, double> per_class;
  double acc = 0.0;
  std::optional<double> acc_seen;
  std::optional<double> acc_unseen;
  std::optional<double> h;
  std::optional<std::vector<FnrTnr>> tnr_at_fnr;

  // Throws InvalidInputError if a rate leaves [0, 1] or h disagrees with its
  // operands.
  void validate() const;
};

// Keys: acc, acc_seen, acc_unseen, h, per_class, tnr_at_fnr. Absent optional
// values are written as null. Rates are fractions.
std::string report_json(const EvalReport& report);
EvalReport parse_report_json(const std::string& text);

// "fnr,tnr" header then one row per grid point.
std::string curve_csv(std::span<const FnrTnr> curve);

}  // namespace dzsl
