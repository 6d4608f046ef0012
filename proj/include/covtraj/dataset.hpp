#pragma once

// Longitudinal two-group data: one record per (subject, time) with a feature
// vector, read from CSV with the header `subject_id,group,time,<features...>`.

#include "covtraj/spd.hpp"
#include "covtraj/stats.hpp"

#include <array>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace covtraj::data {

using spd::Matrix;
using spd::SpdMatrix;
using spd::Vector;

struct Record {
  /// Index into LongitudinalDataset::subject_ids().
  int subject = 0;
  int group = 0;
  double time = 0.0;
  Vector features;
  /// Source line (1-based), 0 when not read from a file.
  int line = 0;
};

class LongitudinalDataset {
 public:
  /// Validates: at least one feature; features finite and of the right length;
  /// one group per subject; no duplicate (subject, time); every subject has a
  /// record; both groups non-empty. Throws ValidationError.
  LongitudinalDataset(std::vector<std::string> feature_names, std::vector<std::string> subject_ids,
                      std::vector<Record> records);

  int feature_count() const { return static_cast<int>(feature_names_.size()); }
  int subject_count() const { return static_cast<int>(subject_ids_.size()); }
  const std::vector<std::string>& feature_names() const { return feature_names_; }
  const std::vector<std::string>& subject_ids() const { return subject_ids_; }
  const std::vector<Record>& records() const { return records_; }
  /// Observed group of each subject.
  const std::vector<int>& subject_groups() const { return subject_groups_; }

 private:
  std::vector<std::string> feature_names_;
  std::vector<std::string> subject_ids_;
  std::vector<Record> records_;
  std::vector<int> subject_groups_;
};

/// Rows with an empty or NA feature value are dropped, each with a
/// line-numbered message appended to `warnings`. Throws ValidationError for a
/// malformed header, a wrong field count, a non-numeric value, a group other
/// than 0/1, duplicate (subject, time) rows (both lines named) or an empty
/// group.
LongitudinalDataset parse_csv(std::istream& in, std::vector<std::string>* warnings = nullptr);
LongitudinalDataset ingest_csv(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);
void write_csv(std::ostream& out, const LongitudinalDataset& dataset);

enum class CovarianceKind { sample, pearson, spearman };

CovarianceKind parse_covariance_kind(std::string_view name);
std::string_view to_string(CovarianceKind kind);

/// Samples of both groups under the given subject labels, one entry per
/// distinct time in increasing order; rows keep record order.
std::array<stats::GroupSamples, 2> split_by_group(const LongitudinalDataset& dataset,
                                                   std::span<const int> subject_groups);

/// Midranks of each column.
Matrix column_ranks(const Matrix& samples);

/// Sample covariance, or Pearson / Spearman correlation, of the rows of
/// `samples`. Constant columns get zero correlation with every other column.
Matrix dispersion_matrix(const Matrix& samples, CovarianceKind kind);

struct TimepointCovariance {
  double time = 0.0;
  SpdMatrix cov;
  int n = 0;
};

/// One projected dispersion matrix per timepoint with at least two samples.
/// Smaller timepoints are dropped with a warning; fewer than two surviving
/// timepoints throws ValidationError.
std::vector<TimepointCovariance> timepoint_covariances(const stats::GroupSamples& samples, CovarianceKind kind,
                                                       double floor = spd::kDefaultSpdFloor,
                                                       std::vector<std::string>* warnings = nullptr);

/// timepoint_covariances for one group under the observed labels.
std::vector<TimepointCovariance> per_timepoint_covariances(const LongitudinalDataset& dataset, int group,
                                                           CovarianceKind kind, double floor = spd::kDefaultSpdFloor,
                                                           std::vector<std::string>* warnings = nullptr);

}  // namespace covtraj::data
