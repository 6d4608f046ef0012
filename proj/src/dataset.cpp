#include "covtraj/dataset.hpp"

#include "covtraj/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

namespace covtraj::data {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  std::string out(s.substr(b, e - b + 1));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos
                                                                                         : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool is_missing(const std::string& s) {
  return s.empty() || s == "NA" || s == "na" || s == "NaN" || s == "nan" || s == "null";
}

std::string line_prefix(int line) { return "line " + std::to_string(line) + ": "; }

}  // namespace

LongitudinalDataset::LongitudinalDataset(std::vector<std::string> feature_names, std::vector<std::string> subject_ids,
                                         std::vector<Record> records)
    : feature_names_(std::move(feature_names)), subject_ids_(std::move(subject_ids)), records_(std::move(records)) {
  if (feature_names_.empty()) throw ValidationError("dataset has no features");
  const auto p = static_cast<Eigen::Index>(feature_names_.size());
  subject_groups_.assign(subject_ids_.size(), -1);
  std::vector<int> first_line(subject_ids_.size(), 0);
  std::map<std::pair<int, double>, int> seen;
  std::array<int, 2> group_records{0, 0};
  for (const auto& r : records_) {
    const std::string where = r.line > 0 ? line_prefix(r.line) : std::string();
    if (r.subject < 0 || r.subject >= static_cast<int>(subject_ids_.size())) {
      throw ValidationError(where + "record refers to an unknown subject");
    }
    if (r.group != 0 && r.group != 1) throw ValidationError(where + "group must be 0 or 1");
    if (!std::isfinite(r.time)) throw ValidationError(where + "time is not finite");
    if (r.features.size() != p) throw DimensionError(where + "record has the wrong number of features");
    if (!r.features.allFinite()) throw ValidationError(where + "feature values must be finite");
    auto& g = subject_groups_[static_cast<std::size_t>(r.subject)];
    const auto& id = subject_ids_[static_cast<std::size_t>(r.subject)];
    if (g >= 0 && g != r.group) {
      throw ValidationError(where + "subject '" + id + "' appears in both groups (first seen on line " +
                            std::to_string(first_line[static_cast<std::size_t>(r.subject)]) + ")");
    }
    if (g < 0) first_line[static_cast<std::size_t>(r.subject)] = r.line;
    g = r.group;
    auto [it, inserted] = seen.emplace(std::make_pair(r.subject, r.time), r.line);
    if (!inserted) {
      std::ostringstream os;
      os << "duplicate record for subject '" << id << "' at time " << r.time << " on lines " << it->second
         << " and " << r.line;
      throw ValidationError(os.str());
    }
    ++group_records[static_cast<std::size_t>(r.group)];
  }
  for (std::size_t s = 0; s < subject_ids_.size(); ++s) {
    if (subject_groups_[s] < 0) throw ValidationError("subject '" + subject_ids_[s] + "' has no records");
  }
  for (int g = 0; g < 2; ++g) {
    if (group_records[static_cast<std::size_t>(g)] == 0) {
      throw ValidationError("group " + std::to_string(g) + " has no records");
    }
  }
}

LongitudinalDataset parse_csv(std::istream& in, std::vector<std::string>* warnings) {
  std::string line;
  int line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_fields(line);
      break;
    }
  }
  if (header.empty()) throw ValidationError("CSV input is empty");
  if (header.size() < 4 || header[0] != "subject_id" || header[1] != "group" || header[2] != "time") {
    throw ValidationError(line_prefix(line_no) + "header must be subject_id,group,time followed by feature names");
  }
  std::vector<std::string> features(header.begin() + 3, header.end());
  {
    std::set<std::string> names;
    for (const auto& f : features) {
      if (f.empty()) throw ValidationError(line_prefix(line_no) + "empty feature name in header");
      if (!names.insert(f).second) throw ValidationError(line_prefix(line_no) + "duplicate feature name '" + f + "'");
    }
  }
  const auto p = static_cast<Eigen::Index>(features.size());

  std::vector<std::string> subject_ids;
  std::unordered_map<std::string, int> subject_index;
  std::vector<Record> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw ValidationError(line_prefix(line_no) + "expected " + std::to_string(header.size()) + " fields, found " +
                            std::to_string(fields.size()));
    }
    auto missing = std::find_if(fields.begin(), fields.end(), is_missing);
    if (missing != fields.end()) {
      if (missing - fields.begin() == 0) throw ValidationError(line_prefix(line_no) + "missing subject_id");
      if (warnings) {
        warnings->push_back(line_prefix(line_no) + "missing value in column '" +
                            header[static_cast<std::size_t>(missing - fields.begin())] + "'; row dropped");
      }
      continue;
    }
    Record r;
    r.line = line_no;
    if (fields[1] == "0") {
      r.group = 0;
    } else if (fields[1] == "1") {
      r.group = 1;
    } else {
      throw ValidationError(line_prefix(line_no) + "unknown group label '" + fields[1] + "' (expected 0 or 1)");
    }
    if (!parse_double(fields[2], r.time) || !std::isfinite(r.time)) {
      throw ValidationError(line_prefix(line_no) + "time '" + fields[2] + "' is not a number");
    }
    r.features.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
      const auto& f = fields[static_cast<std::size_t>(j + 3)];
      if (!parse_double(f, r.features(j)) || !std::isfinite(r.features(j))) {
        throw ValidationError(line_prefix(line_no) + "value '" + f + "' in column '" +
                              features[static_cast<std::size_t>(j)] + "' is not a finite number");
      }
    }
    auto [it, inserted] = subject_index.emplace(fields[0], static_cast<int>(subject_ids.size()));
    if (inserted) subject_ids.push_back(fields[0]);
    r.subject = it->second;
    records.push_back(std::move(r));
  }
  return LongitudinalDataset(std::move(features), std::move(subject_ids), std::move(records));
}

LongitudinalDataset ingest_csv(const std::filesystem::path& path, std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  return parse_csv(in, warnings);
}

void write_csv(std::ostream& out, const LongitudinalDataset& dataset) {
  out << "subject_id,group,time";
  for (const auto& f : dataset.feature_names()) out << ',' << f;
  out << '\n';
  std::ostringstream row;
  row.precision(17);
  for (const auto& r : dataset.records()) {
    row.str({});
    row << dataset.subject_ids()[static_cast<std::size_t>(r.subject)] << ',' << r.group << ',' << r.time;
    for (Eigen::Index j = 0; j < r.features.size(); ++j) row << ',' << r.features(j);
    out << row.str() << '\n';
  }
}

CovarianceKind parse_covariance_kind(std::string_view name) {
  if (name == "sample") return CovarianceKind::sample;
  if (name == "pearson") return CovarianceKind::pearson;
  if (name == "spearman") return CovarianceKind::spearman;
  throw ValidationError("unknown covariance kind '" + std::string(name) + "' (expected sample, pearson or spearman)");
}

std::string_view to_string(CovarianceKind kind) {
  switch (kind) {
    case CovarianceKind::sample:
      return "sample";
    case CovarianceKind::pearson:
      return "pearson";
    case CovarianceKind::spearman:
      return "spearman";
  }
  return "sample";
}

std::array<stats::GroupSamples, 2> split_by_group(const LongitudinalDataset& dataset,
                                                   std::span<const int> subject_groups) {
  if (subject_groups.size() != static_cast<std::size_t>(dataset.subject_count())) {
    throw DimensionError("split_by_group: one label per subject required");
  }
  std::array<std::map<double, std::vector<const Record*>>, 2> by_time;
  for (const auto& r : dataset.records()) {
    const int g = subject_groups[static_cast<std::size_t>(r.subject)];
    if (g != 0 && g != 1) throw ValidationError("split_by_group: labels must be 0 or 1");
    by_time[static_cast<std::size_t>(g)][r.time].push_back(&r);
  }
  std::array<stats::GroupSamples, 2> out;
  const auto p = static_cast<Eigen::Index>(dataset.feature_count());
  for (std::size_t g = 0; g < 2; ++g) {
    for (const auto& [time, rows] : by_time[g]) {
      Matrix m(static_cast<Eigen::Index>(rows.size()), p);
      for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i]->features.transpose();
      out[g].push_back({time, std::move(m)});
    }
  }
  return out;
}

Matrix column_ranks(const Matrix& samples) {
  const auto n = samples.rows();
  Matrix ranks(n, samples.cols());
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < samples.cols(); ++j) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return samples(a, j) < samples(b, j); });
    for (Eigen::Index i = 0; i < n;) {
      Eigen::Index k = i;
      while (k + 1 < n && samples(order[static_cast<std::size_t>(k + 1)], j) ==
                              samples(order[static_cast<std::size_t>(i)], j)) {
        ++k;
      }
      const double mid = 0.5 * static_cast<double>(i + k) + 1.0;
      for (Eigen::Index m = i; m <= k; ++m) ranks(order[static_cast<std::size_t>(m)], j) = mid;
      i = k + 1;
    }
  }
  return ranks;
}

Matrix dispersion_matrix(const Matrix& samples, CovarianceKind kind) {
  if (kind == CovarianceKind::sample) return stats::sample_covariance(samples);
  Matrix cov = stats::sample_covariance(kind == CovarianceKind::spearman ? column_ranks(samples) : samples);
  const auto p = cov.rows();
  Vector sd = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  Matrix corr = Matrix::Identity(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = i + 1; j < p; ++j) {
      const double denom = sd(i) * sd(j);
      const double r = denom > 0.0 ? std::clamp(cov(i, j) / denom, -1.0, 1.0) : 0.0;
      corr(i, j) = corr(j, i) = r;
    }
  }
  return corr;
}

std::vector<TimepointCovariance> timepoint_covariances(const stats::GroupSamples& samples, CovarianceKind kind,
                                                       double floor, std::vector<std::string>* warnings) {
  std::vector<TimepointCovariance> out;
  for (const auto& tp : samples) {
    if (tp.samples.rows() < 2) {
      if (warnings) {
        std::ostringstream os;
        os << "timepoint " << tp.time << " has " << tp.samples.rows() << " sample(s); dropped";
        warnings->push_back(os.str());
      }
      continue;
    }
    SpdMatrix c = spd::project_to_spd(spd::SymmetricMatrix(dispersion_matrix(tp.samples, kind)), floor);
    out.push_back({tp.time, std::move(c), static_cast<int>(tp.samples.rows())});
  }
  if (out.size() < 2) throw ValidationError("fewer than two timepoints with at least two samples");
  return out;
}

std::vector<TimepointCovariance> per_timepoint_covariances(const LongitudinalDataset& dataset, int group,
                                                           CovarianceKind kind, double floor,
                                                           std::vector<std::string>* warnings) {
  if (group != 0 && group != 1) throw ValidationError("group must be 0 or 1");
  auto split = split_by_group(dataset, dataset.subject_groups());
  return timepoint_covariances(split[static_cast<std::size_t>(group)], kind, floor, warnings);
}

}  // namespace covtraj::data
