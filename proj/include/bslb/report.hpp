#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "bslb/experiment.hpp"

namespace bslb {

inline constexpr const char* kRecordsHeader =
    "point_id,model_kind,sample_count,layer,k,klrp,softmax_rob,attack_succeeded,clean_pred,adv_pred,"
    "true_label";
inline constexpr int kHistogramBins = 20;

std::string record_csv_line(const RobustnessRecord& r);
void write_records_csv(std::ostream& out, std::span<const RobustnessRecord> records);
/// Inverse of write_records_csv; FormatError on a bad header or row.
std::vector<RobustnessRecord> read_records_csv(std::istream& in);
std::vector<RobustnessRecord> load_records_csv(const std::filesystem::path& path);

struct HistogramRow {
  ModelKind model_kind = ModelKind::deterministic;
  std::size_t sample_count = 1;
  int layer = 0;
  Index k = 0;
  int bin = 0;
  double low = 0.0;
  double high = 0.0;
  std::size_t count = 0;
};

/// k-LRP robustness histogram per (model, N, layer, k) group: equal bins on
/// [0, 1], the last one closed.
std::vector<HistogramRow> klrp_histograms(std::span<const RobustnessRecord> records,
                                          int bins = kHistogramBins);

struct ReportOptions {
  int scatter_layer = 2;  // pre-softmax layer of the default architecture
  Index scatter_k = 100;
};

/// Copy of `records` with klrp and klrp_alternate swapped.
std::vector<RobustnessRecord> alternate_mode(std::span<const RobustnessRecord> records);

/// Fills klrp_alternate from the klrp column of `alternate`, which must list
/// the same cells in the same order (FormatError otherwise).
void merge_alternate(std::span<RobustnessRecord> records,
                     std::span<const RobustnessRecord> alternate);

/// Writes records.csv, histograms.csv, scatter.csv, summary.csv and
/// gaps.csv into `dir` (created if missing), plus records_alternate.csv and
/// summary_alternate.csv scored under the other Bayesian robustness mode.
void emit_report(std::span<const RobustnessRecord> records, const std::filesystem::path& dir,
                 const ReportOptions& options = {});

}  // namespace bslb
