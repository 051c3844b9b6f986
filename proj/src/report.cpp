#include "bslb/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <tuple>

namespace bslb {

namespace {

std::string num(double v) { return format_number(v); }

std::string group_prefix(ModelKind m, std::size_t n, int layer, Index k) {
  return std::string(to_string(m)) + "," + std::to_string(n) + "," + std::to_string(layer) + "," +
         std::to_string(k);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void close_out(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

ModelKind parse_model(std::string_view s) {
  for (ModelKind m : {ModelKind::deterministic, ModelKind::vi, ModelKind::hmc})
    if (s == to_string(m)) return m;
  throw FormatError("unknown model kind '" + std::string(s) + "'");
}

template <typename T>
T parse_field(std::string_view s) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw FormatError("bad numeric field '" + std::string(s) + "'");
  return v;
}

void write_summary(const std::filesystem::path& path, const ExperimentSummary& summary) {
  auto out = open_out(path);
  out << "model_kind,sample_count,layer,k,count,mean_klrp,mean_softmax_rob,attack_success_rate,"
         "pearson_r,correlation_degenerate\n";
  for (const auto& g : summary.groups)
    out << group_prefix(g.model_kind, g.sample_count, g.layer, g.k) << ',' << g.count << ','
        << num(g.mean_klrp) << ',' << num(g.mean_softmax_rob) << ',' << num(g.attack_success_rate)
        << ',' << (g.pearson_r ? num(*g.pearson_r) : std::string("nan")) << ','
        << (g.pearson_r ? 0 : 1) << '\n';
  close_out(out, path);
}

}  // namespace

std::vector<RobustnessRecord> alternate_mode(std::span<const RobustnessRecord> records) {
  std::vector<RobustnessRecord> out(records.begin(), records.end());
  for (auto& r : out) std::swap(r.klrp, r.klrp_alternate);
  return out;
}

void merge_alternate(std::span<RobustnessRecord> records,
                     std::span<const RobustnessRecord> alternate) {
  if (records.size() != alternate.size())
    throw FormatError("alternate records: " + std::to_string(alternate.size()) + " rows, expected " +
                      std::to_string(records.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& a = alternate[i];
    auto& r = records[i];
    if (a.point_id != r.point_id || a.model_kind != r.model_kind ||
        a.sample_count != r.sample_count || a.layer != r.layer || a.k != r.k)
      throw FormatError("alternate records: row " + std::to_string(i + 1) + " does not line up");
    r.klrp_alternate = a.klrp;
  }
}

std::string record_csv_line(const RobustnessRecord& r) {
  return std::to_string(r.point_id) + "," + group_prefix(r.model_kind, r.sample_count, r.layer, r.k) +
         "," + num(r.klrp) + "," + num(r.softmax_rob) + "," + (r.attack_succeeded ? "1" : "0") + "," +
         std::to_string(r.clean_pred) + "," + std::to_string(r.adv_pred) + "," +
         std::to_string(r.true_label);
}

void write_records_csv(std::ostream& out, std::span<const RobustnessRecord> records) {
  out << kRecordsHeader << '\n';
  for (const auto& r : records) out << record_csv_line(r) << '\n';
}

std::vector<RobustnessRecord> read_records_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kRecordsHeader)
    throw FormatError("records CSV header mismatch");
  std::vector<RobustnessRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string_view> f;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      f.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    if (f.size() != 11)
      throw FormatError("records CSV line " + std::to_string(line_no) + ": expected 11 fields");
    try {
      RobustnessRecord r;
      r.point_id = parse_field<Index>(f[0]);
      r.model_kind = parse_model(f[1]);
      r.sample_count = parse_field<std::size_t>(f[2]);
      r.layer = parse_field<int>(f[3]);
      r.k = parse_field<Index>(f[4]);
      r.klrp = parse_field<double>(f[5]);
      r.klrp_alternate = r.klrp;
      r.softmax_rob = parse_field<double>(f[6]);
      r.attack_succeeded = parse_field<int>(f[7]) != 0;
      r.clean_pred = parse_field<int>(f[8]);
      r.adv_pred = parse_field<int>(f[9]);
      r.true_label = parse_field<int>(f[10]);
      out.push_back(r);
    } catch (const FormatError& e) {
      throw FormatError("records CSV line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<RobustnessRecord> load_records_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_records_csv(in);
}

std::vector<HistogramRow> klrp_histograms(std::span<const RobustnessRecord> records, int bins) {
  if (bins < 1) throw ParameterError("histogram needs at least one bin");
  using Key = std::tuple<ModelKind, std::size_t, int, Index>;
  std::map<Key, std::size_t> slot;
  std::vector<Key> order;
  std::vector<std::vector<std::size_t>> counts;
  for (const auto& r : records) {
    const Key key{r.model_kind, r.sample_count, r.layer, r.k};
    auto [it, inserted] = slot.try_emplace(key, order.size());
    if (inserted) {
      order.push_back(key);
      counts.emplace_back(static_cast<std::size_t>(bins), 0);
    }
    const double v = std::clamp(r.klrp, 0.0, 1.0);
    const int b = std::min(bins - 1, static_cast<int>(std::floor(v * bins)));
    ++counts[it->second][static_cast<std::size_t>(b)];
  }
  std::vector<HistogramRow> out;
  for (std::size_t g = 0; g < order.size(); ++g) {
    for (int b = 0; b < bins; ++b) {
      HistogramRow row;
      std::tie(row.model_kind, row.sample_count, row.layer, row.k) = order[g];
      row.bin = b;
      row.low = static_cast<double>(b) / bins;
      row.high = static_cast<double>(b + 1) / bins;
      row.count = counts[g][static_cast<std::size_t>(b)];
      out.push_back(row);
    }
  }
  return out;
}

void emit_report(std::span<const RobustnessRecord> records, const std::filesystem::path& dir,
                 const ReportOptions& options) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  {
    const auto path = dir / "records.csv";
    auto out = open_out(path);
    write_records_csv(out, records);
    close_out(out, path);
  }
  {
    const auto path = dir / "histograms.csv";
    auto out = open_out(path);
    out << "model_kind,sample_count,layer,k,bin,bin_low,bin_high,count\n";
    for (const auto& h : klrp_histograms(records))
      out << group_prefix(h.model_kind, h.sample_count, h.layer, h.k) << ',' << h.bin << ','
          << num(h.low) << ',' << num(h.high) << ',' << h.count << '\n';
    close_out(out, path);
  }
  {
    const auto path = dir / "scatter.csv";
    auto out = open_out(path);
    out << "model_kind,sample_count,layer,k,point_id,klrp,softmax_rob\n";
    for (const auto& r : records)
      if (r.layer == options.scatter_layer && r.k == options.scatter_k)
        out << group_prefix(r.model_kind, r.sample_count, r.layer, r.k) << ',' << r.point_id << ','
            << num(r.klrp) << ',' << num(r.softmax_rob) << '\n';
    close_out(out, path);
  }
  const auto summary = summarize(records);
  write_summary(dir / "summary.csv", summary);
  {
    const auto path = dir / "gaps.csv";
    auto out = open_out(path);
    out << "model_kind,sample_count,layer,k,deterministic_mean,bayesian_mean,gap,welch_p\n";
    for (const auto& g : summary.gaps)
      out << group_prefix(g.model_kind, g.sample_count, g.layer, g.k) << ','
          << num(g.deterministic_mean) << ',' << num(g.bayesian_mean) << ',' << num(g.gap) << ','
          << num(g.welch_p) << '\n';
    close_out(out, path);
  }

  const auto alternate = alternate_mode(records);
  {
    const auto path = dir / "records_alternate.csv";
    auto out = open_out(path);
    write_records_csv(out, alternate);
    close_out(out, path);
  }
  write_summary(dir / "summary_alternate.csv", summarize(alternate));
}

}  // namespace bslb
