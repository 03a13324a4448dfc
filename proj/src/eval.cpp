#include "dfmtl/eval.hpp"

#include "dfmtl/csv.hpp"

#include <spdlog/spdlog.h>

#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace fs = std::filesystem;

namespace dfmtl {

VideoScore aggregate_video(std::string video_id, std::vector<Real> clip_probabilities, int truth) {
  require(!clip_probabilities.empty(), "aggregate_video: no clip probabilities");
  VideoScore s;
  s.video_id = std::move(video_id);
  // Sorted summation keeps the mean independent of clip order.
  std::vector<Real> sorted = clip_probabilities;
  std::sort(sorted.begin(), sorted.end());
  s.aggregated = std::accumulate(sorted.begin(), sorted.end(), Real(0)) / Real(sorted.size());
  s.clip_probabilities = std::move(clip_probabilities);
  s.predicted = s.aggregated >= kDecisionThreshold ? 1 : 0;
  s.truth = truth;
  return s;
}

std::optional<VideoScore> score_video(const Model& model, const Weights& weights, const Video& video,
                                      const ManifestRow& row, int clip_length, int k) {
  std::mt19937_64 unused(0);  // uniform sampling draws nothing
  const auto clips = sample_clip(video, clip_length, SampleMode::uniform, k, 0, unused);
  if (clips.empty()) return std::nullopt;
  std::vector<const LabeledClip*> ptrs;
  for (const auto& c : clips) ptrs.push_back(&c);
  const MatR probs =
      model.inference_predict(weights, stack_clips(ptrs), static_cast<Eigen::Index>(clips.size()));
  std::vector<Real> fake(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) fake[static_cast<std::size_t>(i)] = probs(i, 1);
  return aggregate_video(row.video_id, std::move(fake), binary_label_of(row));
}

Real accuracy(const std::vector<VideoScore>& scores) {
  require(!scores.empty(), "accuracy: no scored videos");
  const auto correct = std::count_if(scores.begin(), scores.end(),
                                     [](const VideoScore& s) { return s.predicted == s.truth; });
  return Real(correct) / Real(scores.size());
}

EvalResult evaluate(const Model& model, const Weights& weights, const std::vector<ManifestRow>& rows,
                    VideoStore& store, int clip_length, int k) {
  EvalResult r;
  for (const auto& row : rows) {
    auto s = score_video(model, weights, store.get(row.frames_dir), row, clip_length, k);
    if (s)
      r.scores.push_back(std::move(*s));
    else
      ++r.excluded;
  }
  if (r.excluded > 0) spdlog::warn("{} video(s) could not be scored and were excluded", r.excluded);
  if (!r.scores.empty()) r.accuracy = accuracy(r.scores);
  return r;
}

std::string join_methods(const std::vector<std::string>& methods) {
  std::string out;
  for (const auto& m : methods) {
    if (m == kOriginal) continue;
    if (!out.empty()) out += ", ";
    out += m;
  }
  return out;
}

CrossManipReport build_report(std::vector<ReportRow> rows) {
  CrossManipReport rep;
  std::vector<std::string> order;
  std::map<std::string, std::vector<Real>> by_regime;
  for (const auto& r : rows) {
    if (!by_regime.count(r.regime)) order.push_back(r.regime);
    by_regime[r.regime].push_back(r.accuracy);
  }
  for (const auto& regime : order) {
    const auto& acc = by_regime[regime];
    if (acc.size() < 2) continue;
    rep.averages.emplace_back(regime, std::accumulate(acc.begin(), acc.end(), Real(0)) / Real(acc.size()));
  }
  rep.rows = std::move(rows);
  return rep;
}

namespace {

std::string fmt_accuracy(Real a) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", a);
  return buf;
}

std::string fmt_percent(Real a) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * a);
  return buf;
}

}  // namespace

void append_report_row(const fs::path& csv_path, const ReportRow& row) {
  const bool fresh = !fs::exists(csv_path) || fs::file_size(csv_path) == 0;
  if (csv_path.has_parent_path()) fs::create_directories(csv_path.parent_path());
  std::ofstream out(csv_path, std::ios::app | std::ios::binary);
  if (!out) throw IngestionError("cannot append to report '" + csv_path.string() + "'");
  if (fresh) out << kReportHeader << '\n';
  out << csv::quote(row.train_methods) << ',' << csv::quote(row.held_out) << ',' << csv::quote(row.regime)
      << ',' << fmt_accuracy(row.accuracy) << '\n';
}

std::vector<ReportRow> read_report_rows(const fs::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw IngestionError("cannot open report '" + csv_path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || (line != kReportHeader && line != std::string(kReportHeader) + "\r"))
    throw IngestionError("report '" + csv_path.string() + "' lacks the header '" + kReportHeader + "'");
  std::vector<ReportRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = csv::split_line(line);
    if (f.size() != 4)
      throw IngestionError("report line " + std::to_string(line_no) + ": expected 4 fields");
    ReportRow r{f[0], f[1], f[2], 0.0};
    try {
      r.accuracy = std::stod(f[3]);
    } catch (const std::exception&) {
      throw IngestionError("report line " + std::to_string(line_no) + ": bad accuracy '" + f[3] + "'");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string format_report(const CrossManipReport& report) {
  std::size_t w_train = 8, w_test = 7, w_type = 16;
  for (const auto& r : report.rows) {
    w_train = std::max(w_train, r.train_methods.size());
    w_test = std::max(w_test, r.held_out.size());
    w_type = std::max(w_type, r.regime.size());
  }
  auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w - std::min(w, s.size()), ' '); };
  std::ostringstream os;
  os << "| " << pad("Train on", w_train) << " | " << pad("Test on", w_test) << " | "
     << pad("Type of training", w_type) << " | Accuracy |\n";
  os << "|" << std::string(w_train + 2, '-') << "|" << std::string(w_test + 2, '-') << "|"
     << std::string(w_type + 2, '-') << "|----------|\n";
  for (const auto& r : report.rows)
    os << "| " << pad(r.train_methods, w_train) << " | " << pad(r.held_out, w_test) << " | "
       << pad(r.regime, w_type) << " | " << pad(fmt_percent(r.accuracy), 8) << " |\n";
  if (!report.averages.empty()) {
    os << "\n| " << pad("Type of training", w_type) << " | Avg. Accuracy |\n";
    os << "|" << std::string(w_type + 2, '-') << "|---------------|\n";
    for (const auto& [regime, avg] : report.averages)
      os << "| " << pad(regime, w_type) << " | " << pad(fmt_percent(avg), 13) << " |\n";
  }
  return os.str();
}

void emit_report(const CrossManipReport& report, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  {
    std::ofstream out(out_dir / "cross_manipulation.csv", std::ios::binary);
    out << kReportHeader << '\n';
    for (const auto& r : report.rows)
      out << csv::quote(r.train_methods) << ',' << csv::quote(r.held_out) << ',' << csv::quote(r.regime)
          << ',' << fmt_accuracy(r.accuracy) << '\n';
  }
  {
    std::ofstream out(out_dir / "averages.csv", std::ios::binary);
    out << kAverageHeader << '\n';
    for (const auto& [regime, avg] : report.averages) out << csv::quote(regime) << ',' << fmt_accuracy(avg) << '\n';
  }
  std::ofstream(out_dir / "report.txt", std::ios::binary) << format_report(report);
}

}  // namespace dfmtl
